"""Tenant-tagged slice traffic: Poisson arrivals, profiles and demand noise."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

Demand = tuple[int, int, int]  # (CO GPP, connectivity units, RDC GPP)

NOISE_TRIALS = 5
HOURS_PER_DAY = 24


@dataclass(frozen=True)
class TenantSpec:
    id: int
    u: float  # Binomial success probability of the demand noise
    v: float  # penalty weight

    def __post_init__(self) -> None:
        if not 0.0 <= self.u <= 1.0:
            raise ValueError(f"tenant {self.id}: u={self.u} outside [0, 1]")
        if self.v < 0:
            raise ValueError(f"tenant {self.id}: negative penalty weight {self.v}")


@dataclass(frozen=True)
class Caps:
    k_c: int = 20
    k_s: int = 10
    k_m: int = 10
    k_e: int = 48


@dataclass(frozen=True)
class SliceProfile:
    """Reference demand of a slice class over the day.

    The peak window is half-open, ``start <= hour < end``.
    """

    name: str
    priority: int
    peak_start: int
    peak_end: int
    peak: Demand
    off_peak: Demand
    by_hour: tuple[Demand, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.priority not in (0, 1):
            raise ValueError(f"priority must be 0 or 1, got {self.priority}")
        for h in (self.peak_start, self.peak_end):
            if not 0 <= h <= HOURS_PER_DAY:
                raise ValueError(f"bad peak hour {h}")
        for d in (self.peak, self.off_peak):
            if len(d) != 3 or any(x < 0 for x in d):
                raise ValueError(f"bad demand triple {d}")
        table = tuple(
            tuple(self.peak) if self.peak_start <= h < self.peak_end else tuple(self.off_peak)
            for h in range(HOURS_PER_DAY)
        )
        object.__setattr__(self, "by_hour", table)

    def check_caps(self, caps: Caps) -> None:
        for d in (self.peak, self.off_peak):
            if d[0] > caps.k_c or d[1] > caps.k_m or d[2] > caps.k_s:
                raise ValueError(f"profile {self.name} demand {d} exceeds caps {caps}")


HIGH_PRIORITY = SliceProfile("high", 1, 9, 19, (20, 5, 5), (15, 5, 5))
LOW_PRIORITY = SliceProfile("low", 0, 16, 22, (10, 10, 10), (5, 5, 5))
DEFAULT_TENANTS = (TenantSpec(0, 0.1, 1.0), TenantSpec(1, 0.9, 0.1))


def clock_hour(t: float) -> int:
    """Hour of day at simulation time ``t`` (episodes start at 00:00)."""
    return int(math.floor(t)) % HOURS_PER_DAY


def profile_demand(profile: SliceProfile, hour: int) -> Demand:
    return profile.by_hour[hour % HOURS_PER_DAY]


def sample_noise(rng: np.random.Generator, tenant: TenantSpec, shared: bool = False) -> Demand:
    """One Binomial(5, u) draw per resource type, or one draw reused for all three."""
    if shared:
        x = int(rng.binomial(NOISE_TRIALS, tenant.u))
        return (x, x, x)
    a, b, c = rng.binomial(NOISE_TRIALS, tenant.u, size=3)
    return (int(a), int(b), int(c))


def effective_demand(reference: Sequence[int], noise: Sequence[int]) -> Demand:
    return (
        max(reference[0] - noise[0], 0),
        max(reference[1] - noise[1], 0),
        max(reference[2] - noise[2], 0),
    )


@dataclass(frozen=True)
class SliceRequest:
    id: int
    arrival: float
    tenant: int
    profile: SliceProfile
    co: int  # index into the topology's sorted CO list
    demand: Demand  # immediate (j_c, j_m, j_s)
    duration: int  # j_e, whole hours
    priority: int  # j_p

    @property
    def j_c(self) -> int:
        return self.demand[0]

    @property
    def j_m(self) -> int:
        return self.demand[1]

    @property
    def j_s(self) -> int:
        return self.demand[2]


@dataclass
class WorkloadConfig:
    n_arrivals: int = 600
    load_erlangs: float = 80.0
    mean_duration_h: float = 20.0
    tenants: tuple[TenantSpec, ...] = DEFAULT_TENANTS
    profiles: tuple[SliceProfile, ...] = (HIGH_PRIORITY, LOW_PRIORITY)
    caps: Caps = Caps()
    shared_noise: bool = False

    def __post_init__(self) -> None:
        if self.n_arrivals <= 0:
            raise ValueError("n_arrivals must be positive")
        if self.load_erlangs <= 0:
            raise ValueError("load must be positive")
        if self.mean_duration_h <= 0:
            raise ValueError("mean duration must be positive")
        if not self.tenants:
            raise ValueError("need at least one tenant")
        for i, t in enumerate(self.tenants):
            if t.id != i:
                raise ValueError("tenant ids must be 0..n_t-1 in order")
        for p in self.profiles:
            p.check_caps(self.caps)

    @property
    def arrival_rate(self) -> float:
        """Poisson rate from the Erlang identity load = rate * mean holding time."""
        return self.load_erlangs / self.mean_duration_h

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "WorkloadConfig":
        kw: dict[str, Any] = {}
        for key in ("n_arrivals", "load_erlangs", "mean_duration_h", "shared_noise"):
            if key in d:
                kw[key] = d[key]
        if "tenants" in d:
            kw["tenants"] = tuple(
                TenantSpec(i, float(t["u"]), float(t["v"])) for i, t in enumerate(d["tenants"])
            )
        if "caps" in d:
            kw["caps"] = Caps(**d["caps"])
        if "profiles" in d:
            base = {p.name: p for p in (HIGH_PRIORITY, LOW_PRIORITY)}
            profiles = []
            for name, over in d["profiles"].items():
                proto = base.get(name)
                fields_ = {
                    "priority": over.get("priority", proto.priority if proto else None),
                    "peak_start": over.get("peak_start", proto.peak_start if proto else None),
                    "peak_end": over.get("peak_end", proto.peak_end if proto else None),
                    "peak": tuple(over.get("peak", proto.peak if proto else ())),
                    "off_peak": tuple(over.get("off_peak", proto.off_peak if proto else ())),
                }
                if any(v is None for v in fields_.values()):
                    raise ValueError(f"profile {name!r} is incomplete")
                profiles.append(SliceProfile(name, **fields_))
            kw["profiles"] = tuple(profiles)
        return cls(**kw)

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_arrivals": self.n_arrivals,
            "load_erlangs": self.load_erlangs,
            "mean_duration_h": self.mean_duration_h,
            "shared_noise": self.shared_noise,
            "tenants": [{"u": t.u, "v": t.v} for t in self.tenants],
            "caps": {"k_c": self.caps.k_c, "k_s": self.caps.k_s, "k_m": self.caps.k_m, "k_e": self.caps.k_e},
            "profiles": {
                p.name: {
                    "priority": p.priority,
                    "peak_start": p.peak_start,
                    "peak_end": p.peak_end,
                    "peak": list(p.peak),
                    "off_peak": list(p.off_peak),
                }
                for p in self.profiles
            },
        }


@dataclass
class ArrivalSchedule:
    requests: list[SliceRequest]
    tenants: tuple[TenantSpec, ...]
    shared_noise: bool = False

    def __len__(self) -> int:
        return len(self.requests)

    @property
    def n(self) -> int:
        return len(self.requests)


def generate_arrivals(rng: np.random.Generator, cfg: WorkloadConfig, n_cos: int) -> ArrivalSchedule:
    n = cfg.n_arrivals
    if n <= 0:
        raise ValueError("n_arrivals must be positive")
    if n_cos <= 0:
        raise ValueError("need at least one CO")
    times = np.cumsum(rng.exponential(1.0 / cfg.arrival_rate, size=n))
    durations = np.maximum(np.ceil(rng.exponential(cfg.mean_duration_h, size=n)), 1).astype(int)
    tenant_ids = rng.integers(len(cfg.tenants), size=n)
    profile_ids = rng.integers(len(cfg.profiles), size=n)
    co_ids = rng.integers(n_cos, size=n)
    u = np.array([t.u for t in cfg.tenants])[tenant_ids]
    if cfg.shared_noise:
        noise = np.repeat(rng.binomial(NOISE_TRIALS, u)[:, None], 3, axis=1)
    else:
        noise = rng.binomial(NOISE_TRIALS, u[:, None], size=(n, 3))

    requests = []
    for i in range(n):
        t = float(times[i])
        prof = cfg.profiles[int(profile_ids[i])]
        ref = profile_demand(prof, clock_hour(t))
        requests.append(
            SliceRequest(
                id=i,
                arrival=t,
                tenant=int(tenant_ids[i]),
                profile=prof,
                co=int(co_ids[i]),
                demand=effective_demand(ref, noise[i].tolist()),
                duration=int(durations[i]),
                priority=prof.priority,
            )
        )
    return ArrivalSchedule(requests, tuple(cfg.tenants), cfg.shared_noise)
