"""Discrete-event episode loop: arrivals, periodic scaling and departures.

At equal timestamps departures run first, then the scaling tick, then
arrivals, so capacity freed at an instant is visible to decisions made at
that instant.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

import numpy as np

from slicesim.topology import (
    Allocation,
    AllocationError,
    Path,
    ResourceState,
    Topology,
    allocate,
    choose_route,
    release,
)
from slicesim.workload import (
    NOISE_TRIALS,
    ArrivalSchedule,
    SliceRequest,
    TenantSpec,
    clock_hour,
)

DEPARTURE, SCALING, ARRIVAL = 0, 1, 2


@dataclass
class SimConfig:
    scaling_period_h: float = 1.0
    priority_weights: tuple[float, ...] = (1.0, 2.0)
    c_sla: float = 0.05
    # check every pool against its capacity after each event
    validate: bool = True

    def __post_init__(self) -> None:
        if self.scaling_period_h <= 0:
            raise ValueError("scaling period must be positive")
        if self.c_sla < 0 or any(w < 0 for w in self.priority_weights):
            raise ValueError("loss coefficients must be non-negative")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SimConfig":
        kw: dict[str, Any] = {}
        if "scaling_period_h" in d:
            kw["scaling_period_h"] = float(d["scaling_period_h"])
        if "priority_weights" in d:
            kw["priority_weights"] = tuple(float(w) for w in d["priority_weights"])
        if "c_sla" in d:
            kw["c_sla"] = float(d["c_sla"])
        if "validate" in d:
            kw["validate"] = bool(d["validate"])
        return cls(**kw)

    def to_dict(self) -> dict[str, Any]:
        return {
            "scaling_period_h": self.scaling_period_h,
            "priority_weights": list(self.priority_weights),
            "c_sla": self.c_sla,
            "validate": self.validate,
        }


def rejection_loss(req: SliceRequest, tenant: TenantSpec, cfg: SimConfig) -> float:
    return tenant.v * cfg.priority_weights[req.priority]


def violation_loss(tenant: TenantSpec, magnitude: int, cfg: SimConfig) -> float:
    if magnitude < 0:
        raise ValueError("negative violation magnitude")
    return tenant.v * cfg.c_sla * magnitude


@dataclass
class Decision:
    """What a policy answered for one arrival.

    ``features`` holds the compact encoder output (per-field thermometer
    levels) for neural policies so the trainer can rebuild the input.
    """

    accept: bool
    log_prob: float = 0.0
    features: Optional[np.ndarray] = None


@dataclass
class DecisionRecord:
    request: int
    time: float
    tenant: int
    priority: int
    accept: bool
    log_prob: float
    features: Optional[np.ndarray]
    admission_shortfall: int = 0


@dataclass(eq=False)
class DeployedSlice:
    request: SliceRequest
    tenant: TenantSpec
    path: Path
    alloc: Allocation
    admitted: float
    departure: float
    violation: int = 0  # accumulated shortfall units
    loss: float = 0.0  # accumulated violation loss
    departed: bool = False


@dataclass
class AdmissionContext:
    """Everything a policy may look at when a request arrives."""

    topology: Topology
    state: ResourceState
    request: SliceRequest
    path: Path  # the route setup would use if the slice is accepted
    time: float
    n_tenants: int


@dataclass
class LedgerEntry:
    kind: int
    time: float
    slice_id: int  # -1 for scaling ticks
    demands: dict[int, tuple[int, int, int]]  # demand used at this event per touched slice
    grants: dict[int, tuple[int, int, int]]  # live allocations after the event (co, link, rdc)


@dataclass
class EpisodeResult:
    n_tenants: int
    n_priorities: int = 2
    rejection_loss: float = 0.0
    scaling_loss: float = 0.0
    admission_shortfall: int = 0
    admission_loss: float = 0.0
    accepted: np.ndarray = field(default=None)  # type: ignore[assignment]
    rejected: np.ndarray = field(default=None)  # type: ignore[assignment]
    decisions: list[DecisionRecord] = field(default_factory=list)
    loss_events: list[tuple[float, float]] = field(default_factory=list)
    slice_loss: dict[int, float] = field(default_factory=dict)
    ledger: Optional[list[LedgerEntry]] = None
    end_time: float = 0.0

    def __post_init__(self) -> None:
        if self.accepted is None:
            self.accepted = np.zeros((self.n_tenants, self.n_priorities), dtype=np.int64)
        if self.rejected is None:
            self.rejected = np.zeros((self.n_tenants, self.n_priorities), dtype=np.int64)

    @property
    def total_loss(self) -> float:
        return self.rejection_loss + self.scaling_loss

    @property
    def n_accepted(self) -> int:
        return int(self.accepted.sum())

    @property
    def n_rejected(self) -> int:
        return int(self.rejected.sum())


class Episode:
    """One episode's mutable world. Use :func:`run_episode` for the common case."""

    def __init__(
        self,
        topology: Topology,
        schedule: ArrivalSchedule,
        policy,
        cfg: SimConfig,
        rng: np.random.Generator,
        policy_rng: Optional[np.random.Generator] = None,
        record_ledger: bool = False,
    ) -> None:
        self.topology = topology
        self.schedule = schedule
        self.policy = policy
        self.cfg = cfg
        self.rng = rng
        self.policy_rng = policy_rng if policy_rng is not None else rng
        self.state = topology.new_state()
        self.live: list[DeployedSlice] = []
        self.clock = 0.0
        n_prio = max(2, len(cfg.priority_weights))
        self.result = EpisodeResult(len(schedule.tenants), n_prio)
        if record_ledger:
            self.result.ledger = []
        self._departures: list[tuple[float, int, DeployedSlice]] = []
        self._tenant_u = [t.u for t in schedule.tenants]

    # -- events --------------------------------------------------------------

    def handle_arrival(self, req: SliceRequest) -> DecisionRecord:
        tenant = self.schedule.tenants[req.tenant]
        path = choose_route(self.topology, self.state, req.co)
        ctx = AdmissionContext(self.topology, self.state, req, path, self.clock, len(self.schedule.tenants))
        decision = self.policy.decide(ctx, self.policy_rng)
        rec = DecisionRecord(
            req.id, self.clock, req.tenant, req.priority,
            bool(decision.accept), decision.log_prob, decision.features,
        )
        res = self.result
        res.decisions.append(rec)
        if not decision.accept:
            loss = rejection_loss(req, tenant, self.cfg)
            res.rejection_loss += loss
            res.rejected[req.tenant, req.priority] += 1
            res.slice_loss[req.id] = loss
            if loss:
                res.loss_events.append((self.clock, loss))
            if res.ledger is not None:
                self._log(ARRIVAL, req.id, {})
            return rec

        res.accepted[req.tenant, req.priority] += 1
        alloc = allocate(self.state, path, req.demand)
        short = alloc.shortfall(req.demand)
        sl = DeployedSlice(req, tenant, path, alloc, self.clock, self.clock + req.duration)
        self.live.append(sl)
        heapq.heappush(self._departures, (sl.departure, req.id, sl))
        res.slice_loss[req.id] = 0.0
        if short:
            loss = violation_loss(tenant, short, self.cfg)
            sl.violation += short
            sl.loss += loss
            rec.admission_shortfall = short
            res.admission_shortfall += short
            res.admission_loss += loss
            res.scaling_loss += loss
            res.slice_loss[req.id] += loss
            if loss:
                res.loss_events.append((self.clock, loss))
        if res.ledger is not None:
            self._log(ARRIVAL, req.id, {req.id: req.demand})
        return rec

    def handle_scaling(self) -> float:
        live = self.live
        if not live:
            return 0.0
        state = self.state
        # release-all: the live set owns every allocation, so the pools empty out
        busy_co, busy_rdc, busy_link = state.busy_co, state.busy_rdc, state.busy_link
        cap_co, cap_rdc, cap_link = state.co_cap, state.rdc_cap, state.link_cap
        for i in range(len(busy_co)):
            busy_co[i] = 0
        for i in range(len(busy_rdc)):
            busy_rdc[i] = 0
        for i in range(len(busy_link)):
            busy_link[i] = 0

        hour = clock_hour(self.clock)
        u = [self._tenant_u[sl.request.tenant] for sl in live]
        if self.schedule.shared_noise:
            noise = np.repeat(self.rng.binomial(NOISE_TRIALS, u)[:, None], 3, axis=1).tolist()
        else:
            noise = self.rng.binomial(NOISE_TRIALS, np.array(u)[:, None], size=(len(live), 3)).tolist()

        c_sla = self.cfg.c_sla
        res = self.result
        slice_loss = res.slice_loss
        ledger = res.ledger
        demands: dict[int, tuple[int, int, int]] = {}
        delta = 0.0
        # same grant rule as topology.allocate, inlined for the hot loop
        for sl, nz in zip(live, noise):
            ref = sl.request.profile.by_hour[hour]
            d_co = ref[0] - nz[0] if ref[0] > nz[0] else 0
            d_link = ref[1] - nz[1] if ref[1] > nz[1] else 0
            d_rdc = ref[2] - nz[2] if ref[2] > nz[2] else 0
            a = sl.alloc
            c, r = a.co_index, a.rdc_index
            g_co = cap_co[c] - busy_co[c]
            if d_co < g_co:
                g_co = d_co
            busy_co[c] += g_co
            g_rdc = cap_rdc[r] - busy_rdc[r]
            if d_rdc < g_rdc:
                g_rdc = d_rdc
            busy_rdc[r] += g_rdc
            g_link = d_link
            if g_link:
                links = a.links
                for l in links:
                    free = cap_link[l] - busy_link[l]
                    if free < g_link:
                        g_link = free
                if g_link:
                    for l in links:
                        busy_link[l] += g_link
            a.co, a.rdc, a.link, a.released = g_co, g_rdc, g_link, False
            short = d_co - g_co + d_link - g_link + d_rdc - g_rdc
            if short:
                loss = sl.tenant.v * c_sla * short
                sl.violation += short
                sl.loss += loss
                slice_loss[sl.request.id] += loss
                delta += loss
            if ledger is not None:
                demands[sl.request.id] = (d_co, d_link, d_rdc)
        if delta:
            res.scaling_loss += delta
            res.loss_events.append((self.clock, delta))
        if ledger is not None:
            self._log(SCALING, -1, demands)
        return delta

    def handle_departure(self, sl: DeployedSlice) -> None:
        if sl.departed:
            raise AllocationError(f"slice {sl.request.id} departed twice")
        release(self.state, sl.alloc)
        sl.departed = True
        self.live.remove(sl)
        if self.result.ledger is not None:
            self._log(DEPARTURE, sl.request.id, {})

    # -- loop ----------------------------------------------------------------

    def run(self) -> EpisodeResult:
        reqs = self.schedule.requests
        n = len(reqs)
        period = self.cfg.scaling_period_h
        tick_no = 1
        next_tick = period
        i = 0
        deps = self._departures
        validate = self.cfg.validate
        while i < n or self.live:
            t_arr = reqs[i].arrival if i < n else math.inf
            t_dep = deps[0][0] if deps else math.inf
            # ticks with nothing deployed are no-ops; skip straight past them
            if not self.live:
                while next_tick < t_arr:
                    tick_no += 1
                    next_tick = tick_no * period
            t_next = min(t_arr, t_dep, next_tick)
            self.clock = t_next
            if t_dep <= t_next:
                _, _, sl = heapq.heappop(deps)
                self.handle_departure(sl)
            elif next_tick <= t_next:
                self.handle_scaling()
                tick_no += 1
                next_tick = tick_no * period
            else:
                self.handle_arrival(reqs[i])
                i += 1
            if validate:
                self.state.check()
        self.result.end_time = self.clock
        return self.result

    def _log(self, kind: int, slice_id: int, demands: dict) -> None:
        grants = {sl.request.id: (sl.alloc.co, sl.alloc.link, sl.alloc.rdc) for sl in self.live}
        self.result.ledger.append(LedgerEntry(kind, self.clock, slice_id, dict(demands), grants))


def run_episode(
    topology: Topology,
    schedule: ArrivalSchedule,
    policy,
    cfg: SimConfig,
    rng: np.random.Generator,
    policy_rng: Optional[np.random.Generator] = None,
    record_ledger: bool = False,
) -> EpisodeResult:
    """Play one episode to completion.

    ``rng`` drives the per-tick demand noise; ``policy_rng`` (defaulting to
    ``rng``) drives stochastic policies, so keeping them separate lets several
    policies face identical demand noise.
    """
    return Episode(topology, schedule, policy, cfg, rng, policy_rng, record_ledger).run()
