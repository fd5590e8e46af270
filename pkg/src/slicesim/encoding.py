"""Thermometer-coded policy input.

The state vector is a concatenation of fields, each a run of ones followed by
zeros. Field order, with every id list sorted:

    for each CO:   busy GPP (width g_c), requested GPP (width k_c)
    for each RDC:  busy GPP (width g_r), requested GPP (width k_s)
    for each link: busy units (width d_l), requested units (width k_m)
    duration (width k_e, value min(j_e, k_e))
    priority (width 1)
    tenant   (width n_t, value t)          -- only when include_tenant

Request fields are zero except at the target CO and on the RDC and links the
setup step would pick for the slice.

Internally a state is first reduced to one integer level per field; the bit
vector is expanded from those levels. The trainer stores levels, which is far
cheaper than storing bits.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from slicesim.topology import Path, ResourceState, Topology, choose_route
from slicesim.workload import Caps, SliceRequest


def thermometer(b: int, x: int) -> np.ndarray:
    if b < 1:
        raise ValueError("thermometer width must be >= 1")
    if x < 0:
        raise ValueError("thermometer value must be >= 0")
    out = np.zeros(b, dtype=np.uint8)
    out[: min(x, b)] = 1
    return out


@dataclass(frozen=True)
class EncodingSpec:
    co_ids: tuple[str, ...]
    co_caps: tuple[int, ...]
    rdc_ids: tuple[str, ...]
    rdc_caps: tuple[int, ...]
    link_ids: tuple[str, ...]
    link_caps: tuple[int, ...]
    caps: Caps
    n_tenants: int
    include_tenant: bool = True
    widths: tuple[int, ...] = field(init=False, repr=False, compare=False)
    # per-bit (field index, position within field) used by expand()
    _field_of: np.ndarray = field(init=False, repr=False, compare=False)
    _pos: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        w: list[int] = []
        for cap in self.co_caps:
            w += [cap, self.caps.k_c]
        for cap in self.rdc_caps:
            w += [cap, self.caps.k_s]
        for cap in self.link_caps:
            w += [cap, self.caps.k_m]
        w += [self.caps.k_e, 1]
        if self.include_tenant:
            w.append(self.n_tenants)
        if any(x < 1 for x in w):
            raise ValueError(f"all field widths must be positive, got {w}")
        widths = tuple(w)
        field_of = np.repeat(np.arange(len(widths)), widths)
        starts = np.concatenate([[0], np.cumsum(widths)[:-1]])
        pos = np.arange(sum(widths)) - starts[field_of]
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "_field_of", field_of)
        object.__setattr__(self, "_pos", pos)

    @classmethod
    def from_topology(
        cls, topo: Topology, caps: Caps, n_tenants: int, include_tenant: bool = True
    ) -> "EncodingSpec":
        return cls(
            tuple(topo.co_ids), tuple(topo.co_capacity),
            tuple(topo.rdc_ids), tuple(topo.rdc_capacity),
            tuple(topo.link_ids), tuple(topo.link_capacity),
            caps, n_tenants, include_tenant,
        )

    @property
    def width(self) -> int:
        return len(self._pos)

    @property
    def n_fields(self) -> int:
        return len(self.widths)

    def without_tenant(self) -> "EncodingSpec":
        return EncodingSpec(
            self.co_ids, self.co_caps, self.rdc_ids, self.rdc_caps,
            self.link_ids, self.link_caps, self.caps, self.n_tenants, False,
        )

    def digest(self) -> str:
        doc = {
            "co": list(zip(self.co_ids, self.co_caps)),
            "rdc": list(zip(self.rdc_ids, self.rdc_caps)),
            "link": list(zip(self.link_ids, self.link_caps)),
            "caps": [self.caps.k_c, self.caps.k_s, self.caps.k_m, self.caps.k_e],
            "n_tenants": self.n_tenants,
            "include_tenant": self.include_tenant,
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    def expand(self, levels: np.ndarray) -> np.ndarray:
        """Bits from per-field levels; accepts a single level vector or a batch."""
        levels = np.asarray(levels)
        if levels.ndim == 1:
            return (self._pos < levels[self._field_of]).astype(np.float64)
        return (self._pos[None, :] < levels[:, self._field_of]).astype(np.float64)


def encode_levels(
    state: ResourceState, req: SliceRequest, spec: EncodingSpec, path: Path
) -> np.ndarray:
    n_co = len(spec.co_caps)
    n_rdc = len(spec.rdc_caps)
    n_link = len(spec.link_caps)
    if not 0 <= req.co < n_co:
        raise ValueError(f"unknown CO index {req.co}")
    lv = np.zeros(spec.n_fields, dtype=np.int64)
    lv[0 : 2 * n_co : 2] = state.busy_co
    lv[2 * req.co + 1] = req.demand[0]
    off = 2 * n_co
    lv[off : off + 2 * n_rdc : 2] = state.busy_rdc
    lv[off + 2 * path.rdc + 1] = req.demand[2]
    off += 2 * n_rdc
    lv[off : off + 2 * n_link : 2] = state.busy_link
    for l in path.links:
        lv[off + 2 * l + 1] = req.demand[1]
    off += 2 * n_link
    lv[off] = min(req.duration, spec.caps.k_e)
    lv[off + 1] = req.priority
    if spec.include_tenant:
        lv[off + 2] = req.tenant
    # thermometer clamps at the field width
    np.minimum(lv, spec.widths, out=lv)
    return lv


def encode_state(
    state: ResourceState,
    req: SliceRequest,
    spec: EncodingSpec,
    topo: Optional[Topology] = None,
    path: Optional[Path] = None,
) -> np.ndarray:
    """Full 0/1 state vector for ``req`` arriving into ``state``.

    ``path`` defaults to the route the simulator's setup step would choose,
    which needs ``topo``.
    """
    if path is None:
        if topo is None:
            raise ValueError("need either a topology or an explicit path")
        if not 0 <= req.co < len(topo.cos):
            raise ValueError(f"unknown CO index {req.co}")
        path = choose_route(topo, state, req.co)
    return spec.expand(encode_levels(state, req, spec, path)).astype(np.uint8)


def to_bitstring(bits: np.ndarray) -> str:
    return "".join("1" if b else "0" for b in bits)
