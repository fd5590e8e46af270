"""Metro network model: integer resource pools, path selection and allocation.

Nodes come in three kinds. Central offices (COs) and regional data centers
(RDCs) carry GPP capacity; junctions only forward traffic. Links carry
connectivity units and are undirected.

Pools are addressed by integer index (position in the sorted id lists) so the
hot loops in the simulator can work on plain lists.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Any, Iterable, Mapping


class TopologyError(ValueError):
    """Raised for malformed topology descriptions or unroutable requests."""


class AllocationError(RuntimeError):
    """Raised when an allocation handle is released twice."""


def link_id(a: str, b: str) -> str:
    """Canonical id of the undirected link between ``a`` and ``b``."""
    lo, hi = sorted((a, b))
    return f"{lo}--{hi}"


@dataclass(frozen=True)
class Node:
    id: str
    capacity: int = 0


@dataclass(frozen=True)
class Link:
    a: str
    b: str
    capacity: int

    @property
    def id(self) -> str:
        return link_id(self.a, self.b)


@dataclass(frozen=True)
class Path:
    """Route from a CO to an RDC.

    ``nodes`` is the full node sequence; ``links`` holds the link indices in
    traversal order.
    """

    co: int
    rdc: int
    nodes: tuple[str, ...]
    links: tuple[int, ...]


@dataclass
class Topology:
    cos: list[Node]
    rdcs: list[Node]
    junctions: list[str]
    links: list[Link]
    # adjacency: node id -> sorted list of (neighbour id, link index)
    adjacency: dict[str, list[tuple[str, int]]] = field(repr=False, default_factory=dict)
    _paths: dict[tuple[int, int], Path] = field(repr=False, default_factory=dict)
    _reachable: dict[int, list[int]] = field(repr=False, default_factory=dict)

    @property
    def co_ids(self) -> list[str]:
        return [n.id for n in self.cos]

    @property
    def rdc_ids(self) -> list[str]:
        return [n.id for n in self.rdcs]

    @property
    def link_ids(self) -> list[str]:
        return [l.id for l in self.links]

    @property
    def co_capacity(self) -> list[int]:
        return [n.capacity for n in self.cos]

    @property
    def rdc_capacity(self) -> list[int]:
        return [n.capacity for n in self.rdcs]

    @property
    def link_capacity(self) -> list[int]:
        return [l.capacity for l in self.links]

    def co_index(self, co_id: str) -> int:
        for i, n in enumerate(self.cos):
            if n.id == co_id:
                return i
        raise TopologyError(f"unknown CO {co_id!r}")

    def rdc_index(self, rdc_id: str) -> int:
        for i, n in enumerate(self.rdcs):
            if n.id == rdc_id:
                return i
        raise TopologyError(f"unknown RDC {rdc_id!r}")

    def path(self, co: int, rdc: int) -> Path:
        """Cached :func:`find_path` by pool index."""
        key = (co, rdc)
        p = self._paths.get(key)
        if p is None:
            p = find_path(self, self.cos[co].id, self.rdcs[rdc].id)
            self._paths[key] = p
        return p

    def reachable_rdcs(self, co: int) -> list[int]:
        cached = self._reachable.get(co)
        if cached is not None:
            return cached
        out = []
        for r in range(len(self.rdcs)):
            try:
                self.path(co, r)
            except TopologyError:
                continue
            out.append(r)
        self._reachable[co] = out
        return out

    def new_state(self) -> "ResourceState":
        return ResourceState(
            co_cap=self.co_capacity,
            rdc_cap=self.rdc_capacity,
            link_cap=self.link_capacity,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "cos": [{"id": n.id, "capacity": n.capacity} for n in self.cos],
            "rdcs": [{"id": n.id, "capacity": n.capacity} for n in self.rdcs],
            "junctions": [{"id": j} for j in self.junctions],
            "links": [{"a": l.a, "b": l.b, "capacity": l.capacity} for l in self.links],
        }


def _capacity(obj: Mapping[str, Any], what: str) -> int:
    cap = obj.get("capacity")
    if isinstance(cap, bool) or not isinstance(cap, int):
        raise TopologyError(f"{what} capacity must be an integer, got {cap!r}")
    if cap < 0:
        raise TopologyError(f"negative capacity on {what}")
    return cap


def load_topology(spec: Mapping[str, Any] | str | FsPath) -> Topology:
    """Build and validate a :class:`Topology`.

    ``spec`` is either the parsed JSON document or a path to it. Junctions may
    be given as plain strings or as ``{"id": ...}`` objects.
    """
    if not isinstance(spec, Mapping):
        with open(spec) as fh:
            spec = json.load(fh)

    cos_raw = spec.get("cos") or []
    rdcs_raw = spec.get("rdcs") or []
    links_raw = spec.get("links") or []
    if not cos_raw:
        raise TopologyError("no CO in topology")
    if not rdcs_raw:
        raise TopologyError("no RDC in topology")
    if not links_raw:
        raise TopologyError("no link in topology")

    seen: set[str] = set()

    def claim(node_id: Any) -> str:
        if not isinstance(node_id, str) or not node_id:
            raise TopologyError(f"bad node id {node_id!r}")
        if node_id in seen:
            raise TopologyError(f"duplicate id {node_id!r}")
        seen.add(node_id)
        return node_id

    cos = [Node(claim(o.get("id")), _capacity(o, f"CO {o.get('id')}")) for o in cos_raw]
    rdcs = [Node(claim(o.get("id")), _capacity(o, f"RDC {o.get('id')}")) for o in rdcs_raw]
    junctions = [claim(j["id"] if isinstance(j, Mapping) else j) for j in spec.get("junctions") or []]

    links: list[Link] = []
    link_seen: set[str] = set()
    for o in links_raw:
        a, b = o.get("a"), o.get("b")
        for end in (a, b):
            if end not in seen:
                raise TopologyError(f"link references unknown node {end!r}")
        if a == b:
            raise TopologyError(f"self-loop link on {a!r}")
        lk = Link(a, b, _capacity(o, f"link {a}-{b}"))
        if lk.id in link_seen:
            raise TopologyError(f"duplicate link {lk.id!r}")
        link_seen.add(lk.id)
        links.append(lk)

    cos.sort(key=lambda n: n.id)
    rdcs.sort(key=lambda n: n.id)
    junctions.sort()
    links.sort(key=lambda l: l.id)

    adjacency: dict[str, list[tuple[str, int]]] = {n: [] for n in seen}
    for i, lk in enumerate(links):
        adjacency[lk.a].append((lk.b, i))
        adjacency[lk.b].append((lk.a, i))
    for nbrs in adjacency.values():
        nbrs.sort()

    topo = Topology(cos, rdcs, junctions, links, adjacency)
    for ci, co in enumerate(cos):
        if not topo.reachable_rdcs(ci):
            raise TopologyError(f"CO {co.id!r} is unreachable from every RDC")
    return topo


def _hop_distances(topo: Topology, target: str) -> dict[str, int]:
    dist = {target: 0}
    queue = deque([target])
    while queue:
        u = queue.popleft()
        for v, _ in topo.adjacency[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def find_path(topo: Topology, co: str, rdc: str) -> Path:
    """Minimum-hop path from ``co`` to ``rdc``.

    Among equal-hop paths the lexicographically smallest node sequence wins:
    walking from the CO and always stepping to the smallest neighbour that is
    one hop closer to the RDC produces exactly that sequence.
    """
    ci = topo.co_index(co)
    ri = topo.rdc_index(rdc)
    dist = _hop_distances(topo, rdc)
    if co not in dist:
        raise TopologyError(f"{rdc!r} unreachable from {co!r}")
    nodes = [co]
    links: list[int] = []
    cur = co
    while cur != rdc:
        d = dist[cur]
        nxt = min((v, li) for v, li in topo.adjacency[cur] if dist.get(v) == d - 1)
        nodes.append(nxt[0])
        links.append(nxt[1])
        cur = nxt[0]
    return Path(ci, ri, tuple(nodes), tuple(links))


@dataclass
class Allocation:
    """Granted amounts for one slice. ``link`` is charged on every link of the path."""

    co_index: int
    rdc_index: int
    links: tuple[int, ...]
    co: int = 0
    rdc: int = 0
    link: int = 0
    released: bool = False

    def shortfall(self, demand: tuple[int, int, int]) -> int:
        """Summed unmet units for a ``(co, link, rdc)`` demand triple."""
        return (demand[0] - self.co) + (demand[1] - self.link) + (demand[2] - self.rdc)


@dataclass
class ResourceState:
    """Busy counters per pool, indexed like the topology's sorted id lists."""

    co_cap: list[int]
    rdc_cap: list[int]
    link_cap: list[int]
    busy_co: list[int] = field(default_factory=list)
    busy_rdc: list[int] = field(default_factory=list)
    busy_link: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.busy_co:
            self.busy_co = [0] * len(self.co_cap)
        if not self.busy_rdc:
            self.busy_rdc = [0] * len(self.rdc_cap)
        if not self.busy_link:
            self.busy_link = [0] * len(self.link_cap)

    def free_co(self, i: int) -> int:
        return self.co_cap[i] - self.busy_co[i]

    def free_rdc(self, i: int) -> int:
        return self.rdc_cap[i] - self.busy_rdc[i]

    def free_path(self, links: Iterable[int]) -> int:
        """Connectivity grantable along a path (minimum free over its links)."""
        cap, busy = self.link_cap, self.busy_link
        return min(cap[l] - busy[l] for l in links)

    def copy(self) -> "ResourceState":
        return ResourceState(
            list(self.co_cap), list(self.rdc_cap), list(self.link_cap),
            list(self.busy_co), list(self.busy_rdc), list(self.busy_link),
        )

    def check(self) -> None:
        for kind, cap, busy in (
            ("co", self.co_cap, self.busy_co),
            ("rdc", self.rdc_cap, self.busy_rdc),
            ("link", self.link_cap, self.busy_link),
        ):
            for i, (c, b) in enumerate(zip(cap, busy)):
                if not 0 <= b <= c:
                    raise AssertionError(f"{kind} pool {i}: busy {b} outside [0, {c}]")

    def is_idle(self) -> bool:
        return not (any(self.busy_co) or any(self.busy_rdc) or any(self.busy_link))


def allocate(state: ResourceState, path: Path, demand: tuple[int, int, int]) -> Allocation:
    """Grant ``min(demand, free)`` per pool for a ``(co, link, rdc)`` demand.

    The link grant is limited by the tightest link on the path and charged to
    every link of it. Shortfall is not an error.
    """
    d_co, d_link, d_rdc = demand
    if d_co < 0 or d_link < 0 or d_rdc < 0:
        raise ValueError(f"negative demand {demand}")
    c, r = path.co, path.rdc
    g_co = min(d_co, state.co_cap[c] - state.busy_co[c])
    g_rdc = min(d_rdc, state.rdc_cap[r] - state.busy_rdc[r])
    state.busy_co[c] += g_co
    state.busy_rdc[r] += g_rdc
    g_link = 0
    if d_link and path.links:
        cap, busy = state.link_cap, state.busy_link
        g_link = d_link
        for l in path.links:
            free = cap[l] - busy[l]
            if free < g_link:
                g_link = free
        if g_link:
            for l in path.links:
                busy[l] += g_link
    return Allocation(c, r, path.links, g_co, g_rdc, g_link)


def choose_route(topo: Topology, state: ResourceState, co: int) -> Path:
    """Setup choice for a slice at ``co``: the reachable RDC with most free GPP.

    Ties go to the lowest RDC id.
    """
    best = -1
    best_free = -1
    for r in topo.reachable_rdcs(co):
        free = state.rdc_cap[r] - state.busy_rdc[r]
        if free > best_free:
            best, best_free = r, free
    return topo.path(co, best)


def release(state: ResourceState, alloc: Allocation) -> None:
    if alloc.released:
        raise AllocationError("allocation already released")
    alloc.released = True
    state.busy_co[alloc.co_index] -= alloc.co
    state.busy_rdc[alloc.rdc_index] -= alloc.rdc
    if alloc.link:
        for l in alloc.links:
            state.busy_link[l] -= alloc.link
    if state.busy_co[alloc.co_index] < 0 or state.busy_rdc[alloc.rdc_index] < 0 or (
        alloc.link and min(state.busy_link[l] for l in alloc.links) < 0
    ):
        raise AllocationError("release drove a busy counter below zero")
