"""First-fit flow placement and the multi-commodity-flow feasibility check.

``first_fit_place`` is the production path: one capacity-masked BFS from the
sink followed by a greedy descent, O(V + E) per request. ``first_fit_enumerate``
is the literal definition (walk ``simple_paths`` and stop at the first path
with enough residual) and serves as its reference.
"""
from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from . import kernels
from .topology import Path, Topology, TopologyError, residual_capacity, simple_paths

__all__ = [
    "Commodity",
    "FlowAssignment",
    "first_fit_place",
    "first_fit_enumerate",
    "first_fit_place_many",
    "verify_mcf",
    "reservations_to_assignment",
    "MCF_TOLERANCE",
]

MCF_TOLERANCE = 1.0  # bit/s


@dataclass(frozen=True)
class Commodity:
    id: int
    source: int
    sink: int
    demand: float

    def __post_init__(self):
        if self.demand < 0:
            raise ValueError("commodity demand must be non-negative")
        if self.source == self.sink:
            raise ValueError("commodity source and sink coincide")


@dataclass
class FlowAssignment:
    """Signed flow of each commodity on each half-link, shape (commodities, links)."""

    commodity_ids: tuple[int, ...]
    flows: np.ndarray

    @classmethod
    def from_edge_flows(cls, topo: Topology, edge_flows: Mapping[int, Mapping[tuple[int, int], float]]):
        """Build from ``{commodity_id: {(u, v): f}}``; (v, u) gets -f unless given."""
        ids = tuple(edge_flows)
        flows = np.zeros((len(ids), topo.n_links))
        for row, cid in enumerate(ids):
            for (u, v), f in edge_flows[cid].items():
                lk = topo.link_between(u, v)
                flows[row, lk] = f
                if (v, u) not in edge_flows[cid]:
                    flows[row, topo.twin[lk]] = -f
        return cls(ids, flows)


def _utilization(snapshot):
    if snapshot is None:
        return None
    return getattr(snapshot, "utilization", snapshot)


def first_fit_place(topo: Topology, commodity: Commodity, snapshot=None,
                    max_hops: int | None = None) -> Path | None:
    """First path in simple-path order whose residual capacity exceeds the demand."""
    if commodity.source == commodity.sink:
        raise TopologyError("source and sink coincide")
    util = _utilization(snapshot)
    if util is None:
        util = np.zeros(topo.n_links)
    links = kernels.first_fit_links(
        topo.capacity, topo.reserved, np.asarray(util, dtype=np.float64), float(commodity.demand),
        topo.index_of[commodity.source], topo.index_of[commodity.sink],
        topo.default_max_hops if max_hops is None else int(max_hops),
        topo.out_ptr, topo.out_link, topo.in_ptr, topo.in_link, topo.link_src, topo.link_dst,
    )
    if len(links) == 0:
        return None
    return topo.path_from_links(links)


def first_fit_place_many(topo: Topology, commodities: Sequence[Commodity], snapshot=None,
                         max_hops: int | None = None) -> list[Path | None]:
    """Independent first-fit placements of every commodity against one snapshot.

    Nothing is reserved between placements; one compiled call serves the batch.
    """
    util = _utilization(snapshot)
    if util is None:
        util = np.zeros(topo.n_links)
    for c in commodities:
        if c.source == c.sink:
            raise TopologyError("source and sink coincide")
    sources = np.array([topo.index_of[c.source] for c in commodities], dtype=np.int64)
    sinks = np.array([topo.index_of[c.sink] for c in commodities], dtype=np.int64)
    demands = np.array([c.demand for c in commodities], dtype=np.float64)
    ptr, flat = kernels.first_fit_batch(
        topo.capacity, topo.reserved, np.asarray(util, dtype=np.float64), demands, sources, sinks,
        topo.default_max_hops if max_hops is None else int(max_hops),
        topo.out_ptr, topo.out_link, topo.in_ptr, topo.in_link, topo.link_src, topo.link_dst,
    )
    return [topo.path_from_links(flat[ptr[i]:ptr[i + 1]]) if ptr[i + 1] > ptr[i] else None
            for i in range(len(commodities))]


def first_fit_enumerate(topo: Topology, commodity: Commodity, snapshot=None,
                        max_hops: int | None = None) -> tuple[Path | None, int]:
    """Reference first-fit: returns (path or None, number of candidate paths examined)."""
    util = _utilization(snapshot)
    visited = 0
    for path in simple_paths(topo, commodity.source, commodity.sink, max_hops):
        visited += 1
        if residual_capacity(topo, path, util) > commodity.demand:
            return path, visited
    return None, visited


def verify_mcf(topo: Topology, commodities: Sequence[Commodity], assignment: FlowAssignment,
               tol: float = MCF_TOLERANCE) -> bool:
    """Check capacity, conservation, skew symmetry and demand satisfaction.

    Half-links are full-duplex, so the capacity bound applies per direction to
    the positive part of each commodity's flow.
    """
    flows = np.asarray(assignment.flows, dtype=np.float64)
    ids = tuple(c.id for c in commodities)
    if tuple(assignment.commodity_ids) != ids:
        raise ValueError("assignment does not cover exactly the given commodities")
    if flows.shape != (len(ids), topo.n_links):
        raise ValueError(f"assignment shape {flows.shape} does not match topology")
    if not ids:
        return True
    if np.any(np.abs(flows + flows[:, topo.twin]) > tol):
        return False
    if np.any(np.clip(flows, 0.0, None).sum(axis=0) > topo.capacity + tol):
        return False
    for row, c in enumerate(commodities):
        outflow = np.bincount(topo.link_src, weights=flows[row], minlength=topo.n_nodes)
        inflow = np.bincount(topo.link_dst, weights=flows[row], minlength=topo.n_nodes)
        s, t = topo.index_of[c.source], topo.index_of[c.sink]
        inner = np.ones(topo.n_nodes, dtype=bool)
        inner[[s, t]] = False
        if np.any(np.abs(outflow[inner]) > tol):
            return False
        if abs(outflow[s] - c.demand) > tol or abs(inflow[t] - c.demand) > tol:
            return False
    return True


def reservations_to_assignment(topo: Topology, reservations: Iterable) -> tuple[list[Commodity], FlowAssignment]:
    """Single-path assignment from objects carrying ``id``, ``path`` and ``demand``."""
    reservations = list(reservations)
    commodities = []
    flows = np.zeros((len(reservations), topo.n_links))
    for row, res in enumerate(reservations):
        commodities.append(Commodity(res.id, res.path.source, res.path.dest, res.demand))
        idx = np.fromiter(res.path.links, dtype=np.int64)
        flows[row, idx] += res.demand
        flows[row, topo.twin[idx]] -= res.demand
    return commodities, FlowAssignment(tuple(c.id for c in commodities), flows)
