"""Brute-force references used by the tests. Deliberately naive and slow."""
from __future__ import annotations

import itertools

import numpy as np

from appqos.topology import Topology


def random_switch_graph(rng: np.random.Generator, n: int, extra: float = 0.4,
                        cap_choices=(5e6, 10e6, 20e6)) -> Topology:
    """Connected graph of ``n`` switches: a random spanning tree plus random chords."""
    ids = [int(x) for x in rng.permutation(np.arange(1, 3 * n + 1))[:n]]
    edges = set()
    for i in range(1, n):
        j = int(rng.integers(i))
        edges.add((min(ids[i], ids[j]), max(ids[i], ids[j])))
    for a, b in itertools.combinations(ids, 2):
        if rng.random() < extra:
            edges.add((min(a, b), max(a, b)))
    nodes = [(i, "switch", None, None) for i in ids]
    links = [(a, b, float(rng.choice(cap_choices)), 1e-3) for a, b in sorted(edges)]
    return Topology(nodes, links)


def random_host_graph(rng: np.random.Generator, n_switches: int, n_hosts: int, extra: float = 0.3,
                      cap_choices=(10e6, 20e6, 40e6)) -> Topology:
    """Switch graph with ``n_hosts`` single-homed hosts attached at random."""
    core = random_switch_graph(rng, n_switches, extra, cap_choices)
    nodes = [(int(i), "switch", None, None) for i in core.node_ids]
    links = [(int(core.node_ids[core.link_src[lk]]), int(core.node_ids[core.link_dst[lk]]),
              float(core.capacity[lk]), 1e-3) for lk in core.undirected_links()]
    next_id = int(core.node_ids.max()) + 1
    for h in range(n_hosts):
        sw = int(rng.choice(core.node_ids))
        nodes.append((next_id + h, "host", None, None))
        links.append((sw, next_id + h, float(rng.choice(cap_choices)), 1e-3))
    return Topology(nodes, links)


def adjacency(topo: Topology) -> dict[int, set[int]]:
    adj = {int(n): set() for n in topo.node_ids}
    for lk in range(topo.n_links):
        adj[int(topo.node_ids[topo.link_src[lk]])].add(int(topo.node_ids[topo.link_dst[lk]]))
    return adj


def all_simple_paths(topo: Topology, s: int, t: int, max_hops: int) -> list[tuple[int, ...]]:
    """Every acyclic s-t node sequence with at most ``max_hops`` links, by permutation."""
    adj = adjacency(topo)
    others = [int(n) for n in topo.node_ids if n not in (s, t)]
    found = []
    for r in range(0, min(len(others), max_hops - 1) + 1):
        for mid in itertools.permutations(others, r):
            seq = (s,) + mid + (t,)
            if all(b in adj[a] for a, b in zip(seq, seq[1:])):
                found.append(seq)
    return sorted(found, key=lambda p: (len(p), p))


def path_residual(topo: Topology, nodes, utilization=None) -> float:
    """min over links of C - max(reserved, util), clamped at 0, by direct lookup."""
    util = np.zeros(topo.n_links) if utilization is None else utilization
    worst = float("inf")
    for a, b in zip(nodes, nodes[1:]):
        lk = topo.link_between(a, b)
        worst = min(worst, topo.capacity[lk] - max(topo.reserved[lk], util[lk]))
    return max(0.0, worst)


def first_feasible(topo: Topology, s: int, t: int, demand: float, max_hops: int, utilization=None):
    for p in all_simple_paths(topo, s, t, max_hops):
        if path_residual(topo, p, utilization) > demand:
            return p
    return None


def stable_priority_order(priorities: list[int]) -> list[int]:
    """Indices of a request batch in priority-then-arrival order."""
    return [i for i, _ in sorted(enumerate(priorities), key=lambda x: x[1])]


def mcf_feasible(topo: Topology, commodities, flows: dict, tol: float = 1.0) -> bool:
    """Constraint-by-constraint check over ``flows[cid][(u, v)]`` with node ids."""
    edges = []
    for lk in range(topo.n_links):
        edges.append((int(topo.node_ids[topo.link_src[lk]]), int(topo.node_ids[topo.link_dst[lk]]), lk))
    for u, v, lk in edges:
        total = sum(max(0.0, flows[c.id].get((u, v), 0.0)) for c in commodities)
        if total > topo.capacity[lk] + tol:
            return False
    for c in commodities:
        f = flows[c.id]
        for u, v, _ in edges:
            if abs(f.get((u, v), 0.0) + f.get((v, u), 0.0)) > tol:
                return False
        for node in topo.node_ids:
            node = int(node)
            out = sum(f.get((node, v), 0.0) for u, v, _ in edges if u == node)
            inn = sum(f.get((u, node), 0.0) for u, v, _ in edges if v == node)
            if node == c.source:
                if abs(out - c.demand) > tol:
                    return False
            elif node == c.sink:
                if abs(inn - c.demand) > tol:
                    return False
            elif abs(out) > tol:
                return False
    return True


def single_link_allocation(capacity, arrivals, min_rates, max_rates, best_effort, weights, iters=200):
    """One link's HTB-style split, by bisection on the fill levels."""
    arrivals = np.asarray(arrivals, float)
    n = len(arrivals)
    give = np.minimum(arrivals, np.where(best_effort, 0.0, min_rates))
    left = max(0.0, capacity - give.sum())
    want = np.where(best_effort, 0.0, np.maximum(0.0, np.minimum(arrivals, max_rates) - give))
    be_total = float(arrivals[best_effort].sum())

    def used(level):
        return np.minimum(want, level).sum() + min(be_total, level)

    if used(capacity + be_total + want.sum() + 1) <= left:
        level = float("inf")
    else:
        lo, hi = 0.0, capacity + 1.0
        for _ in range(iters):
            mid = (lo + hi) / 2
            lo, hi = (mid, hi) if used(mid) <= left else (lo, mid)
        level = lo
    give = give + np.minimum(want, level)
    share = min(be_total, level)
    out = give.copy()
    be = np.flatnonzero(best_effort)
    if len(be):
        w = np.asarray(weights, float)[be]
        a = arrivals[be]
        if share >= be_total:
            out[be] = a
        else:
            lo, hi = 0.0, 1.0
            while np.minimum(a, hi * w).sum() < share:
                hi *= 2
            for _ in range(iters):
                mid = (lo + hi) / 2
                lo, hi = (mid, hi) if np.minimum(a, mid * w).sum() <= share else (lo, mid)
            out[be] = np.minimum(a, lo * w)
    return out
