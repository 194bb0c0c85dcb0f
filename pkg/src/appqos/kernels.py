"""Hot numeric kernels.

Three loops dominate runtime: breadth-first hop distances over the CSR
adjacency, the fused first-fit placement (capacity-masked BFS plus a greedy
lexicographic descent), and the per-tick fluid allocation of the data plane.
Each has a numba-compiled variant and a numpy fallback; the public names at
the bottom of the module point at whichever backend ``_accel`` selected.
Both variants stay importable so the benchmark and the equivalence tests can
drive them side by side.
"""
from __future__ import annotations

import numpy as np

from ._accel import USE_NUMBA, njit

__all__ = [
    "hop_distances",
    "first_fit_links",
    "first_fit_batch",
    "allocate",
    "hop_distances_numba",
    "hop_distances_numpy",
    "first_fit_links_numba",
    "first_fit_links_numpy",
    "first_fit_batch_numba",
    "first_fit_batch_numpy",
    "allocate_numba",
    "allocate_python",
]


# --------------------------------------------------------------------------
# hop distances
# --------------------------------------------------------------------------

def _hop_distances_loop(ptr, elist, other, mask, start, stop_at, max_depth):
    n = ptr.shape[0] - 1
    dist = np.full(n, -1, np.int64)
    queue = np.empty(n, np.int64)
    dist[start] = 0
    queue[0] = start
    head = 0
    tail = 1
    while head < tail:
        u = queue[head]
        head += 1
        du = dist[u]
        if du >= max_depth:
            break
        for j in range(ptr[u], ptr[u + 1]):
            lk = elist[j]
            if not mask[lk]:
                continue
            v = other[lk]
            if dist[v] < 0:
                dist[v] = du + 1
                if v == stop_at:
                    return dist
                queue[tail] = v
                tail += 1
    return dist


def hop_distances_numpy(ptr, elist, other, mask, start, stop_at=-1, max_depth=1 << 30):
    """Level-synchronous BFS; every level is one vectorized gather.

    ``ptr``/``elist`` is a CSR list of link ids per node, ``other[l]`` the far
    endpoint of link ``l``. Returns hop counts with -1 for unreached nodes.
    With ``stop_at`` set the search ends at the level that first reaches it;
    all shallower levels are complete.
    """
    n = ptr.shape[0] - 1
    dist = np.full(n, -1, np.int64)
    dist[start] = 0
    frontier = np.array([start], dtype=np.int64)
    level = 0
    while frontier.size and level < max_depth:
        starts = ptr[frontier]
        counts = ptr[frontier + 1] - starts
        total = int(counts.sum())
        if total == 0:
            break
        base = np.repeat(starts - (np.cumsum(counts) - counts), counts)
        links = elist[base + np.arange(total)]
        links = links[mask[links]]
        nbrs = other[links]
        nbrs = np.unique(nbrs[dist[nbrs] < 0])
        level += 1
        dist[nbrs] = level
        if stop_at >= 0 and dist[stop_at] >= 0:
            break
        frontier = nbrs
    return dist


hop_distances_numba = njit(_hop_distances_loop)


# --------------------------------------------------------------------------
# first-fit placement
# --------------------------------------------------------------------------

def _first_fit_loop(capacity, reserved, utilization, demand, source, sink, max_hops,
                    out_ptr, out_link, in_ptr, in_link, link_src, link_dst):
    # Distances to the sink over links whose residual strictly exceeds demand.
    n = out_ptr.shape[0] - 1
    dist = np.full(n, -1, np.int64)
    queue = np.empty(n, np.int64)
    dist[sink] = 0
    queue[0] = sink
    head = 0
    tail = 1
    found = False
    while head < tail and not found:
        u = queue[head]
        head += 1
        du = dist[u]
        if du >= max_hops:
            break
        for j in range(in_ptr[u], in_ptr[u + 1]):
            lk = in_link[j]
            load = reserved[lk]
            if utilization[lk] > load:
                load = utilization[lk]
            if not capacity[lk] - load > demand:
                continue
            v = link_src[lk]
            if dist[v] < 0:
                dist[v] = du + 1
                if v == source:
                    found = True
                    break
                queue[tail] = v
                tail += 1
    if dist[source] < 0:
        return np.empty(0, np.int64)
    hops = dist[source]
    path = np.empty(hops, np.int64)
    u = source
    for step in range(hops):
        for j in range(out_ptr[u], out_ptr[u + 1]):
            lk = out_link[j]
            v = link_dst[lk]
            if dist[v] != dist[u] - 1 or dist[v] < 0:
                continue
            load = reserved[lk]
            if utilization[lk] > load:
                load = utilization[lk]
            if capacity[lk] - load > demand:
                path[step] = lk
                u = v
                break
    return path


def first_fit_links_numpy(capacity, reserved, utilization, demand, source, sink, max_hops,
                          out_ptr, out_link, in_ptr, in_link, link_src, link_dst):
    """Link ids of the first feasible path in (length, node order); empty if none.

    Shortest feasible walks are simple, so the shortest feasible path length is
    the masked BFS distance, and a greedy descent that always takes the
    smallest-id neighbour one hop closer yields the lexicographically first
    path of that length.
    """
    feasible = capacity - np.maximum(reserved, utilization) > demand
    dist = hop_distances_numpy(in_ptr, in_link, link_src, feasible, sink, source, max_hops)
    hops = int(dist[source])
    if hops < 0:
        return np.empty(0, np.int64)
    path = np.empty(hops, np.int64)
    u = source
    for step in range(hops):
        links = out_link[out_ptr[u]:out_ptr[u + 1]]
        nxt = link_dst[links]
        ok = feasible[links] & (dist[nxt] == dist[u] - 1) & (dist[nxt] >= 0)
        lk = links[np.argmax(ok)]
        path[step] = lk
        u = link_dst[lk]
    return path


first_fit_links_numba = njit(_first_fit_loop)


def _make_batch(single):
    def batch(capacity, reserved, utilization, demands, sources, sinks, max_hops,
              out_ptr, out_link, in_ptr, in_link, link_src, link_dst):
        m = sources.shape[0]
        ptr = np.zeros(m + 1, np.int64)
        pieces = []
        for i in range(m):
            links = single(capacity, reserved, utilization, demands[i], sources[i], sinks[i], max_hops,
                           out_ptr, out_link, in_ptr, in_link, link_src, link_dst)
            ptr[i + 1] = ptr[i] + links.shape[0]
            pieces.append(links)
        flat = np.empty(ptr[m], np.int64)
        for i in range(m):
            flat[ptr[i]:ptr[i + 1]] = pieces[i]
        return ptr, flat

    return batch


# Independent placements against one snapshot; path i is flat[ptr[i]:ptr[i+1]].
first_fit_batch_numpy = _make_batch(first_fit_links_numpy)
first_fit_batch_numba = njit(_make_batch(first_fit_links_numba))


# --------------------------------------------------------------------------
# fluid allocation
# --------------------------------------------------------------------------

def _allocate_loop(capacity, entry_ptr, entry_flow, entry_hop, n_hops,
                   shaped, min_rate, max_rate, best_effort, arrival, out):
    """Fill ``arrival``/``out`` (flows x hops) with per-hop rates.

    Per link: reserved classes first get min(arrival, min_rate); the residual
    is water-filled max-min over the reserved/capped excess demands plus one
    aggregate best-effort claimant; the best-effort share is split in
    proportion to each flow's source rate, never above its arrival.
    Arrivals at hop h are the outputs of hop h-1, so H Jacobi sweeps settle
    every hop exactly.
    """
    n_flows = out.shape[0]
    n_cols = out.shape[1]
    n_links = capacity.shape[0]
    widest = 0
    for lk in range(n_links):
        m = entry_ptr[lk + 1] - entry_ptr[lk]
        if m > widest:
            widest = m
    give = np.zeros(widest)
    want = np.zeros(widest)
    done = np.zeros(widest, np.bool_)
    for f in range(n_flows):
        for h in range(n_cols):
            arrival[f, h] = 0.0
            out[f, h] = 0.0
        if n_hops[f] > 0:
            arrival[f, 0] = shaped[f]
    sweeps = 0
    for f in range(n_flows):
        if n_hops[f] > sweeps:
            sweeps = n_hops[f]
    for _ in range(sweeps):
        for lk in range(n_links):
            a = entry_ptr[lk]
            m = entry_ptr[lk + 1] - a
            if m == 0:
                continue
            used = 0.0
            be_demand = 0.0
            be_weight = 0.0
            claimants = 0
            for j in range(m):
                f = entry_flow[a + j]
                x = arrival[f, entry_hop[a + j]]
                g = x if x < min_rate[f] else min_rate[f]
                give[j] = g
                used += g
                done[j] = True
                want[j] = 0.0
                if best_effort[f]:
                    be_demand += x
                    be_weight += shaped[f]
                else:
                    top = x if x < max_rate[f] else max_rate[f]
                    if top - g > 0.0:
                        want[j] = top - g
                        done[j] = False
                        claimants += 1
            remaining = capacity[lk] - used
            if remaining < 0.0:
                remaining = 0.0
            be_open = be_demand > 0.0
            if be_open:
                claimants += 1
            be_share = 0.0
            while claimants > 0 and remaining > 0.0:
                level = remaining / claimants
                progressed = False
                for j in range(m):
                    if not done[j] and want[j] <= level:
                        give[j] += want[j]
                        remaining -= want[j]
                        done[j] = True
                        claimants -= 1
                        progressed = True
                if be_open and be_demand <= level:
                    be_share = be_demand
                    remaining -= be_demand
                    be_open = False
                    claimants -= 1
                    progressed = True
                if not progressed:
                    for j in range(m):
                        if not done[j]:
                            give[j] += level
                            done[j] = True
                    if be_open:
                        be_share = level
                        be_open = False
                    claimants = 0
                    remaining = 0.0
            if be_demand > 0.0:
                if be_share >= be_demand:
                    for j in range(m):
                        f = entry_flow[a + j]
                        if best_effort[f]:
                            give[j] = arrival[f, entry_hop[a + j]]
                else:
                    # weighted fill: each flow gets min(arrival, level * weight)
                    for j in range(m):
                        f = entry_flow[a + j]
                        done[j] = not best_effort[f]
                        if best_effort[f]:
                            give[j] = 0.0
                    left = be_share
                    open_weight = be_weight
                    while left > 0.0 and open_weight > 0.0:
                        level = left / open_weight
                        progressed = False
                        for j in range(m):
                            if done[j]:
                                continue
                            f = entry_flow[a + j]
                            x = arrival[f, entry_hop[a + j]]
                            if x <= level * shaped[f]:
                                give[j] = x
                                left -= x
                                open_weight -= shaped[f]
                                done[j] = True
                                progressed = True
                        if not progressed:
                            for j in range(m):
                                if not done[j]:
                                    f = entry_flow[a + j]
                                    give[j] = level * shaped[f]
                                    done[j] = True
                            left = 0.0
            for j in range(m):
                out[entry_flow[a + j], entry_hop[a + j]] = give[j]
        for f in range(n_flows):
            for h in range(1, n_hops[f]):
                arrival[f, h] = out[f, h - 1]


allocate_python = _allocate_loop
allocate_numba = njit(_allocate_loop)


if USE_NUMBA:
    hop_distances = hop_distances_numba
    first_fit_links = first_fit_links_numba
    first_fit_batch = first_fit_batch_numba
    allocate = allocate_numba
else:
    hop_distances = hop_distances_numpy
    first_fit_links = first_fit_links_numpy
    first_fit_batch = first_fit_batch_numpy
    allocate = allocate_python
