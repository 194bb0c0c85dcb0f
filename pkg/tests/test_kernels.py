import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from appqos import kernels
from appqos._accel import HAVE_NUMBA
from appqos.topology import generate_fat_tree
from oracles import random_switch_graph

pytestmark = pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")


def _csr(topo):
    return topo.out_ptr, topo.out_link, topo.in_ptr, topo.in_link, topo.link_src, topo.link_dst


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 12), depth=st.integers(0, 12))
def test_hop_distances_backends_agree(seed, n, depth):
    rng = np.random.default_rng(seed)
    topo = random_switch_graph(rng, n, extra=0.2)
    mask = rng.random(topo.n_links) < 0.7
    start, stop = (int(x) for x in rng.integers(n, size=2))
    a = kernels.hop_distances_numba(topo.out_ptr, topo.out_link, topo.link_dst, mask, start, stop, depth)
    b = kernels.hop_distances_numpy(topo.out_ptr, topo.out_link, topo.link_dst, mask, start, stop, depth)
    if stop < 0 or a[stop] < 0:
        np.testing.assert_array_equal(a, b)
    else:
        assert a[stop] == b[stop]


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 12), max_hops=st.integers(1, 12))
def test_first_fit_backends_agree(seed, n, max_hops):
    rng = np.random.default_rng(seed)
    topo = random_switch_graph(rng, n)
    reserved = rng.uniform(0, 1, topo.n_links) * topo.capacity
    util = rng.uniform(0, 1, topo.n_links) * topo.capacity
    demand = float(rng.uniform(0, 10e6))
    s, t = (int(x) for x in rng.choice(n, 2, replace=False))
    a = kernels.first_fit_links_numba(topo.capacity, reserved, util, demand, s, t, max_hops, *_csr(topo))
    b = kernels.first_fit_links_numpy(topo.capacity, reserved, util, demand, s, t, max_hops, *_csr(topo))
    np.testing.assert_array_equal(a, b)


def test_batch_matches_single_calls():
    topo = generate_fat_tree(6)
    rng = np.random.default_rng(3)
    n = topo.n_nodes
    src = rng.integers(n, size=40)
    dst = (src + 1 + rng.integers(n - 1, size=40)) % n
    demands = rng.uniform(0, 1e9, 40)
    util = rng.uniform(0, 1e9, topo.n_links)
    for batch, single in ((kernels.first_fit_batch_numba, kernels.first_fit_links_numba),
                          (kernels.first_fit_batch_numpy, kernels.first_fit_links_numpy)):
        ptr, flat = batch(topo.capacity, topo.reserved, util, demands, src, dst, 7, *_csr(topo))
        for i in range(40):
            expect = single(topo.capacity, topo.reserved, util, demands[i], src[i], dst[i], 7, *_csr(topo))
            np.testing.assert_array_equal(flat[ptr[i]:ptr[i + 1]], expect)


def _random_allocation_problem(rng, n_links=6, n_flows=8):
    capacity = rng.choice([5e6, 10e6, 20e6], n_links)
    hops = rng.integers(1, 4, n_flows)
    entries = []
    for f in range(n_flows):
        links = rng.choice(n_links, hops[f], replace=False)
        entries += [(lk, f, h) for h, lk in enumerate(links)]
    entries.sort()
    link = np.array([e[0] for e in entries])
    ptr = np.zeros(n_links + 1, np.int64)
    np.cumsum(np.bincount(link, minlength=n_links), out=ptr[1:])
    flow = np.array([e[1] for e in entries], np.int64)
    hop = np.array([e[2] for e in entries], np.int64)
    kind = rng.integers(3, size=n_flows)
    min_rate = np.where(kind == 0, rng.uniform(0, 3e6, n_flows), 0.0)
    max_rate = np.where(kind == 1, rng.uniform(1e6, 8e6, n_flows), np.inf)
    best_effort = kind == 2
    shaped = np.minimum(rng.uniform(0, 15e6, n_flows), max_rate)
    return capacity, ptr, flow, hop, hops.astype(np.int64), shaped, min_rate, max_rate, best_effort


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_allocation_backends_agree(seed):
    rng = np.random.default_rng(seed)
    args = _random_allocation_problem(rng)
    width = int(args[4].max())
    outs = []
    for fn in (kernels.allocate_numba, kernels.allocate_python):
        arrival = np.zeros((len(args[5]), width))
        out = np.zeros_like(arrival)
        fn(*args, arrival, out)
        outs.append((arrival, out))
    np.testing.assert_allclose(outs[0][1], outs[1][1], rtol=1e-12, atol=1e-6)
    np.testing.assert_allclose(outs[0][0], outs[1][0], rtol=1e-12, atol=1e-6)
