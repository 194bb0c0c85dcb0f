import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from appqos.pathfinding import (
    Commodity,
    FlowAssignment,
    first_fit_enumerate,
    first_fit_place,
    first_fit_place_many,
    reservations_to_assignment,
    verify_mcf,
)
from appqos.topology import Topology, TopologyError, generate_fat_tree, residual_capacity
from oracles import first_feasible, mcf_feasible, random_switch_graph


def test_fat_tree_first_fit_picks_first_shortest():
    topo = generate_fat_tree(4)
    a, b = topo.resolve("h0_0_0"), topo.resolve("h2_1_1")
    path = first_fit_place(topo, Commodity(1, a, b, 5e6))
    assert path.hops == 6
    assert topo.path_label(path) == "h0_0_0-e0_0-a0_0-c0-a2_0-e2_1-h2_1_1"
    ref, visited = first_fit_enumerate(topo, Commodity(1, a, b, 5e6))
    assert ref == path and visited == 1


@pytest.mark.parametrize("k", [4, 6, 8])
def test_fat_tree_visits_at_most_quarter_k_squared(k):
    topo = generate_fat_tree(k, capacity=10e6)
    a, b = topo.resolve("h0_0_0"), topo.resolve(f"h{k - 1}_0_0")
    # saturate every core uplink except the last one so first-fit has to scan
    util = np.zeros(topo.n_links)
    for c in range((k // 2) ** 2 - 1):
        for lk in range(topo.n_links):
            if topo.node_ids[topo.link_dst[lk]] == c:
                util[lk] = 10e6
    path, visited = first_fit_enumerate(topo, Commodity(1, a, b, 1e6), util)
    assert path is not None and visited == (k // 2) ** 2
    assert first_fit_place(topo, Commodity(1, a, b, 1e6), util) == path


def test_infeasible_demand(tree):
    c = Commodity(1, tree.resolve("h1"), tree.resolve("h8"), 25e6)
    assert first_fit_place(tree, c) is None
    assert first_fit_enumerate(tree, c) == (None, 1)


def test_shorter_path_saturated_takes_longer():
    # 1-3 direct, or 1-2-3
    topo = Topology([(1, "switch", None, None), (2, "switch", None, None), (3, "switch", None, None)],
                    [(1, 2, 10e6, 0), (2, 3, 10e6, 0), (1, 3, 10e6, 0)])
    topo.reserved[topo.link_between(1, 3)] = 8e6
    path = first_fit_place(topo, Commodity(1, 1, 3, 5e6))
    assert path.nodes == (1, 2, 3)


def test_strict_residual(tree):
    c = Commodity(1, tree.resolve("h1"), tree.resolve("h8"), 20e6)
    assert first_fit_place(tree, c) is None


def test_coincident_endpoints():
    with pytest.raises(ValueError):
        Commodity(1, 3, 3, 1.0)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 8))
def test_first_fit_matches_exhaustive(seed, n):
    rng = np.random.default_rng(seed)
    topo = random_switch_graph(rng, n)
    topo.reserved[:] = rng.choice([0.0, 0.5, 1.0], topo.n_links) * topo.capacity
    util = rng.uniform(0, 0.8, topo.n_links) * topo.capacity
    s, t = (int(x) for x in rng.choice(topo.node_ids, 2, replace=False))
    demand = float(rng.uniform(0, 12e6))
    c = Commodity(1, s, t, demand)
    expect = first_feasible(topo, s, t, demand, n, util)
    got = first_fit_place(topo, c, util, max_hops=n)
    assert (got.nodes if got else None) == expect
    if got is not None:
        assert residual_capacity(topo, got, util) > demand
    ref, _ = first_fit_enumerate(topo, c, util, max_hops=n)
    assert ref == got


def test_place_many_matches_single(tree):
    hosts = tree.hosts()
    cs = [Commodity(i, a, b, 15e6) for i, (a, b) in enumerate(zip(hosts, hosts[::-1])) if a != b]
    util = np.zeros(tree.n_links)
    util[tree.link_between(4, 2)] = 10e6
    assert first_fit_place_many(tree, cs, util) == [first_fit_place(tree, c, util) for c in cs]


# -- multi-commodity flow check ------------------------------------------------

def _line(caps):
    nodes = [(i, "switch", None, None) for i in range(len(caps) + 1)]
    return Topology(nodes, [(i, i + 1, c, 0) for i, c in enumerate(caps)])


def test_mcf_empty():
    topo = _line([10e6])
    assert verify_mcf(topo, [], FlowAssignment((), np.zeros((0, topo.n_links))))


def test_mcf_single_path_capacity():
    topo = _line([20e6, 20e6, 20e6])
    c = Commodity(1, 0, 3, 15e6)
    a = FlowAssignment.from_edge_flows(topo, {1: {(0, 1): 15e6, (1, 2): 15e6, (2, 3): 15e6}})
    assert verify_mcf(topo, [c], a)
    narrow = _line([20e6, 10e6, 20e6])
    a = FlowAssignment.from_edge_flows(narrow, {1: {(0, 1): 15e6, (1, 2): 15e6, (2, 3): 15e6}})
    assert not verify_mcf(narrow, [c], a)


def test_mcf_conservation_and_demand():
    topo = _line([20e6, 20e6])
    c = Commodity(1, 0, 2, 5e6)
    leak = FlowAssignment.from_edge_flows(topo, {1: {(0, 1): 5e6, (1, 2): 4e6}})
    assert not verify_mcf(topo, [c], leak)
    short = FlowAssignment.from_edge_flows(topo, {1: {(0, 1): 4e6, (1, 2): 4e6}})
    assert not verify_mcf(topo, [c], short)


def test_mcf_skew_symmetry():
    topo = _line([20e6])
    c = Commodity(1, 0, 1, 5e6)
    bad = FlowAssignment.from_edge_flows(topo, {1: {(0, 1): 5e6, (1, 0): 5e6}})
    assert not verify_mcf(topo, [c], bad)


def test_mcf_tolerance_is_one_bit():
    topo = _line([10e6])
    c = Commodity(1, 0, 1, 10e6 + 0.5)
    a = FlowAssignment.from_edge_flows(topo, {1: {(0, 1): 10e6 + 0.5}})
    assert verify_mcf(topo, [c], a)
    c = Commodity(1, 0, 1, 10e6 + 2)
    a = FlowAssignment.from_edge_flows(topo, {1: {(0, 1): 10e6 + 2}})
    assert not verify_mcf(topo, [c], a)


def test_mcf_rejects_mismatched_assignment():
    topo = _line([10e6])
    with pytest.raises(ValueError):
        verify_mcf(topo, [Commodity(1, 0, 1, 1.0)], FlowAssignment((2,), np.zeros((1, topo.n_links))))
    with pytest.raises(ValueError):
        verify_mcf(topo, [Commodity(1, 0, 1, 1.0)], FlowAssignment((1,), np.zeros((1, 5))))


class _Res:
    def __init__(self, id, path, demand):
        self.id, self.path, self.demand = id, path, demand


def test_reservations_to_assignment(tree):
    p = tree.path([8, 4, 2, 5, 10])
    cs, a = reservations_to_assignment(tree, [_Res(7, p, 10e6)])
    assert cs == [Commodity(7, 8, 10, 10e6)]
    assert np.count_nonzero(a.flows) == 8
    for lk in p.links:
        assert a.flows[0, lk] == 10e6 and a.flows[0, tree.twin[lk]] == -10e6
    assert verify_mcf(tree, cs, a)
    assert verify_mcf(tree, *reservations_to_assignment(tree, []))


def test_shared_link_sum(tree):
    p1, p2 = tree.path([8, 4, 2, 5, 10]), tree.path([9, 4, 2, 5, 11])
    assert verify_mcf(tree, *reservations_to_assignment(tree, [_Res(1, p1, 10e6), _Res(2, p2, 10e6)]))
    assert not verify_mcf(tree, *reservations_to_assignment(tree, [_Res(1, p1, 10e6), _Res(2, p2, 11e6)]))


def test_opposite_directions_do_not_share_capacity(tree):
    p1, p2 = tree.path([8, 4, 2, 5, 10]), tree.path([10, 5, 2, 4, 8])
    assert verify_mcf(tree, *reservations_to_assignment(tree, [_Res(1, p1, 15e6), _Res(2, p2, 15e6)]))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_mcf_agrees_with_constraint_oracle(seed):
    rng = np.random.default_rng(seed)
    topo = random_switch_graph(rng, int(rng.integers(2, 7)))
    ids = [int(x) for x in topo.node_ids]
    commodities, edge_flows = [], {}
    for cid in range(int(rng.integers(1, 4))):
        s, t = (int(x) for x in rng.choice(ids, 2, replace=False))
        d = float(rng.choice([1e6, 5e6, 10e6]))
        commodities.append(Commodity(cid, s, t, d))
        flows = {}
        path = first_fit_place(topo, Commodity(cid, s, t, 0.0))
        for u, v in zip(path.nodes, path.nodes[1:]):
            flows[(u, v)] = d * float(rng.choice([1.0, 1.0, 0.5]))
        if rng.random() < 0.2:
            u, v = path.nodes[0], path.nodes[1]
            flows[(v, u)] = d
        edge_flows[cid] = flows
    full = {cid: {} for cid in edge_flows}
    for cid, flows in edge_flows.items():
        for (u, v), f in flows.items():
            full[cid][(u, v)] = f
            full[cid].setdefault((v, u), -f)
    a = FlowAssignment.from_edge_flows(topo, edge_flows)
    assert verify_mcf(topo, commodities, a) == mcf_feasible(topo, commodities, full)
