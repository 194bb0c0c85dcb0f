import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from appqos import kernels
from appqos.admission import FlowKey, Function, Reservation
from appqos.dataplane import DataPlane, QueueConfigError, SimFlow, reports_to_csv
from oracles import random_host_graph, single_link_allocation


def reservation(rid, key, path, demand=0.0, cap=None):
    fn = Function.LIMIT_FLOW_RATE if cap is not None else Function.RESERVE_MIN_BW
    return Reservation(rid, rid, "app", fn, key, path, demand, cap)


def fig4(tree, reserve=False, cap=False):
    plane = DataPlane(tree)
    h1, h2, h7, h8 = (tree.resolve(n) for n in ("h1", "h2", "h7", "h8"))
    plane.add_flow(SimFlow("f1", h2, h7, 30e6))
    plane.add_flow(SimFlow("f2", h1, h8, 10e6, key="f2"))
    path = tree.default_route(h1, h8)
    if reserve:
        plane.install_reservation(reservation(1, "f2", path, demand=10e6))
    if cap:
        plane.install_reservation(reservation(2, "f2", path, cap=10e6))
    plane.run_until(10.0)
    return plane


def test_single_flow_under_capacity(tree):
    plane = DataPlane(tree)
    plane.add_flow(SimFlow("f", tree.resolve("h1"), tree.resolve("h8"), 5e6))
    plane.run_until(1.0)
    assert plane.report("f").rates.tolist() == [5e6, 5e6]


def test_best_effort_share_proportional(tree):
    plane = fig4(tree)
    f2, f1 = plane.report("f2"), plane.report("f1")
    assert len(f2.samples) == 20
    assert f2.mean() == pytest.approx(20e6 * 10 / 40)
    assert f1.mean() == pytest.approx(20e6 * 30 / 40)


def test_reserved_flow_gets_its_rate(tree):
    plane = fig4(tree, reserve=True, cap=True)
    f2 = plane.report("f2", horizon=10.0)
    assert len(f2.samples) == 20 and np.all(f2.rates == 10e6)
    assert plane.report("f1").mean() == pytest.approx(10e6)


def test_reserved_flow_borrows_spare(tree):
    plane = DataPlane(tree)
    h1, h8 = tree.resolve("h1"), tree.resolve("h8")
    plane.add_flow(SimFlow("f", h1, h8, 30e6, key="k"))
    plane.install_reservation(reservation(1, "k", tree.default_route(h1, h8), demand=5e6))
    plane.run_until(0.5)
    assert plane.report("f").mean() == pytest.approx(20e6)


def test_queue_config_bookkeeping(tree):
    plane = DataPlane(tree)
    h1, h8 = tree.resolve("h1"), tree.resolve("h8")
    path = tree.default_route(h1, h8)
    plane.install_reservation(reservation(1, "k", path, demand=10e6))
    for lk in path.links:
        assert plane.queues.classes(lk) == {"k": (10e6, math.inf)}
    plane.install_reservation(reservation(2, "k", path, cap=12e6))
    assert plane.queues.classes(path.links[0]) == {"k": (10e6, 12e6)}
    plane.remove("k", tag=1)
    assert plane.queues.classes(path.links[0]) == {"k": (0.0, 12e6)}
    plane.remove("k")
    assert all(plane.queues.total_min(lk) == 0 and not plane.queues.classes(lk) for lk in range(tree.n_links))
    assert plane.rule("k") is None


def test_remove_reverts_to_best_effort(tree):
    plane = DataPlane(tree)
    h1, h2, h7, h8 = (tree.resolve(n) for n in ("h1", "h2", "h7", "h8"))
    plane.add_flow(SimFlow("f1", h2, h7, 30e6))
    plane.add_flow(SimFlow("f2", h1, h8, 10e6, key="k"))
    plane.install_reservation(reservation(1, "k", tree.default_route(h1, h8), demand=10e6))
    plane.run_until(1.0)
    plane.remove("k")
    plane.run_until(2.0)
    assert plane.report("f2").rates.tolist() == [10e6, 10e6, 5e6, 5e6]


def test_cap_is_a_ceiling(tree):
    plane = DataPlane(tree)
    h1, h8 = tree.resolve("h1"), tree.resolve("h8")
    plane.add_flow(SimFlow("f", h1, h8, 30e6, key="k"))
    plane.install_cap("k", 10e6)
    plane.run_until(2.0)
    assert np.all(plane.report("f").rates == 10e6)
    assert plane.rule("k").kind == "capped"


def test_over_commit_refused(tree):
    plane = DataPlane(tree)
    path = tree.default_route(tree.resolve("h1"), tree.resolve("h8"))
    plane.install_reservation(reservation(1, "a", path, demand=15e6))
    with pytest.raises(QueueConfigError):
        plane.install_reservation(reservation(2, "b", path, demand=6e6))
    assert plane.rule("b") is None and plane.queues.total_min(path.links[0]) == 15e6


def test_stopped_flow_report_ends(tree):
    plane = DataPlane(tree)
    plane.add_flow(SimFlow("f", tree.resolve("h1"), tree.resolve("h8"), 5e6, stop=5.0))
    plane.run_until(10.0)
    assert len(plane.report("f").samples) == 10


def test_step_schedule(tree):
    plane = DataPlane(tree)
    plane.add_flow(SimFlow("f", tree.resolve("h1"), tree.resolve("h8"), [(0, 4e6), (0.5, 8e6)]))
    plane.run_until(1.0)
    assert plane.report("f").rates.tolist() == [4e6, 8e6]


def test_errors(tree):
    plane = DataPlane(tree)
    with pytest.raises(KeyError):
        plane.report("nope")
    with pytest.raises(ValueError):
        plane.step(0.02)
    with pytest.raises(ValueError):
        DataPlane(tree, tick=0.03, window=0.5)
    with pytest.raises(ValueError):
        SimFlow("x", 8, 15, -1.0)
    plane.add_flow(SimFlow("a", 8, 15, 1.0))
    with pytest.raises(ValueError):
        plane.add_flow(SimFlow("a", 8, 15, 1.0))


def test_counters_and_drops(tree):
    plane = fig4(tree)
    # f1 is already clipped to 20 M by its access link, so s4>s2 sees 20 + 10
    lk = tree.link_between(4, 2)
    assert plane.tx_bytes[lk] == pytest.approx(20e6 * 10 / 8)
    assert plane.dropped_packets[lk] == pytest.approx(10e6 * 10 / 8 / 1500)
    assert plane.queued_bytes[lk] == plane.buffer_bytes
    assert plane.dropped_packets[tree.link_between(2, 1)] == 0.0


def test_csv(tree):
    plane = fig4(tree)
    text = reports_to_csv([plane.report("f2")])
    lines = text.splitlines()
    assert lines[0] == "flow,window_start,mbps" and lines[1] == "f2,0.00,5.000000" and len(lines) == 21


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_single_link_matches_bisection_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    cap = float(rng.choice([5e6, 10e6, 20e6]))
    kind = rng.integers(3, size=n)
    min_rate = np.where(kind == 0, rng.uniform(0, cap / n, n), 0.0)
    max_rate = np.where(kind == 1, rng.uniform(0, cap, n), np.inf)
    best_effort = kind == 2
    offered = rng.uniform(0, 1.5 * cap, n)
    shaped = np.minimum(offered, max_rate)
    arrival = np.zeros((n, 1))
    out = np.zeros((n, 1))
    kernels.allocate(np.array([cap]), np.array([0, n]), np.arange(n), np.zeros(n, np.int64),
                     np.ones(n, np.int64), shaped, min_rate, max_rate, best_effort, arrival, out)
    expect = single_link_allocation(cap, shaped, min_rate, max_rate, best_effort, shaped)
    np.testing.assert_allclose(out[:, 0], expect, rtol=1e-7, atol=1.0)


def _random_plane(seed):
    rng = np.random.default_rng(seed)
    topo = random_host_graph(rng, int(rng.integers(2, 6)), int(rng.integers(2, 7)))
    plane = DataPlane(topo)
    hosts = topo.hosts()
    guaranteed = {}
    for i in range(int(rng.integers(1, 6))):
        a, b = (int(x) for x in rng.choice(hosts, 2, replace=False))
        key = f"k{i}"
        offered = float(rng.uniform(0, 30e6))
        plane.add_flow(SimFlow(key, a, b, offered, start=float(rng.choice([0, 0.5])), key=key))
        path = topo.default_route(a, b)
        roll = rng.random()
        try:
            if roll < 0.4:
                m = float(rng.integers(1, 8)) * 1e6
                plane.install_reservation(reservation(i, key, path, demand=m))
                guaranteed[key] = (m, offered)
            elif roll < 0.6:
                plane.install_cap(key, float(rng.uniform(1e6, 10e6)))
        except QueueConfigError:
            pass
    return plane, guaranteed


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_allocation_invariants(seed):
    plane, guaranteed = _random_plane(seed)
    cap = plane.topo.capacity
    for _ in range(100):
        plane.step()
        assert np.all(plane.link_rate <= cap * (1 + 1e-12))
        busy = plane.link_arrival >= cap
        np.testing.assert_allclose(plane.link_rate[busy], cap[busy], rtol=1e-9)
        assert np.all(plane.link_rate <= plane.link_arrival * (1 + 1e-12) + 1e-9)
    for fid, flow in plane.flows.items():
        rep = plane.report(fid)
        assert np.all(rep.rates <= flow.offered * (1 + 1e-12) + 1e-6)
        rule = plane.rule(flow.key)
        if rule is not None and rule.max_rate < math.inf:
            assert np.all(rep.rates <= rule.max_rate * (1 + 1e-12))
        if fid in guaranteed:
            m, offered = guaranteed[fid]
            if offered >= m:
                assert np.all(rep.rates >= m)
            else:
                assert np.all(rep.rates >= offered * (1 - 1e-12))


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_deterministic(seed):
    a, _ = _random_plane(seed)
    b, _ = _random_plane(seed)
    a.run_until(1.0)
    b.run_until(1.0)
    for fid in a.flows:
        assert a.report(fid) == b.report(fid)
