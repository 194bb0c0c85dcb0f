"""Compare the numba kernels with their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--k 8,16,32] [--repeat 20]

Kernels are timed in-process (both variants are importable side by side).
The ``scenario`` rows run the bundled reservation experiment in a subprocess
per backend, selected through ``APPQOS_DISABLE_NUMBA``.
"""
from __future__ import annotations

import argparse
import os
import statistics
import subprocess
import sys
import time

import numpy as np

from appqos import _accel, kernels
from appqos.controller import inter_pod_commodities
from appqos.topology import generate_fat_tree

SCENARIO_SNIPPET = """
import time
from importlib import resources
from appqos.admission import load_policies
from appqos.controller import run
from appqos.scenario import load_scenario
from appqos.topology import load_topology
d = resources.files("appqos").joinpath("data")
topo, sc, pol = load_topology(d / "eval_tree.topo"), load_scenario(d / "reservation.scn"), load_policies(d / "policies.txt")
run(sc, topo, pol)
t = time.perf_counter()
run(sc, topo, pol)
print(time.perf_counter() - t)
"""


def _time(fn, repeat: int) -> float:
    fn()
    samples = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t)
    return statistics.median(samples)


def kernel_rows(k: int, repeat: int):
    topo = generate_fat_tree(k)
    cs = inter_pod_commodities(topo, k)
    zeros = np.zeros(topo.n_links)
    hops = topo.default_max_hops
    graph = (topo.out_ptr, topo.out_link, topo.in_ptr, topo.in_link, topo.link_src, topo.link_dst)
    s, t = topo.index_of[cs[0].source], topo.index_of[cs[0].sink]
    sources = np.array([topo.index_of[c.source] for c in cs], np.int64)
    sinks = np.array([topo.index_of[c.sink] for c in cs], np.int64)
    demands = np.full(len(cs), 1e6)
    mask = np.ones(topo.n_links, np.bool_)
    pairs = {
        "hop_distances": (kernels.hop_distances_numba, kernels.hop_distances_numpy,
                          (topo.in_ptr, topo.in_link, topo.link_src, mask, t, -1, 1 << 30)),
        "first_fit_links": (kernels.first_fit_links_numba, kernels.first_fit_links_numpy,
                            (topo.capacity, topo.reserved, zeros, 1e6, s, t, hops, *graph)),
        "first_fit_batch": (kernels.first_fit_batch_numba, kernels.first_fit_batch_numpy,
                            (topo.capacity, topo.reserved, zeros, demands, sources, sinks, hops, *graph)),
    }
    for name, (fast, slow, args) in pairs.items():
        a, b = fast(*args), slow(*args)
        same = all(np.array_equal(x, y) for x, y in zip(a, b)) if isinstance(a, tuple) else np.array_equal(a, b)
        if not same:
            raise SystemExit(f"{name}: backends disagree at k={k}")
        tf, ts = _time(lambda: fast(*args), repeat), _time(lambda: slow(*args), repeat)
        yield name, k, tf, ts


def scenario_seconds(disable: bool) -> float:
    env = dict(os.environ, APPQOS_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", SCENARIO_SNIPPET], env=env, check=True,
                         capture_output=True, text=True)
    return float(out.stdout.strip())


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--k", default="8,16,32")
    p.add_argument("--repeat", type=int, default=20)
    p.add_argument("--skip-scenario", action="store_true")
    args = p.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        print("numba is not installed; nothing to compare", file=sys.stderr)
        return 1
    print("kernel,k,numba_seconds,numpy_seconds,speedup")
    for k in (int(x) for x in args.k.split(",")):
        for name, kk, tf, ts in kernel_rows(k, args.repeat):
            print(f"{name},{kk},{tf:.3e},{ts:.3e},{ts / tf:.1f}")
    if not args.skip_scenario:
        tf, ts = scenario_seconds(False), scenario_seconds(True)
        print(f"reservation_scenario,-,{tf:.3e},{ts:.3e},{ts / tf:.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
