"""``appqos-bench``: run the experiments and write CSV tables.

    appqos-bench --experiment reservation [--topology F] [--scenario F] [--policies F]
    appqos-bench --experiment path-timing --fat-tree-k 4:44:4 [--rounds 15]
    appqos-bench --experiment throughput --fat-tree-k 4,8,16 [--rounds 15] [--duration 1]
    appqos-bench gnuplot RESULT.csv

Every output starts with ``#`` provenance lines (tool version, backend,
config hash). Functional CSVs are byte-identical for a fixed configuration;
timing CSVs are not.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import platform
import sys
from importlib import metadata, resources

import numpy as np

from . import _accel
from .admission import load_policies
from .controller import bench_handler_throughput, bench_path_time, run
from .scenario import load_scenario
from .topology import load_topology

__all__ = ["main", "parse_k_list", "reservation_csv", "path_timing_csv", "throughput_csv", "to_gnuplot"]

EXPERIMENTS = ("reservation", "path-timing", "throughput")
DEFAULT_K = "4:44:4"


class UsageError(Exception):
    pass


def parse_k_list(text: str) -> list[int]:
    """``4,8,12`` or an inclusive range ``start:stop[:step]``."""
    try:
        if ":" in text:
            parts = [int(p) for p in text.split(":")]
            if len(parts) not in (2, 3):
                raise ValueError
            start, stop, step = parts[0], parts[1], parts[2] if len(parts) == 3 else 2
            if step <= 0:
                raise ValueError
            ks = list(range(start, stop + 1, step))
        else:
            ks = [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise UsageError(f"bad k list {text!r}") from None
    if not ks:
        raise UsageError("empty k list")
    bad = [k for k in ks if k < 2 or k % 2]
    if bad:
        raise UsageError(f"fat-tree k must be even and >= 2, got {bad[0]}")
    return ks


def _data(name: str):
    return resources.files("appqos").joinpath("data", name)


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _provenance(experiment: str, config: dict, inputs: dict[str, bytes]) -> str:
    h = hashlib.sha256()
    for key in sorted(config):
        h.update(f"{key}={config[key]}\n".encode())
    for name in sorted(inputs):
        h.update(name.encode() + b"\0" + inputs[name])
    numba_version = metadata.version("numba") if _accel.HAVE_NUMBA else "absent"
    lines = [
        f"# appqos-bench {_version()} experiment={experiment}",
        f"# config_sha256={h.hexdigest()}",
        "# " + " ".join(f"{k}={config[k]}" for k in sorted(config)),
        f"# python={platform.python_version()} numpy={np.__version__} numba={numba_version} "
        f"backend={_accel.backend_name()}",
    ]
    return "\n".join(lines) + "\n"


def _csv(header: list[str], rows) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(header)
    out.writerows(rows)
    return buf.getvalue()


def reservation_csv(topo, scenario, policies, flow_id: str = "f2") -> tuple[str, dict[str, float]]:
    """f2's windows with and without negotiated QoS, plus a mean row per mode."""
    rows, means = [], {}
    for mode, sc in (("with_api", scenario), ("without_api", scenario.without_qos())):
        result = run(sc, topo, policies)
        if flow_id not in result.reports:
            raise UsageError(f"scenario does not report flow {flow_id!r}")
        rep = result.reports[flow_id]
        rows += [[mode, f"{start:.2f}", f"{rate / 1e6:.6f}"] for start, rate in rep.samples]
        means[mode] = rep.mean() / 1e6
    rows += [[mode, "mean", f"{m:.6f}"] for mode, m in means.items()]
    return _csv(["mode", "window_start", "mbps"], rows), means


def path_timing_csv(ks, rounds: int, seed: int) -> str:
    rows = [[k, k * k // 2, f"{bench_path_time(k, rounds, seed):.6e}"] for k in ks]
    return _csv(["k", "edge_switches", "avg_path_time_seconds"], rows)


def throughput_csv(ks, rounds: int, seed: int, duration: float) -> str:
    rows = []
    for k in ks:
        with_api = bench_handler_throughput(k, True, duration, rounds, seed)
        without = bench_handler_throughput(k, False, duration, rounds, seed)
        rows.append([k, f"{with_api:.2f}", f"{without:.2f}"])
    return _csv(["k", "flows_per_second_with_api", "flows_per_second_without"], rows)


def to_gnuplot(text: str) -> str:
    """Whitespace-separated columns; provenance and header become comments."""
    out = []
    reader = csv.reader(line for line in text.splitlines() if not line.startswith("#"))
    for i, row in enumerate(reader):
        out.append(("# " if i == 0 else "") + " ".join(row))
    comments = [line for line in text.splitlines() if line.startswith("#")]
    return "\n".join(comments + out) + "\n"


def _read(path) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="appqos-bench", description="Run the QoS controller experiments.")
    p.add_argument("--experiment", required=True, choices=EXPERIMENTS)
    where = p.add_mutually_exclusive_group()
    where.add_argument("--topology", metavar="FILE", help="topology file (reservation)")
    where.add_argument("--fat-tree-k", metavar="LIST", help=f"k values, e.g. 4,8,12 or 4:44:4 (default {DEFAULT_K})")
    p.add_argument("--scenario", metavar="FILE")
    p.add_argument("--policies", metavar="FILE")
    p.add_argument("--rounds", type=int, default=15, metavar="N")
    p.add_argument("--seed", type=int, default=0, metavar="N")
    p.add_argument("--duration", type=float, default=1.0, metavar="SECONDS",
                   help="wall-clock length of one throughput round")
    p.add_argument("--out", metavar="FILE", help="output CSV (default stdout)")
    return p


def _experiment(args) -> str:
    if args.rounds < 1:
        raise UsageError("--rounds must be positive")
    if args.duration <= 0:
        raise UsageError("--duration must be positive")
    if args.experiment == "reservation":
        if args.fat_tree_k:
            raise UsageError("reservation runs on a topology file, not --fat-tree-k")
        files = {
            "topology": args.topology or _data("eval_tree.topo"),
            "scenario": args.scenario or _data("reservation.scn"),
            "policies": args.policies or _data("policies.txt"),
        }
        inputs = {name: _read(path) for name, path in files.items()}
        try:
            topo = load_topology(files["topology"])
            scenario = load_scenario(files["scenario"])
            policies = load_policies(files["policies"])
            body, _ = reservation_csv(topo, scenario, policies)
        except (ValueError, KeyError) as exc:
            raise UsageError(str(exc)) from None
        config = {"seed": args.seed}
    else:
        if args.topology or args.scenario or args.policies:
            raise UsageError(f"{args.experiment} takes --fat-tree-k, not input files")
        ks = parse_k_list(args.fat_tree_k or DEFAULT_K)
        inputs = {}
        config = {"k": ",".join(map(str, ks)), "rounds": args.rounds, "seed": args.seed}
        if args.experiment == "path-timing":
            body = path_timing_csv(ks, args.rounds, args.seed)
        else:
            config["duration"] = args.duration
            body = throughput_csv(ks, args.rounds, args.seed, args.duration)
    return _provenance(args.experiment, config, inputs) + body


def _write(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        try:
            with open(out, "w", encoding="utf-8") as fh:
                fh.write(text)
        except OSError as exc:
            raise UsageError(f"cannot write {out}: {exc.strerror}") from None


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if argv and argv[0] == "gnuplot":
            gp = argparse.ArgumentParser(prog="appqos-bench gnuplot",
                                         description="Convert a result CSV to gnuplot columns.")
            gp.add_argument("csv")
            gp.add_argument("--out", metavar="FILE")
            args = gp.parse_args(argv[1:])
            _write(to_gnuplot(_read(args.csv).decode("utf-8")), args.out)
            return 0
        args = _parser().parse_args(argv)
        _write(_experiment(args), args.out)
    except UsageError as exc:
        print(f"appqos-bench: error: {exc}", file=sys.stderr)
        return 2
    return 0
