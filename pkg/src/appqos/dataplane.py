"""Fluid, discrete-time data plane with HTB-like per-link queue classes.

Every tick each active flow pushes its offered rate (clipped at its ceiling)
into the first link of its path; links allocate capacity with
:func:`appqos.kernels.allocate` and whatever a link does not carry is counted
as dropped. Queue depth is a backlog indicator for delay probes only: it fills
while a link is overdriven (up to ``buffer_bytes``) and drains with spare
capacity; it does not feed back into throughput.
"""
from __future__ import annotations

import csv
import io
import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .topology import Path, Topology

__all__ = ["SimFlow", "FlowRule", "QueueConfig", "QueueConfigError", "RateReport", "DataPlane",
           "TICK", "WINDOW", "reports_to_csv"]

TICK = 0.01
WINDOW = 0.5
_EPS = 1e-9


class QueueConfigError(RuntimeError):
    """Guaranteed rates on a link would exceed its capacity."""


@dataclass
class SimFlow:
    """A traffic source. ``offered`` is a constant rate or a sorted list of
    ``(time, rate)`` steps (rate holds until the next step)."""

    id: str
    source: int
    dest: int
    offered: float | Sequence[tuple[float, float]]
    start: float = 0.0
    stop: float = math.inf
    key: object = None

    def __post_init__(self):
        if isinstance(self.offered, (int, float)):
            if self.offered < 0:
                raise ValueError("offered rate must be non-negative")
        else:
            self.offered = [(float(t), float(r)) for t, r in self.offered]
            if any(r < 0 for _, r in self.offered):
                raise ValueError("offered rate must be non-negative")

    def rate_at(self, t: float) -> float:
        if isinstance(self.offered, (int, float)):
            return float(self.offered)
        rate = 0.0
        for when, r in self.offered:
            if when > t + _EPS:
                break
            rate = r
        return rate


@dataclass(frozen=True)
class FlowRule:
    path: Path | None
    min_rate: float = 0.0
    max_rate: float = math.inf

    @property
    def kind(self) -> str:
        if self.min_rate > 0:
            return "reserved"
        if self.max_rate < math.inf:
            return "capped"
        return "best_effort"


@dataclass
class QueueConfig:
    """Per-link queue classes: ``entries[link][flow_key] = (min_rate, max_rate)``."""

    entries: dict[int, dict[object, tuple[float, float]]] = field(default_factory=dict)

    def classes(self, link: int) -> dict[object, tuple[float, float]]:
        return self.entries.get(link, {})

    def total_min(self, link: int) -> float:
        return sum(m for m, _ in self.classes(link).values())


@dataclass
class RateReport:
    flow_id: str
    window: float
    samples: list[tuple[float, float]]  # (window start, bits/s)

    @property
    def rates(self) -> np.ndarray:
        return np.array([r for _, r in self.samples])

    def mean(self) -> float:
        return float(self.rates.mean()) if self.samples else 0.0


def reports_to_csv(reports: Sequence[RateReport]) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["flow", "window_start", "mbps"])
    for rep in reports:
        for start, rate in rep.samples:
            out.writerow([rep.flow_id, f"{start:.2f}", f"{rate / 1e6:.6f}"])
    return buf.getvalue()


class DataPlane:
    def __init__(self, topo: Topology, tick: float = TICK, window: float = WINDOW, *,
                 packet_size: int = 1500, buffer_bytes: float = 150_000.0):
        per_window = window / tick
        if abs(per_window - round(per_window)) > 1e-9 or per_window < 1:
            raise ValueError("report window must be a whole number of ticks")
        self.topo = topo
        self.tick = tick
        self.window = window
        self.ticks_per_window = int(round(per_window))
        self.packet_size = packet_size
        self.buffer_bytes = buffer_bytes
        n = topo.n_links
        self.tx_bytes = np.zeros(n)
        self.dropped_packets = np.zeros(n)
        self.forwarded_packets = np.zeros(n)
        self.queued_bytes = np.zeros(n)
        self.link_rate = np.zeros(n)  # allocated bits/s during the last tick
        self.link_arrival = np.zeros(n)
        self.flows: dict[str, SimFlow] = {}
        self.queues = QueueConfig()
        self.ticks = 0
        self._rules: dict[object, dict[object, FlowRule]] = {}
        self._windows: dict[str, dict[int, list]] = {}
        self._last_rate: dict[str, float] = {}
        self._cache_key = None
        self._alloc = None

    @property
    def now(self) -> float:
        return self.ticks * self.tick

    # -- configuration ---------------------------------------------------------

    def add_flow(self, flow: SimFlow) -> None:
        if flow.id in self.flows:
            raise ValueError(f"duplicate flow id {flow.id!r}")
        self.flows[flow.id] = flow
        self._windows[flow.id] = {}

    @staticmethod
    def _combine(rules) -> FlowRule | None:
        rules = list(rules)
        if not rules:
            return None
        guaranteed = [r for r in rules if r.min_rate > 0 and r.path is not None]
        routed = guaranteed or [r for r in rules if r.path is not None]
        return FlowRule(
            path=routed[-1].path if routed else None,
            min_rate=max(r.min_rate for r in rules),
            max_rate=min(r.max_rate for r in rules),
        )

    def rule(self, key) -> FlowRule | None:
        return self._combine(self._rules.get(key, {}).values())

    def _set(self, key, tag, rule: FlowRule | None) -> None:
        parts = dict(self._rules.get(key, {}))
        if rule is None:
            parts.pop(tag, None)
        else:
            parts[tag] = rule
        old, new = self.rule(key), self._combine(parts.values())
        if new is not None and new.path is not None:
            for lk in new.path.links:
                others = sum(m for k, (m, _) in self.queues.classes(lk).items() if k != key)
                if others + new.min_rate > self.topo.capacity[lk] * (1 + 1e-12):
                    raise QueueConfigError(
                        f"guaranteed rates exceed capacity on {self.topo.link_name(lk)}")
        if parts:
            self._rules[key] = parts
        else:
            self._rules.pop(key, None)
        if old is not None and old.path is not None:
            for lk in old.path.links:
                self.queues.entries.get(lk, {}).pop(key, None)
        if new is not None and new.path is not None:
            for lk in new.path.links:
                self.queues.entries.setdefault(lk, {})[key] = (new.min_rate, new.max_rate)
        self._cache_key = None

    def install_reservation(self, res) -> None:
        """Apply an admitted reservation; effective from the next tick."""
        if res.cap is not None:
            self.install_cap(res.key, res.cap, res.path, tag=res.id)
        else:
            self._set(res.key, res.id, FlowRule(res.path, min_rate=res.demand))

    def install_cap(self, key, max_rate: float, path: Path | None = None, tag=None) -> None:
        self._set(key, ("cap", key) if tag is None else tag, FlowRule(path, max_rate=max_rate))

    def remove(self, key, tag=None) -> None:
        """Drop the rules of ``key`` (only ``tag`` if given); the flow reverts to best effort."""
        tags = list(self._rules.get(key, {})) if tag is None else [tag]
        for t in tags:
            self._set(key, t, None)

    def flow_path(self, flow: SimFlow) -> Path:
        rule = self.rule(flow.key) if flow.key is not None else None
        if rule is not None and rule.path is not None:
            return rule.path
        return self.topo.default_route(flow.source, flow.dest)

    # -- simulation -------------------------------------------------------------

    def _active(self, i: int) -> list[SimFlow]:
        t = i * self.tick
        return [f for f in self.flows.values() if f.start <= t + _EPS and t + _EPS < f.stop]

    def _allocate(self, flows: list[SimFlow], t: float):
        topo = self.topo
        n = len(flows)
        paths = [self.flow_path(f) for f in flows]
        rules = [self.rule(f.key) if f.key is not None else None for f in flows]
        offered = np.array([f.rate_at(t) for f in flows])
        min_rate = np.array([r.min_rate if r else 0.0 for r in rules])
        max_rate = np.array([r.max_rate if r else math.inf for r in rules])
        key = (tuple(f.id for f in flows), tuple(p.links for p in paths), offered.tobytes(),
               min_rate.tobytes(), max_rate.tobytes())
        if key == self._cache_key:
            return self._alloc
        n_hops = np.array([p.hops for p in paths], dtype=np.int64)
        width = int(n_hops.max()) if n else 0
        flow_col, hop_col, link_col = [], [], []
        for f, p in enumerate(paths):
            for h, lk in enumerate(p.links):
                flow_col.append(f)
                hop_col.append(h)
                link_col.append(lk)
        link_col = np.asarray(link_col, dtype=np.int64)
        order = np.argsort(link_col, kind="stable")
        entry_flow = np.asarray(flow_col, dtype=np.int64)[order]
        entry_hop = np.asarray(hop_col, dtype=np.int64)[order]
        entry_link = link_col[order]
        entry_ptr = np.zeros(topo.n_links + 1, dtype=np.int64)
        np.cumsum(np.bincount(entry_link, minlength=topo.n_links), out=entry_ptr[1:])
        shaped = np.minimum(offered, max_rate)
        best_effort = (min_rate <= 0) & np.isinf(max_rate)
        arrival = np.zeros((n, max(width, 1)))
        out = np.zeros((n, max(width, 1)))
        kernels.allocate(topo.capacity, entry_ptr, entry_flow, entry_hop, n_hops,
                         shaped, min_rate, max_rate, best_effort, arrival, out)
        link_out = np.zeros(topo.n_links)
        link_in = np.zeros(topo.n_links)
        if n:
            np.add.at(link_out, entry_link, out[entry_flow, entry_hop])
            np.add.at(link_in, entry_link, arrival[entry_flow, entry_hop])
        shaper_drop = np.zeros(topo.n_links)
        first = np.array([p.links[0] for p in paths], dtype=np.int64)
        if n:
            np.add.at(shaper_drop, first, offered - shaped)
        delivered = out[np.arange(n), n_hops - 1] if n else np.zeros(0)
        self._cache_key = key
        self._alloc = (delivered, link_out, link_in, shaper_drop)
        return self._alloc

    def step(self, dt: float | None = None) -> None:
        """Advance one tick."""
        if dt is not None and abs(dt - self.tick) > 1e-12:
            raise ValueError(f"step must advance exactly one tick ({self.tick} s)")
        i = self.ticks
        t = i * self.tick
        flows = self._active(i)
        delivered, link_out, link_in, shaper_drop = self._allocate(flows, t)
        dt = self.tick
        sent = link_out * dt / 8.0
        self.tx_bytes += sent
        self.forwarded_packets += sent / self.packet_size
        excess = link_in - link_out
        self.dropped_packets += (excess + shaper_drop) * dt / 8.0 / self.packet_size
        spare = np.clip(self.topo.capacity - link_out, 0.0, None)
        self.queued_bytes = np.where(
            excess > 0,
            np.minimum(self.buffer_bytes, self.queued_bytes + excess * dt / 8.0),
            np.maximum(0.0, self.queued_bytes - spare * dt / 8.0),
        )
        self.link_rate = link_out
        self.link_arrival = link_in
        w = i // self.ticks_per_window
        for f, rate in zip(flows, delivered):
            acc = self._windows[f.id].setdefault(w, [0.0, 0])
            acc[0] += float(rate)
            acc[1] += 1
            self._last_rate[f.id] = float(rate)
        self.ticks += 1

    def run_until(self, t: float) -> None:
        while self.now + _EPS < t:
            self.step()

    def delivered_rate(self, flow_id: str) -> float:
        """Rate delivered to the flow's sink during the last tick it was active."""
        return self._last_rate.get(flow_id, 0.0)

    def report(self, flow_id: str, horizon: float | None = None) -> RateReport:
        if flow_id not in self.flows:
            raise KeyError(f"unknown flow {flow_id!r}")
        samples = []
        for w, (total, count) in sorted(self._windows[flow_id].items()):
            start = w * self.window
            if horizon is not None and start + _EPS >= horizon:
                break
            samples.append((start, total / count))
        return RateReport(flow_id, self.window, samples)
