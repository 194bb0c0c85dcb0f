"""Controller-side network snapshot: adaptive port polling and delay probes.

Polling follows a Payless-style rule: a port whose byte rate moved by more
than ``threshold`` (relative) since the previous poll is polled ``alpha``
times more often, a quiet port ``alpha`` times less often, always within
``[tau_min, tau_max]``.
"""
from __future__ import annotations

import csv
import io
import math
import threading
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .topology import Path, Topology, TopologyError

__all__ = ["PortStats", "Snapshot", "Monitor", "adapt_interval", "TAU_MIN", "TAU_MAX", "ALPHA", "THRESHOLD"]

TAU_MIN = 0.5
TAU_MAX = 5.0
ALPHA = 2.0
THRESHOLD = 0.10
DROP_WINDOW = 3


@dataclass
class PortStats:
    link: int
    window_bytes: float = 0.0  # bytes sent since the previous poll
    window_elapsed: float = 0.0
    window_drops: float = 0.0  # packets, summed over the last DROP_WINDOW polls
    window_forwarded: float = 0.0
    last_poll: float = 0.0
    poll_interval: float = TAU_MIN
    last_tx: float = 0.0
    last_dropped: float = 0.0
    last_forwarded: float = 0.0
    history: deque = field(default_factory=lambda: deque(maxlen=DROP_WINDOW))

    @property
    def drop_rate(self) -> float:
        return self.window_drops / max(1.0, self.window_drops + self.window_forwarded)

    @property
    def utilization(self) -> float:
        if self.window_elapsed <= 0:
            return 0.0
        return self.window_bytes * 8.0 / self.window_elapsed


def adapt_interval(prev: PortStats, delta_bytes: float, elapsed: float | None = None, *,
                   tau_min: float = TAU_MIN, tau_max: float = TAU_MAX,
                   alpha: float = ALPHA, threshold: float = THRESHOLD) -> float:
    """Next poll interval after observing ``delta_bytes`` over ``elapsed`` seconds.

    Activity is judged on byte *rates* so that a changed interval alone does
    not read as a burst.
    """
    if elapsed is None:
        elapsed = prev.poll_interval
    rate = delta_bytes / elapsed if elapsed > 0 else 0.0
    prev_rate = prev.window_bytes / prev.window_elapsed if prev.window_elapsed > 0 else 0.0
    if rate == prev_rate:
        change = 0.0
    elif prev_rate == 0.0:
        change = math.inf
    else:
        change = abs(rate - prev_rate) / prev_rate
    if change > threshold:
        return max(tau_min, prev.poll_interval / alpha)
    return min(tau_max, prev.poll_interval * alpha)


class Snapshot:
    """Latest per-link measurements; each link record is updated atomically."""

    def __init__(self, n_links: int):
        self.utilization = np.zeros(n_links)
        self.drop_rate = np.zeros(n_links)
        self.link_time = np.zeros(n_links)
        self.timestamp = 0.0
        self.delays: dict[tuple[int, ...], tuple[float, float]] = {}
        self._lock = threading.Lock()

    def update_link(self, link: int, utilization: float, drop_rate: float, now: float) -> None:
        with self._lock:
            self.utilization[link] = utilization
            self.drop_rate[link] = drop_rate
            self.link_time[link] = now
            if now > self.timestamp:
                self.timestamp = now

    def read_link(self, link: int) -> tuple[float, float, float]:
        with self._lock:
            return float(self.utilization[link]), float(self.drop_rate[link]), float(self.link_time[link])

    def record_delay(self, path: Path, delay: float, now: float) -> None:
        with self._lock:
            self.delays[path.nodes] = (delay, now)
            if now > self.timestamp:
                self.timestamp = now

    def view(self) -> Snapshot:
        """Consistent copy, safe to hand to another thread."""
        with self._lock:
            snap = Snapshot(len(self.utilization))
            snap.utilization[:] = self.utilization
            snap.drop_rate[:] = self.drop_rate
            snap.link_time[:] = self.link_time
            snap.timestamp = self.timestamp
            snap.delays = dict(self.delays)
        return snap

    def to_csv(self, topo: Topology) -> str:
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["link_id", "capacity", "utilization", "drop_rate", "delay", "timestamp"])
        with self._lock:
            for lk in range(topo.n_links):
                out.writerow([
                    topo.link_name(lk), repr(float(topo.capacity[lk])), repr(float(self.utilization[lk])),
                    repr(float(self.drop_rate[lk])), repr(float(topo.prop_delay[lk])), repr(float(self.link_time[lk])),
                ])
        return buf.getvalue()


class Monitor:
    """Polls counters exposed by the data plane and keeps a Snapshot current.

    ``counters`` needs ``tx_bytes``, ``dropped_packets``, ``forwarded_packets``
    and ``queued_bytes`` arrays indexed by half-link.
    """

    def __init__(self, topo: Topology, counters, snapshot: Snapshot | None = None, *,
                 tau_min: float = TAU_MIN, tau_max: float = TAU_MAX,
                 alpha: float = ALPHA, threshold: float = THRESHOLD):
        if not 0 < tau_min <= tau_max:
            raise ValueError("need 0 < tau_min <= tau_max")
        self.topo = topo
        self.counters = counters
        self.snapshot = snapshot if snapshot is not None else Snapshot(topo.n_links)
        self.tau_min, self.tau_max, self.alpha, self.threshold = tau_min, tau_max, alpha, threshold
        self.stats = [PortStats(link=lk, poll_interval=tau_min) for lk in range(topo.n_links)]

    def next_poll(self, link: int) -> float:
        st = self.stats[link]
        return st.last_poll + st.poll_interval

    def poll(self, link: int, now: float) -> PortStats:
        if not 0 <= link < self.topo.n_links:
            raise TopologyError(f"unknown link {link}")
        st = self.stats[link]
        c = self.counters
        tx = float(c.tx_bytes[link])
        dropped = float(c.dropped_packets[link])
        forwarded = float(c.forwarded_packets[link])
        elapsed = now - st.last_poll
        delta = tx - st.last_tx
        interval = adapt_interval(st, delta, elapsed if elapsed > 0 else None,
                                  tau_min=self.tau_min, tau_max=self.tau_max,
                                  alpha=self.alpha, threshold=self.threshold)
        st.history.append((dropped - st.last_dropped, forwarded - st.last_forwarded))
        st.window_drops = sum(d for d, _ in st.history)
        st.window_forwarded = sum(f for _, f in st.history)
        st.window_bytes = delta
        st.window_elapsed = elapsed
        st.last_tx, st.last_dropped, st.last_forwarded = tx, dropped, forwarded
        st.last_poll = now
        st.poll_interval = interval
        self.snapshot.update_link(link, st.utilization, st.drop_rate, now)
        return st

    def probe_delay(self, path: Path, now: float = 0.0) -> float:
        """Propagation plus current queueing delay along ``path``, recorded in the snapshot."""
        if not path.links:
            raise TopologyError("empty path")
        idx = np.fromiter(path.links, dtype=np.int64)
        queued = np.asarray(self.counters.queued_bytes, dtype=float)[idx]
        delay = float(np.sum(self.topo.prop_delay[idx] + queued * 8.0 / self.topo.capacity[idx]))
        self.snapshot.record_delay(path, delay, now)
        return delay
