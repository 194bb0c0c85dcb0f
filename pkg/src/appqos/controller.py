"""Controller event loop and the experiment drivers built on it.

One thread owns all mutable state. Other threads may ``post`` events; the
loop processes them strictly in enqueue order, invoking each kind's handlers
in registration order. After the queue runs dry the idle hooks run (the
admission module decides its queued requests there); anything they post is
drained before ``drain`` returns.
"""
from __future__ import annotations

import csv
import enum
import heapq
import io
import itertools
import math
import threading
import time
from collections import deque
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field

import numpy as np

from .admission import Admission, AppPolicy, FlowKey, QosRequest, Reservation
from .dataplane import DataPlane, RateReport, SimFlow
from .monitoring import Monitor
from .pathfinding import Commodity, first_fit_place, first_fit_place_many
from .protocol import (
    ClientNegotiation,
    ControllerNegotiator,
    Envelope,
    NEGOTIATION_DSCP,
    decode_frame,
    encode_frame,
    is_negotiation,
)
from .scenario import Scenario
from .topology import NodeKind, Topology, generate_fat_tree

__all__ = [
    "EventKind",
    "Event",
    "HandlerRegistry",
    "HandlerError",
    "EventLoop",
    "AdmissionRecord",
    "RunResult",
    "run",
    "inter_pod_commodities",
    "bench_handler_throughput",
    "bench_path_time",
]


class EventKind(enum.Enum):
    FRAME_ARRIVED = "FrameArrived"
    POLL_DUE = "PollDue"
    LEASE_EXPIRED = "LeaseExpired"
    PROBE_COMPLETE = "ProbeComplete"
    CLOCK_TICK = "ClockTick"
    FLOW_STARTED = "FlowStarted"
    FLOW_STOPPED = "FlowStopped"


@dataclass(frozen=True)
class Event:
    kind: EventKind
    payload: object
    seq: int
    time: float


class HandlerError(RuntimeError):
    """A handler raised; the run is aborted."""

    def __init__(self, event: Event, handler: Callable, exc: BaseException):
        name = getattr(handler, "__qualname__", repr(handler))
        super().__init__(f"{name} failed on {event.kind.value} #{event.seq} at t={event.time:g}: {exc!r}")
        self.event = event


class HandlerRegistry:
    def __init__(self):
        self._handlers: dict[EventKind, list[Callable[[Event], None]]] = {k: [] for k in EventKind}
        self.frozen = False

    def register(self, kind: EventKind, handler: Callable[[Event], None]) -> None:
        if self.frozen:
            raise RuntimeError("handlers must be registered before the loop starts")
        self._handlers[EventKind(kind)].append(handler)

    def on(self, kind: EventKind):
        def deco(fn):
            self.register(kind, fn)
            return fn
        return deco

    def freeze(self) -> None:
        self.frozen = True

    def handlers(self, kind: EventKind) -> tuple[Callable[[Event], None], ...]:
        return tuple(self._handlers[kind])


class EventLoop:
    def __init__(self, registry: HandlerRegistry, *, record: bool = True):
        self.registry = registry
        self.now = 0.0
        self.record = record
        self.log: list[tuple[int, str, float, float]] = []  # seq, kind, time, handler seconds
        self.idle_hooks: list[Callable[[], None]] = []
        self.processed = 0
        self._queue: deque[Event] = deque()
        self._timers: list[tuple[float, int, EventKind, object]] = []
        self._seq = itertools.count()
        self._lock = threading.Lock()

    def post(self, kind: EventKind, payload=None) -> Event:
        """Enqueue an event; safe from any thread."""
        with self._lock:
            ev = Event(kind, payload, next(self._seq), self.now)
            self._queue.append(ev)
        return ev

    def schedule(self, at: float, kind: EventKind, payload=None) -> None:
        with self._lock:
            heapq.heappush(self._timers, (at, next(self._seq), kind, payload))

    def next_timer(self) -> float:
        with self._lock:
            return self._timers[0][0] if self._timers else math.inf

    def advance_to(self, t: float) -> None:
        """Move the clock to ``t`` and enqueue every timer due by then, in time order."""
        while True:
            with self._lock:
                if not self._timers or self._timers[0][0] > t + 1e-12:
                    break
                at, _, kind, payload = heapq.heappop(self._timers)
            self.now = max(self.now, at)
            self.post(kind, payload)
        self.now = max(self.now, t)

    def _pop(self) -> Event | None:
        with self._lock:
            return self._queue.popleft() if self._queue else None

    def drain(self) -> int:
        self.registry.freeze()
        count = 0
        while True:
            ev = self._pop()
            if ev is None:
                for hook in self.idle_hooks:
                    hook()
                ev = self._pop()
                if ev is None:
                    break
            self._dispatch(ev)
            count += 1
        self.processed += count
        return count

    def _dispatch(self, ev: Event) -> None:
        start = time.perf_counter() if self.record else 0.0
        for handler in self.registry.handlers(ev.kind):
            try:
                handler(ev)
            except Exception as exc:
                raise HandlerError(ev, handler, exc) from exc
        if self.record:
            self.log.append((ev.seq, ev.kind.value, ev.time, time.perf_counter() - start))

    def log_csv(self, latency: bool = True) -> str:
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["seq", "event", "time", "latency_seconds"] if latency else ["seq", "event", "time"])
        for seq, kind, t, lat in self.log:
            row = [seq, kind, f"{t:.6f}"]
            if latency:
                row.append(f"{lat:.3e}")
            out.writerow(row)
        return buf.getvalue()


# -- experiment run ------------------------------------------------------------------

@dataclass(frozen=True)
class AdmissionRecord:
    time: float
    request_id: int
    app_id: str
    function: str
    value: float
    verdict: str
    reason: str
    revised_value: float | None
    path: str


@dataclass
class RunResult:
    reports: dict[str, RateReport]
    admission_log: list[AdmissionRecord]
    run_log: str
    outcomes: dict[str, list] = field(default_factory=dict)
    reservations: list[Reservation] = field(default_factory=list)


@dataclass
class _ClientFlow:
    flow: SimFlow
    requests: list[QosRequest]
    machines: list[ClientNegotiation] = field(default_factory=list)


def run(scenario: Scenario, topology: Topology, policies: Mapping[str, AppPolicy]) -> RunResult:
    """Execute ``scenario`` on a private copy of ``topology`` under simulated time."""
    topo = topology.copy()
    plane = DataPlane(topo, scenario.tick, scenario.window)
    monitor = Monitor(topo, plane)
    registry = HandlerRegistry()
    loop = EventLoop(registry)

    def probe(path):
        delay = monitor.probe_delay(path, loop.now)
        loop.post(EventKind.PROBE_COMPLETE, (path.nodes, delay))
        return delay

    admission = Admission(topo, policies, snapshot=monitor.snapshot, probe=probe, clock=lambda: loop.now)

    def install(res: Reservation) -> None:
        plane.install_reservation(res)
        committed[res.id] = res
        loop.schedule(res.expires_at, EventKind.LEASE_EXPIRED, res.id)

    def uninstall(res: Reservation) -> None:
        plane.remove(res.key, tag=res.id)

    negotiator = ControllerNegotiator(admission, install, uninstall)
    clients: dict[str, _ClientFlow] = {}
    active: set[FlowKey] = set()
    committed: dict[int, Reservation] = {}
    request_ids = itertools.count(1)

    for spec in scenario.flows:
        src, dst = topo.resolve(spec.source), topo.resolve(spec.dest)
        if topo.kind(src) is not NodeKind.HOST or topo.kind(dst) is not NodeKind.HOST:
            raise ValueError(f"flow {spec.id!r} must run host to host")
        if src == dst:
            raise ValueError(f"flow {spec.id!r} has identical endpoints")
        dest_ip = topo.ips[topo.index_of[dst]]
        key = None
        if spec.app_id is not None:
            key = FlowKey(spec.app_id, src, dest_ip, spec.port, spec.socket_type.value)
        flow = SimFlow(spec.id, src, dst, spec.rate, spec.start, spec.stop, key)
        plane.add_flow(flow)
        requests = [
            QosRequest(spec.app_id, next(request_ids), spec.socket_type, dest_ip, spec.port, fn, value, src)
            for fn, value in spec.qos
        ]
        clients[spec.id] = _ClientFlow(flow, requests)
        if spec.start < scenario.horizon:
            loop.schedule(spec.start, EventKind.FLOW_STARTED, spec.id)
            if spec.stop < scenario.horizon:
                loop.schedule(spec.stop, EventKind.FLOW_STOPPED, spec.id)
    by_request = {req.request_id: (cf, req) for cf in clients.values() for req in cf.requests}
    floors = {spec.id: spec.floor for spec in scenario.flows}
    machines: dict[int, ClientNegotiation] = {}

    def to_controller(frame, origin):
        loop.post(EventKind.FRAME_ARRIVED, Envelope(NEGOTIATION_DSCP, encode_frame(frame), origin))

    def to_host(frame):
        loop.post(EventKind.FRAME_ARRIVED, Envelope(NEGOTIATION_DSCP, encode_frame(frame), ("host", frame.request_id)))

    @registry.on(EventKind.FLOW_STARTED)
    def on_flow_started(ev: Event) -> None:
        cf = clients[ev.payload]
        if cf.flow.key is not None:
            active.add(cf.flow.key)
        for req in cf.requests:
            m = ClientNegotiation(req, floors[cf.flow.id])
            machines[req.request_id] = m
            cf.machines.append(m)
            for frame in m.start(loop.now):
                to_controller(frame, ("controller", req.source))

    @registry.on(EventKind.FLOW_STOPPED)
    def on_flow_stopped(ev: Event) -> None:
        key = clients[ev.payload].flow.key
        active.discard(key)
        for res in [r for r in admission.reservations.values() if r.key == key]:
            admission.release(res.id)
            uninstall(res)

    @registry.on(EventKind.FRAME_ARRIVED)
    def on_frame(ev: Event) -> None:
        env: Envelope = ev.payload
        frame = decode_frame(env.payload)
        role, who = env.origin
        if role == "controller":
            if not is_negotiation(env):
                return
            for reply in negotiator.handle(frame, who, loop.now):
                to_host(reply)
        else:
            m = machines.get(who)
            if m is None:
                return
            for reply in m.on_frame(frame, loop.now):
                to_controller(reply, ("controller", m.request.source))

    @registry.on(EventKind.CLOCK_TICK)
    def on_tick(ev: Event) -> None:
        for m in machines.values():
            m.on_timeout(loop.now)
        for reply in negotiator.on_timeout(loop.now):
            to_host(reply)
        plane.step()

    @registry.on(EventKind.POLL_DUE)
    def on_poll(ev: Event) -> None:
        monitor.poll(ev.payload, loop.now)
        loop.schedule(monitor.next_poll(ev.payload), EventKind.POLL_DUE, ev.payload)

    @registry.on(EventKind.LEASE_EXPIRED)
    def on_lease(ev: Event) -> None:
        res = admission.reservations.get(ev.payload)
        if res is None or res.expires_at > loop.now + 1e-9:
            return
        if res.key in active:
            # traffic on the flow keeps the lease alive
            admission.renew(res.id, loop.now)
            loop.schedule(res.expires_at, EventKind.LEASE_EXPIRED, res.id)
        else:
            admission.release(res.id)
            uninstall(res)

    @registry.on(EventKind.PROBE_COMPLETE)
    def on_probe(ev: Event) -> None:
        pass

    def service():
        for reply in negotiator.service(loop.now):
            to_host(reply)

    loop.idle_hooks.append(service)
    for lk in range(topo.n_links):
        loop.schedule(monitor.next_poll(lk), EventKind.POLL_DUE, lk)

    n_ticks = int(round(scenario.horizon / scenario.tick))
    if scenario.flows:
        for i in range(n_ticks):
            loop.advance_to(i * scenario.tick)
            loop.drain()
            loop.post(EventKind.CLOCK_TICK, i)
            loop.drain()
        loop.advance_to(scenario.horizon)
        loop.drain()

    reports = {}
    for fid in scenario.report_ids:
        if clients[fid].flow.start < scenario.horizon:
            reports[fid] = plane.report(fid, scenario.horizon)
    log = []
    for now, req, d in negotiator.log:
        log.append(AdmissionRecord(
            now, req.request_id, req.app_id, req.function.value, req.value, d.verdict.value, d.reason,
            d.revised_value, topo.path_label(d.path) if d.path is not None else "",
        ))
    outcomes = {fid: [m.outcome for m in cf.machines] for fid, cf in clients.items()}
    return RunResult(reports, log, loop.log_csv(), outcomes, list(committed.values()))


# -- timing benchmarks ---------------------------------------------------------------

def inter_pod_commodities(topo: Topology, k: int, seed: int = 0, demand: float = 1e6) -> list[Commodity]:
    """One new flow per edge switch, from one of its hosts to a host in another pod."""
    rng = np.random.default_rng(seed)
    half = k // 2
    edges = [s for s in topo.switches() if topo.name(s).startswith("e")]
    hosts_of = {e: [n for n in topo.neighbors(e) if topo.kind(n) is NodeKind.HOST] for e in edges}
    out = []
    for i, e in enumerate(edges):
        pod = i // half
        other = (pod + 1 + int(rng.integers(k - 1))) % k
        dest_edge = edges[other * half + int(rng.integers(half))]
        src = hosts_of[e][int(rng.integers(half))]
        dst = hosts_of[dest_edge][int(rng.integers(half))]
        out.append(Commodity(i, src, dst, demand))
    return out


def bench_path_time(k: int, rounds: int = 15, seed: int = 0) -> float:
    """Mean wall-clock seconds per first-fit placement over ``rounds`` rounds.

    Each round places one flow per edge switch in a single batched call, so
    per-call interpreter overhead is amortised over the k^2/2 placements.
    """
    topo = generate_fat_tree(k)
    commodities = inter_pod_commodities(topo, k, seed)
    first_fit_place_many(topo, commodities)  # untimed warm-up round
    per = []
    for _ in range(rounds):
        start = time.perf_counter()
        paths = first_fit_place_many(topo, commodities)
        per.append((time.perf_counter() - start) / len(commodities))
        if any(p is None for p in paths):
            raise RuntimeError("idle fat-tree failed to place a flow")
    return float(np.mean(per))


def bench_handler_throughput(k: int, with_computation: bool, duration: float = 1.0,
                             rounds: int = 15, seed: int = 0) -> float:
    """New-flow events answered per wall-clock second, averaged over ``rounds``.

    Events cycle over every edge switch; with computation each one runs
    first-fit placement before the reply, otherwise the reply is immediate.
    """
    topo = generate_fat_tree(k)
    commodities = inter_pod_commodities(topo, k, seed)
    registry = HandlerRegistry()
    loop = EventLoop(registry, record=False)
    replies = [0]

    @registry.on(EventKind.FRAME_ARRIVED)
    def on_packet_in(ev: Event) -> None:
        if with_computation:
            first_fit_place(topo, ev.payload)
        replies[0] += 1

    first_fit_place(topo, commodities[0])
    rates = []
    for _ in range(rounds):
        replies[0] = 0
        start = time.perf_counter()
        while True:
            for c in commodities:
                loop.post(EventKind.FRAME_ARRIVED, c)
                loop.drain()
            elapsed = time.perf_counter() - start
            if elapsed >= duration:
                break
        rates.append(replies[0] / elapsed)
    return float(np.mean(rates))
