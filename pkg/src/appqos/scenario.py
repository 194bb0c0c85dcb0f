"""Scenario files: the flows of an experiment and the QoS each one asks for.

Grammar (one directive per line, ``#`` starts a comment)::

    horizon <seconds>
    tick <seconds>
    window <seconds>
    flow <id> src=<node> dst=<node> rate=<bits/s> [start=<s>] [stop=<s>]
         [app=<app_id>] [port=<n>] [sock=tcp|udp] [floor=<value>]
         [qos=<func>:<value>[,<func>:<value>...]]
    report <flow_id> [<flow_id> ...]

Nodes are given by id, name or IP. ``rate`` may be a step schedule
``0:30M/5:10M`` (time:rate pairs). ``qos`` functions are ``minbw``, ``drop``,
``delay`` and ``ratelimit``; they are negotiated, in order, when the flow
starts. Without ``report`` lines every flow is reported.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .admission import Function, SocketType
from .units import format_number, parse_quantity

__all__ = ["FlowSpec", "Scenario", "ScenarioError", "parse_scenario", "load_scenario", "dump_scenario"]


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class FlowSpec:
    id: str
    source: str
    dest: str
    rate: float | tuple[tuple[float, float], ...]
    start: float = 0.0
    stop: float = math.inf
    app_id: str | None = None
    port: int = 5001
    socket_type: SocketType = SocketType.UDP
    qos: tuple[tuple[Function, float], ...] = ()
    floor: float | None = None


@dataclass(frozen=True)
class Scenario:
    horizon: float = 10.0
    tick: float = 0.01
    window: float = 0.5
    flows: tuple[FlowSpec, ...] = ()
    reported: tuple[str, ...] = ()

    def __post_init__(self):
        if self.horizon < 0 or self.tick <= 0 or self.window <= 0:
            raise ScenarioError("horizon must be >= 0 and tick, window > 0")
        ids = [f.id for f in self.flows]
        if len(set(ids)) != len(ids):
            raise ScenarioError("duplicate flow id")
        for fid in self.reported:
            if fid not in ids:
                raise ScenarioError(f"report names unknown flow {fid!r}")
        for f in self.flows:
            if f.qos and f.app_id is None:
                raise ScenarioError(f"flow {f.id!r} requests qos without app=")

    @property
    def report_ids(self) -> tuple[str, ...]:
        return self.reported or tuple(f.id for f in self.flows)

    def without_qos(self) -> Scenario:
        return replace(self, flows=tuple(replace(f, qos=()) for f in self.flows))


def _rate(text: str):
    if "/" not in text and ":" not in text:
        return parse_quantity(text)
    steps = []
    for part in text.split("/"):
        when, sep, rate = part.partition(":")
        if not sep:
            raise ScenarioError(f"bad rate step {part!r}")
        steps.append((parse_quantity(when), parse_quantity(rate)))
    if [t for t, _ in steps] != sorted(t for t, _ in steps):
        raise ScenarioError("rate steps must be in time order")
    return tuple(steps)


def _qos(text: str) -> tuple[tuple[Function, float], ...]:
    items = []
    for part in text.split(","):
        name, sep, value = part.partition(":")
        if not sep:
            raise ScenarioError(f"bad qos item {part!r}")
        try:
            items.append((Function(name), parse_quantity(value)))
        except ValueError:
            raise ScenarioError(f"bad qos item {part!r}") from None
    return tuple(items)


_FLOW_KEYS = {"src", "dst", "rate", "start", "stop", "app", "port", "sock", "qos", "floor"}


def _flow(words: list[str]) -> FlowSpec:
    if not words:
        raise ScenarioError("flow needs an id")
    fid, opts = words[0], {}
    for w in words[1:]:
        k, sep, v = w.partition("=")
        if not sep or k not in _FLOW_KEYS:
            raise ScenarioError(f"bad flow option {w!r}")
        if k in opts:
            raise ScenarioError(f"repeated flow option {k!r}")
        opts[k] = v
    for need in ("src", "dst", "rate"):
        if need not in opts:
            raise ScenarioError(f"flow {fid!r} needs {need}=")
    try:
        spec = FlowSpec(
            id=fid, source=opts["src"], dest=opts["dst"], rate=_rate(opts["rate"]),
            start=parse_quantity(opts.get("start", "0")),
            stop=parse_quantity(opts.get("stop", "inf")),
            app_id=opts.get("app"), port=int(opts.get("port", "5001")),
            socket_type=SocketType(opts.get("sock", "udp")),
            qos=_qos(opts["qos"]) if "qos" in opts else (),
            floor=parse_quantity(opts["floor"]) if "floor" in opts else None,
        )
    except ValueError as exc:
        raise ScenarioError(f"flow {fid!r}: {exc}") from None
    if spec.stop <= spec.start:
        raise ScenarioError(f"flow {fid!r} stops before it starts")
    return spec


def parse_scenario(text: str) -> Scenario:
    settings: dict[str, float] = {}
    flows, reported = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        words = raw.split("#", 1)[0].split()
        if not words:
            continue
        head, rest = words[0], words[1:]
        try:
            if head in ("horizon", "tick", "window"):
                if len(rest) != 1:
                    raise ScenarioError(f"{head} takes one value")
                settings[head] = parse_quantity(rest[0])
            elif head == "flow":
                flows.append(_flow(rest))
            elif head == "report":
                reported.extend(rest)
            else:
                raise ScenarioError(f"unknown directive {head!r}")
        except ValueError as exc:
            raise ScenarioError(f"scenario line {lineno}: {exc}") from None
    return Scenario(flows=tuple(flows), reported=tuple(reported), **settings)


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def dump_scenario(sc: Scenario) -> str:
    lines = [f"horizon {format_number(sc.horizon)}", f"tick {format_number(sc.tick)}",
             f"window {format_number(sc.window)}"]
    for f in sc.flows:
        if isinstance(f.rate, tuple):
            rate = "/".join(f"{format_number(t)}:{format_number(r)}" for t, r in f.rate)
        else:
            rate = format_number(f.rate)
        words = ["flow", f.id, f"src={f.source}", f"dst={f.dest}", f"rate={rate}",
                 f"start={format_number(f.start)}"]
        if f.stop < math.inf:
            words.append(f"stop={format_number(f.stop)}")
        if f.app_id is not None:
            words.append(f"app={f.app_id}")
        words += [f"port={f.port}", f"sock={f.socket_type.value}"]
        if f.floor is not None:
            words.append(f"floor={format_number(f.floor)}")
        if f.qos:
            words.append("qos=" + ",".join(f"{fn.value}:{format_number(v)}" for fn, v in f.qos))
        lines.append(" ".join(words))
    if sc.reported:
        lines.append("report " + " ".join(sc.reported))
    return "\n".join(lines) + "\n"
