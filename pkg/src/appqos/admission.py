"""Admission control for application QoS requests.

Each request carries one of four functions; each function has a policy
predicate against the application's administrative limits and a path
predicate against the network snapshot:

=============  =====================  ============================================
function       policy                 some candidate path p with
=============  =====================  ============================================
minbw          value <= maxBW         min_l (C_l - U_l) > value
drop           value >= minDrop       max_i D_i <= value
delay          value >= minDelay      Delay(p) <= value (probed on demand)
ratelimit      value >= minRate       U_l < C_l on every link
=============  =====================  ============================================

``U_l`` is max(reserved, measured), so admitted-but-idle reservations still
count. Policy floors are read as "the administrator forbids asking for
anything stricter than this".
"""
from __future__ import annotations

import enum
import heapq
import itertools
from collections.abc import Callable, Iterator, Mapping
from dataclasses import dataclass, field

import numpy as np

from .pathfinding import Commodity, first_fit_place
from .topology import Path, Topology, effective_load, residual_capacity, simple_paths
from .units import format_number, parse_quantity

__all__ = [
    "Function",
    "SocketType",
    "FlowKey",
    "QosRequest",
    "AppPolicy",
    "PolicyStore",
    "parse_policies",
    "load_policies",
    "dump_policies",
    "Verdict",
    "Reason",
    "Decision",
    "RequestQueue",
    "Reservation",
    "Admission",
    "AdmissionError",
    "UnauthorizedError",
    "CommitRejected",
    "DEFAULT_LEASE_TTL",
]

DEFAULT_LEASE_TTL = 60.0
REVISION_STEP = 1.0  # bit/s below the best residual, since the bandwidth test is strict


class AdmissionError(Exception):
    pass


class UnauthorizedError(AdmissionError):
    pass


class CommitRejected(AdmissionError):
    """Resources changed between the decision and the client's acknowledgment."""

    def __init__(self, decision: Decision):
        super().__init__(decision.reason)
        self.decision = decision


class Function(enum.Enum):
    RESERVE_MIN_BW = "minbw"
    REQ_DROP = "drop"
    REQ_DELAY = "delay"
    LIMIT_FLOW_RATE = "ratelimit"


class SocketType(enum.Enum):
    TCP = "tcp"
    UDP = "udp"


@dataclass(frozen=True, order=True)
class FlowKey:
    """Match fields of the rule installed for an admitted flow."""

    app_id: str
    source: int
    dest_ip: str
    dest_port: int
    socket_type: str


@dataclass(frozen=True)
class QosRequest:
    app_id: str
    request_id: int
    socket_type: SocketType
    dest_ip: str
    dest_port: int
    function: Function
    value: float
    source: int

    def __post_init__(self):
        if not self.value >= 0:
            raise ValueError("request value must be non-negative")
        if self.request_id < 0:
            raise ValueError("request id must be unsigned")

    @property
    def flow_key(self) -> FlowKey:
        return FlowKey(self.app_id, self.source, self.dest_ip, self.dest_port, self.socket_type.value)


@dataclass(frozen=True)
class AppPolicy:
    app_id: str
    priority: int = 0
    max_bw: float = 0.0
    min_drop: float = 0.0
    min_delay: float = 0.0
    min_rate: float = 0.0
    authorized: bool = True

    def __post_init__(self):
        if self.priority < 0:
            raise ValueError("priority must be non-negative")
        if min(self.max_bw, self.min_drop, self.min_delay, self.min_rate) < 0:
            raise ValueError("policy limits must be non-negative")


class PolicyStore(Mapping):
    """Read-only table of application policies."""

    def __init__(self, policies=()):
        self._by_app: dict[str, AppPolicy] = {}
        for p in policies:
            if p.app_id in self._by_app:
                raise ValueError(f"duplicate policy for {p.app_id!r}")
            self._by_app[p.app_id] = p

    def __getitem__(self, app_id: str) -> AppPolicy:
        return self._by_app[app_id]

    def __iter__(self) -> Iterator[str]:
        return iter(self._by_app)

    def __len__(self) -> int:
        return len(self._by_app)


_TRUE = {"yes", "true", "1", "y"}
_FALSE = {"no", "false", "0", "n"}


def parse_policies(text: str) -> PolicyStore:
    """Whitespace table: ``app_id priority maxBW minDrop minDelay minRate authorized``."""
    rows = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        words = line.split()
        try:
            if len(words) != 7:
                raise ValueError("expected 7 columns")
            auth = words[6].lower()
            if auth not in _TRUE | _FALSE:
                raise ValueError(f"bad authorized flag {words[6]!r}")
            rows.append(AppPolicy(
                app_id=words[0], priority=int(words[1]), max_bw=parse_quantity(words[2]),
                min_drop=parse_quantity(words[3]), min_delay=parse_quantity(words[4]),
                min_rate=parse_quantity(words[5]), authorized=auth in _TRUE,
            ))
        except ValueError as exc:
            raise ValueError(f"policy line {lineno}: {exc}") from None
    return PolicyStore(rows)


def load_policies(path) -> PolicyStore:
    with open(path, encoding="utf-8") as fh:
        return parse_policies(fh.read())


def dump_policies(store: PolicyStore) -> str:
    lines = ["# app_id priority maxBW minDrop minDelay minRate authorized"]
    for p in store.values():
        lines.append(" ".join([
            p.app_id, str(p.priority), format_number(p.max_bw), format_number(p.min_drop),
            format_number(p.min_delay), format_number(p.min_rate), "yes" if p.authorized else "no",
        ]))
    return "\n".join(lines) + "\n"


class Verdict(enum.Enum):
    ACCEPT = "accept"
    REVISE = "revise"
    REJECT = "reject"


class Reason:
    OK = "OK"
    REVISED = "REVISED"
    AUTH = "AUTH"
    POLICY = "POLICY"
    NO_PATH = "NO_PATH"
    UNKNOWN_DEST = "UNKNOWN_DEST"
    COMMIT_RECHECK = "COMMIT_RECHECK"


@dataclass(frozen=True)
class Decision:
    verdict: Verdict
    path: Path | None = None
    revised_value: float | None = None
    reason: str = Reason.OK

    def __post_init__(self):
        if self.verdict is Verdict.ACCEPT and self.path is None:
            raise ValueError("accept needs a path")
        if self.verdict is Verdict.REVISE and self.revised_value is None:
            raise ValueError("revise needs a revised value")


def _reject(reason: str) -> Decision:
    return Decision(Verdict.REJECT, reason=reason)


class RequestQueue:
    """Pending requests, served by application priority then arrival order."""

    def __init__(self, policies: Mapping[str, AppPolicy]):
        self.policies = policies
        self._heap: list[tuple[int, int, QosRequest]] = []
        self._seq = itertools.count()

    def enqueue(self, req: QosRequest) -> None:
        policy = self.policies.get(req.app_id)
        if policy is None or not policy.authorized:
            raise UnauthorizedError(req.app_id)
        heapq.heappush(self._heap, (policy.priority, next(self._seq), req))

    def next(self) -> QosRequest:
        if not self._heap:
            raise IndexError("request queue is empty")
        return heapq.heappop(self._heap)[2]

    def __len__(self) -> int:
        return len(self._heap)


@dataclass
class Reservation:
    id: int
    request_id: int
    app_id: str
    function: Function
    key: FlowKey
    path: Path
    demand: float = 0.0  # bits/s held on every path link (minbw only)
    cap: float | None = None  # max rate (ratelimit only)
    expires_at: float = 0.0
    ttl: float = DEFAULT_LEASE_TTL


@dataclass
class Admission:
    """Decision and bookkeeping state, owned by the controller thread."""

    topo: Topology
    policies: Mapping[str, AppPolicy]
    snapshot: object = None
    probe: Callable[[Path], float] | None = None
    clock: Callable[[], float] = lambda: 0.0
    ttl: float = DEFAULT_LEASE_TTL
    max_hops: int | None = None
    reservations: dict[int, Reservation] = field(default_factory=dict)

    def __post_init__(self):
        self.queue = RequestQueue(self.policies)
        self._ids = itertools.count(1)

    # -- views -----------------------------------------------------------------

    @property
    def utilization(self) -> np.ndarray | None:
        if self.snapshot is None:
            return None
        return getattr(self.snapshot, "utilization", self.snapshot)

    def _drop_rate(self) -> np.ndarray:
        rate = getattr(self.snapshot, "drop_rate", None)
        return np.zeros(self.topo.n_links) if rate is None else rate

    def _delay(self, path: Path) -> float:
        if self.probe is not None:
            return self.probe(path)
        return float(np.sum(self.topo.prop_delay[list(path.links)]))

    def _candidates(self, req: QosRequest, dest: int) -> Iterator[Path]:
        return simple_paths(self.topo, req.source, dest, self.max_hops)

    def _resolve(self, req: QosRequest) -> int | None:
        try:
            dest = self.topo.resolve(req.dest_ip)
            self.topo.resolve(req.source)
        except KeyError:
            return None
        return None if dest == req.source else dest

    def _unsaturated(self, path: Path) -> bool:
        idx = list(path.links)
        return bool(np.all(effective_load(self.topo, self.utilization)[idx] < self.topo.capacity[idx]))

    def _worst_drop(self, path: Path) -> float:
        return float(np.max(self._drop_rate()[list(path.links)]))

    # -- decisions -------------------------------------------------------------

    def _gate(self, req: QosRequest, function: Function):
        if req.function is not function:
            raise ValueError(f"request {req.request_id} is {req.function.value}, not {function.value}")
        policy = self.policies.get(req.app_id)
        if policy is None or not policy.authorized:
            return None, None, _reject(Reason.AUTH)
        dest = self._resolve(req)
        if dest is None:
            return None, None, _reject(Reason.UNKNOWN_DEST)
        return policy, dest, None

    def check_min_bw(self, req: QosRequest) -> Decision:
        policy, dest, early = self._gate(req, Function.RESERVE_MIN_BW)
        if early:
            return early
        if req.value > policy.max_bw:
            return _reject(Reason.POLICY)
        path = first_fit_place(self.topo, Commodity(req.request_id, req.source, dest, req.value),
                               self.utilization, self.max_hops)
        if path is not None:
            return Decision(Verdict.ACCEPT, path)
        best, best_path = 0.0, None
        for cand in self._candidates(req, dest):
            r = residual_capacity(self.topo, cand, self.utilization)
            if r > best:
                best, best_path = r, cand
        revised = min(policy.max_bw, best - REVISION_STEP)
        if best_path is None or revised <= 0 or not residual_capacity(self.topo, best_path, self.utilization) > revised:
            return _reject(Reason.NO_PATH)
        return Decision(Verdict.REVISE, best_path, revised, Reason.REVISED)

    def check_drop(self, req: QosRequest) -> Decision:
        policy, dest, early = self._gate(req, Function.REQ_DROP)
        if early:
            return early
        if req.value < policy.min_drop:
            return _reject(Reason.POLICY)
        for cand in self._candidates(req, dest):
            if self._worst_drop(cand) <= req.value:
                return Decision(Verdict.ACCEPT, cand)
        return _reject(Reason.NO_PATH)

    def check_delay(self, req: QosRequest) -> Decision:
        policy, dest, early = self._gate(req, Function.REQ_DELAY)
        if early:
            return early
        if req.value < policy.min_delay:
            return _reject(Reason.POLICY)
        for cand in self._candidates(req, dest):
            if self._delay(cand) <= req.value:
                return Decision(Verdict.ACCEPT, cand)
        return _reject(Reason.NO_PATH)

    def check_rate_limit(self, req: QosRequest) -> Decision:
        policy, dest, early = self._gate(req, Function.LIMIT_FLOW_RATE)
        if early:
            return early
        if req.value < policy.min_rate:
            return _reject(Reason.POLICY)
        for cand in self._candidates(req, dest):
            if self._unsaturated(cand):
                return Decision(Verdict.ACCEPT, cand)
        return _reject(Reason.NO_PATH)

    def decide(self, req: QosRequest) -> Decision:
        return {
            Function.RESERVE_MIN_BW: self.check_min_bw,
            Function.REQ_DROP: self.check_drop,
            Function.REQ_DELAY: self.check_delay,
            Function.LIMIT_FLOW_RATE: self.check_rate_limit,
        }[req.function](req)

    # -- queue -----------------------------------------------------------------

    def enqueue(self, req: QosRequest) -> None:
        self.queue.enqueue(req)

    def next(self) -> QosRequest:
        return self.queue.next()

    # -- bookkeeping -----------------------------------------------------------

    def commit(self, decision: Decision, req: QosRequest, now: float | None = None) -> Reservation:
        """Re-validate ``decision`` and take the resources; raises CommitRejected."""
        if decision.verdict is Verdict.REJECT:
            raise ValueError("cannot commit a rejection")
        now = self.clock() if now is None else now
        value = decision.revised_value if decision.verdict is Verdict.REVISE else req.value
        path = decision.path
        fn = req.function
        if fn is Function.RESERVE_MIN_BW:
            ok = residual_capacity(self.topo, path, self.utilization) > value
        elif fn is Function.LIMIT_FLOW_RATE:
            ok = self._unsaturated(path)
        elif fn is Function.REQ_DROP:
            ok = self._worst_drop(path) <= value
        else:
            ok = self._delay(path) <= value
        if not ok:
            raise CommitRejected(_reject(Reason.COMMIT_RECHECK))
        res = Reservation(
            id=next(self._ids), request_id=req.request_id, app_id=req.app_id, function=fn,
            key=req.flow_key, path=path, demand=value if fn is Function.RESERVE_MIN_BW else 0.0,
            cap=value if fn is Function.LIMIT_FLOW_RATE else None,
            expires_at=now + self.ttl, ttl=self.ttl,
        )
        self.reservations[res.id] = res
        self._rebuild_reserved()
        return res

    def release(self, reservation_id: int) -> Reservation:
        res = self.reservations.pop(reservation_id)
        self._rebuild_reserved()
        return res

    def renew(self, reservation_id: int, now: float | None = None) -> Reservation:
        now = self.clock() if now is None else now
        res = self.reservations[reservation_id]
        res.expires_at = now + res.ttl
        return res

    def expire(self, now: float) -> list[Reservation]:
        due = [r.id for r in self.reservations.values() if r.expires_at <= now]
        return [self.release(rid) for rid in due]

    def _rebuild_reserved(self) -> None:
        # Recomputed from scratch so an empty ledger is exactly zero.
        reserved = np.zeros(self.topo.n_links)
        for res in self.reservations.values():
            if res.demand:
                reserved[list(res.path.links)] += res.demand
        self.topo.reserved[:] = reserved
