"""Negotiation wire format and the client/controller state machines.

Frame layout (big-endian)::

    0       1          2               6            8
    +-------+----------+---------------+------------+------------------+
    | ver=1 | msg_type | request_id u32| body_len u16| body (UTF-8)    |
    +-------+----------+---------------+------------+------------------+

The body is ``key=value`` pairs joined by ``;``. Keys are non-empty and
contain neither ``=`` nor ``;``; values contain no ``;``. Worked example,
an ACK for request 7 with body ``ok=1``::

    01 03 00 00 00 07 00 04 6f 6b 3d 31

Negotiation traffic is tagged with DSCP 0b110110 (54); switches hand any
frame carrying it to the controller.

Both state machines are sans-IO: they consume frames and timeouts and return
the frames to send, so they can be driven by a socket loop, the simulator's
event loop or an exhaustive model checker alike.
"""
from __future__ import annotations

import enum
import queue
import struct
import time
from collections.abc import Callable
from dataclasses import dataclass, field

from .admission import (
    Admission,
    CommitRejected,
    Decision,
    Function,
    QosRequest,
    Reason,
    Reservation,
    SocketType,
    UnauthorizedError,
    Verdict,
)

__all__ = [
    "VERSION",
    "NEGOTIATION_DSCP",
    "MsgType",
    "Frame",
    "FrameError",
    "encode_frame",
    "decode_frame",
    "split_frames",
    "Envelope",
    "is_negotiation",
    "State",
    "Granted",
    "RevisedGranted",
    "BestEffort",
    "ClientNegotiation",
    "ControllerSession",
    "ControllerNegotiator",
    "client_negotiate",
    "ChannelTransport",
    "channel_pair",
    "request_to_body",
    "request_from_body",
    "DEFAULT_TIMEOUT",
]

VERSION = 1
NEGOTIATION_DSCP = 0b110110
DEFAULT_TIMEOUT = 2.0
HEADER = struct.Struct(">BBIH")
MAX_BODY = 0xFFFF


class FrameError(ValueError):
    pass


class MsgType(enum.IntEnum):
    REQUEST = 1
    RESPONSE = 2
    ACK = 3
    REVISE_ACK = 4
    READY = 5
    ERROR = 6


@dataclass(frozen=True)
class Frame:
    msg_type: MsgType
    request_id: int
    body: tuple[tuple[str, str], ...] = ()
    version: int = VERSION

    @classmethod
    def make(cls, msg_type: MsgType, request_id: int, **body) -> Frame:
        return cls(MsgType(msg_type), request_id, tuple((k, str(v)) for k, v in body.items()))

    def get(self, key: str, default: str | None = None) -> str | None:
        for k, v in self.body:
            if k == key:
                return v
        return default

    @property
    def fields(self) -> dict[str, str]:
        return dict(self.body)


def _encode_body(body) -> bytes:
    parts = []
    seen = set()
    for k, v in body:
        if not k or "=" in k or ";" in k:
            raise FrameError(f"bad body key {k!r}")
        if ";" in v:
            raise FrameError(f"body value for {k!r} contains ';'")
        if k in seen:
            raise FrameError(f"duplicate body key {k!r}")
        seen.add(k)
        parts.append(f"{k}={v}")
    return ";".join(parts).encode("utf-8")


def _decode_body(raw: bytes) -> tuple[tuple[str, str], ...]:
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FrameError("body is not UTF-8") from exc
    if not text:
        return ()
    pairs = []
    for part in text.split(";"):
        k, sep, v = part.partition("=")
        if not sep or not k:
            raise FrameError(f"malformed body pair {part!r}")
        pairs.append((k, v))
    if len({k for k, _ in pairs}) != len(pairs):
        raise FrameError("duplicate body key")
    return tuple(pairs)


def encode_frame(frame: Frame) -> bytes:
    if frame.version != VERSION:
        raise FrameError(f"unsupported version {frame.version}")
    if not 0 <= frame.request_id <= 0xFFFFFFFF:
        raise FrameError("request id out of range")
    body = _encode_body(frame.body)
    if len(body) > MAX_BODY:
        raise FrameError(f"body of {len(body)} bytes exceeds {MAX_BODY}")
    return HEADER.pack(frame.version, int(frame.msg_type), frame.request_id, len(body)) + body


def _decode_header(data: bytes) -> tuple[int, int, int]:
    if len(data) < HEADER.size:
        raise FrameError("truncated header")
    version, msg_type, request_id, body_len = HEADER.unpack_from(data)
    if version != VERSION:
        raise FrameError(f"bad version {version}")
    try:
        MsgType(msg_type)
    except ValueError:
        raise FrameError(f"unknown message type {msg_type}") from None
    return msg_type, request_id, body_len


def decode_frame(data: bytes) -> Frame:
    """Decode exactly one frame; trailing or missing bytes are errors."""
    msg_type, request_id, body_len = _decode_header(data)
    end = HEADER.size + body_len
    if end > len(data):
        raise FrameError("truncated body")
    if end < len(data):
        raise FrameError("length mismatch: trailing bytes")
    return Frame(MsgType(msg_type), request_id, _decode_body(data[HEADER.size:end]))


def split_frames(buffer: bytes) -> tuple[list[Frame], bytes]:
    """Decode every complete frame at the front of a stream buffer."""
    frames = []
    while len(buffer) >= HEADER.size:
        _, _, body_len = _decode_header(buffer)
        end = HEADER.size + body_len
        if end > len(buffer):
            break
        frames.append(decode_frame(buffer[:end]))
        buffer = buffer[end:]
    return frames, buffer


@dataclass(frozen=True)
class Envelope:
    """What a simulated switch sees: DSCP bits plus the opaque payload."""

    dscp: int
    payload: bytes
    origin: object = None


def is_negotiation(env: Envelope) -> bool:
    """Pre-installed switch rule: DSCP 110110 goes to the controller."""
    return env.dscp == NEGOTIATION_DSCP


# -- request bodies ------------------------------------------------------------

def request_to_body(req: QosRequest, dest: str | None = None) -> dict[str, str]:
    return {
        "app": req.app_id,
        "func": req.function.value,
        "val": repr(float(req.value)),
        "dst": dest if dest is not None else req.dest_ip,
        "port": str(req.dest_port),
        "sock": req.socket_type.value,
        "src": str(req.source),
    }


def request_from_body(frame: Frame, source: int | None = None) -> QosRequest:
    f = frame.fields
    try:
        src = source if source is not None else int(f["src"])
        return QosRequest(
            app_id=f["app"], request_id=frame.request_id, socket_type=SocketType(f["sock"]),
            dest_ip=f["dst"], dest_port=int(f["port"]), function=Function(f["func"]),
            value=float(f["val"]), source=src,
        )
    except (KeyError, ValueError) as exc:
        raise FrameError(f"bad request body: {exc}") from None


# -- outcomes ------------------------------------------------------------------

@dataclass(frozen=True)
class Granted:
    path_id: str


@dataclass(frozen=True)
class RevisedGranted:
    value: float
    path_id: str = ""


@dataclass(frozen=True)
class BestEffort:
    reason: str


class State(enum.Enum):
    IDLE = "Idle"
    REQUEST_SENT = "RequestSent"
    RESPONSE_SENT = "ResponseSent"  # controller: accept sent, waiting for ACK
    AWAITING_ACK = "AwaitingAck"  # controller: revision sent, waiting for REVISE_ACK
    INSTALLING = "Installing"
    AWAITING_READY = "AwaitingReady"
    READY = "Ready"
    FAILED = "Failed"


TERMINAL = frozenset({State.READY, State.FAILED})


class _Machine:
    def __init__(self, request_id: int, timeout: float):
        self.request_id = request_id
        self.timeout = timeout
        self.state = State.IDLE
        self.deadline = float("inf")
        self.history: list[State] = [State.IDLE]

    @property
    def done(self) -> bool:
        return self.state in TERMINAL

    def _enter(self, state: State, now: float) -> None:
        self.state = state
        self.history.append(state)
        self.deadline = float("inf") if state in TERMINAL else now + self.timeout

    def _error(self, reason: str) -> Frame:
        return Frame.make(MsgType.ERROR, self.request_id, reason=reason)


class ClientNegotiation(_Machine):
    """Application side: REQUEST, then ACK or REVISE_ACK, then wait for READY.

    ``floor`` is the application's hard minimum for a revised value; revisions
    below it are abandoned. ``None`` accepts any revision.
    """

    def __init__(self, request: QosRequest, floor: float | None = None,
                 timeout: float = DEFAULT_TIMEOUT, dest_label: str | None = None):
        super().__init__(request.request_id, timeout)
        self.request = request
        self.floor = floor
        self.dest_label = dest_label
        self.outcome = None
        self.revisions = 0
        self._revised: float | None = None

    def start(self, now: float = 0.0) -> list[Frame]:
        if self.state is not State.IDLE:
            raise RuntimeError("negotiation already started")
        self._enter(State.REQUEST_SENT, now)
        return [Frame.make(MsgType.REQUEST, self.request_id, **request_to_body(self.request, self.dest_label))]

    def _fail(self, reason: str, now: float) -> None:
        self.outcome = BestEffort(reason)
        self._enter(State.FAILED, now)

    def on_frame(self, frame: Frame, now: float = 0.0) -> list[Frame]:
        if self.done:
            return []
        if frame.request_id != self.request_id:
            return []
        if frame.msg_type is MsgType.ERROR:
            self._fail(frame.get("reason", "error"), now)
            return []
        if self.state is State.REQUEST_SENT and frame.msg_type is MsgType.RESPONSE:
            verdict = frame.get("verdict")
            if verdict == Verdict.ACCEPT.value:
                self._enter(State.AWAITING_READY, now)
                return [Frame.make(MsgType.ACK, self.request_id)]
            if verdict == Verdict.REVISE.value:
                self.revisions += 1
                try:
                    value = float(frame.get("val", ""))
                except ValueError:
                    self._fail("malformed", now)
                    return [self._error("malformed")]
                if self.floor is not None and value < self.floor:
                    self._fail("revision_below_floor", now)
                    return [self._error("abandoned")]
                self._revised = value
                self._enter(State.AWAITING_READY, now)
                return [Frame.make(MsgType.REVISE_ACK, self.request_id, val=repr(value))]
            self._fail(frame.get("reason", "rejected"), now)
            return []
        if self.state is State.AWAITING_READY and frame.msg_type is MsgType.READY:
            path = frame.get("path", "")
            self.outcome = RevisedGranted(self._revised, path) if self._revised is not None else Granted(path)
            self._enter(State.READY, now)
            return []
        self._fail("protocol", now)
        return [self._error("protocol")]

    def on_timeout(self, now: float) -> list[Frame]:
        if not self.done and now >= self.deadline:
            self._fail("timeout", now)
        return []


class ControllerSession(_Machine):
    """Controller side of one negotiation, keyed by request id.

    ``respond`` is called once the request leaves the admission queue;
    ``commit`` runs the re-check on ACK/REVISE_ACK and returns the reservation
    (or raises CommitRejected); ``install`` applies it to the data plane.
    READY goes out only after both succeeded.
    """

    def __init__(self, request: QosRequest, timeout: float = DEFAULT_TIMEOUT,
                 label: Callable | None = None):
        super().__init__(request.request_id, timeout)
        self.request = request
        self.decision: Decision | None = None
        self.reservation: Reservation | None = None
        self._label = label or (lambda path: "-".join(str(n) for n in path.nodes))

    def respond(self, decision: Decision, now: float = 0.0) -> list[Frame]:
        if self.state is not State.IDLE:
            raise RuntimeError("session already answered")
        self.decision = decision
        body = {"verdict": decision.verdict.value, "reason": decision.reason}
        if decision.path is not None:
            body["path"] = self._label(decision.path)
        if decision.verdict is Verdict.REVISE:
            body["val"] = repr(float(decision.revised_value))
        frame = Frame.make(MsgType.RESPONSE, self.request_id, **body)
        if decision.verdict is Verdict.ACCEPT:
            self._enter(State.RESPONSE_SENT, now)
        elif decision.verdict is Verdict.REVISE:
            self._enter(State.AWAITING_ACK, now)
        else:
            self._enter(State.FAILED, now)
        return [frame]

    def on_frame(self, frame: Frame, commit: Callable[[Decision, QosRequest], Reservation],
                 now: float = 0.0) -> list[Frame]:
        if self.done:
            return []
        if frame.msg_type is MsgType.ERROR:
            self._abort(now)
            return []
        expected = {State.RESPONSE_SENT: MsgType.ACK, State.AWAITING_ACK: MsgType.REVISE_ACK}.get(self.state)
        if expected is None or frame.msg_type is not expected:
            self._abort(now)
            return [self._error("protocol")]
        try:
            self.reservation = commit(self.decision, self.request)
        except CommitRejected as exc:
            self._enter(State.FAILED, now)
            return [self._error(exc.decision.reason)]
        self._enter(State.INSTALLING, now)
        return []

    def on_installed(self, now: float = 0.0) -> list[Frame]:
        if self.state is not State.INSTALLING:
            return []
        self._enter(State.READY, now)
        path = self._label(self.reservation.path) if self.reservation else ""
        return [Frame.make(MsgType.READY, self.request_id, path=path)]

    def on_timeout(self, now: float, release: Callable | None = None) -> list[Frame]:
        if self.done or now < self.deadline:
            return []
        self._abort(now, release)
        return [self._error("timeout")]

    def _abort(self, now: float, release: Callable | None = None) -> None:
        if self.reservation is not None and release is not None:
            release(self.reservation)
            self.reservation = None
        self._enter(State.FAILED, now)


class ControllerNegotiator:
    """Controller module for the API: tracks sessions and talks to admission.

    ``install(reservation)`` must apply flow rules and queues; ``release``
    undoes a committed reservation whose session then failed.
    """

    def __init__(self, admission: Admission, install: Callable[[Reservation], None],
                 release: Callable[[Reservation], None] | None = None,
                 timeout: float = DEFAULT_TIMEOUT):
        self.admission = admission
        self.install = install
        self.release = release
        self.timeout = timeout
        self.sessions: dict[int, ControllerSession] = {}
        self.log: list[tuple[float, QosRequest, Decision]] = []

    def _label(self, path) -> str:
        return self.admission.topo.path_label(path)

    def handle(self, frame: Frame, source: int | None = None, now: float = 0.0) -> list[Frame]:
        """Consume one frame; REQUESTs are queued, everything else is answered immediately."""
        if frame.msg_type is MsgType.REQUEST:
            if frame.request_id in self.sessions and not self.sessions[frame.request_id].done:
                return [Frame.make(MsgType.ERROR, frame.request_id, reason="duplicate")]
            try:
                req = request_from_body(frame, source)
            except FrameError:
                return [Frame.make(MsgType.ERROR, frame.request_id, reason="malformed")]
            session = ControllerSession(req, self.timeout, self._label)
            self.sessions[req.request_id] = session
            try:
                self.admission.enqueue(req)
            except UnauthorizedError:
                decision = Decision(Verdict.REJECT, reason=Reason.AUTH)
                self.log.append((now, req, decision))
                return session.respond(decision, now)
            return []
        session = self.sessions.get(frame.request_id)
        if session is None:
            return [Frame.make(MsgType.ERROR, frame.request_id, reason="unknown_request")]
        out = session.on_frame(frame, lambda d, r: self.admission.commit(d, r, now), now)
        if session.state is State.INSTALLING:
            self.install(session.reservation)
            out += session.on_installed(now)
        return out

    def service(self, now: float = 0.0) -> list[Frame]:
        """Decide every queued request in priority order."""
        out = []
        while len(self.admission.queue):
            req = self.admission.next()
            decision = self.admission.decide(req)
            self.log.append((now, req, decision))
            out += self.sessions[req.request_id].respond(decision, now)
        return out

    def on_timeout(self, now: float) -> list[Frame]:
        out = []
        release = self._release
        for session in self.sessions.values():
            out += session.on_timeout(now, release)
        return out

    def _release(self, reservation: Reservation) -> None:
        if reservation.id in self.admission.reservations:
            self.admission.release(reservation.id)
        if self.release is not None:
            self.release(reservation)


# -- transports ------------------------------------------------------------------

@dataclass
class ChannelTransport:
    """One end of an in-process, ordered, reliable byte channel."""

    inbox: queue.Queue = field(default_factory=queue.Queue)
    outbox: queue.Queue = field(default_factory=queue.Queue)
    dscp: int = NEGOTIATION_DSCP

    def send(self, data: bytes) -> None:
        self.outbox.put(Envelope(self.dscp, bytes(data)))

    def recv(self, timeout: float | None = None) -> bytes | None:
        try:
            return self.inbox.get(timeout=timeout).payload
        except queue.Empty:
            return None


def channel_pair() -> tuple[ChannelTransport, ChannelTransport]:
    a_to_b, b_to_a = queue.Queue(), queue.Queue()
    return ChannelTransport(inbox=b_to_a, outbox=a_to_b), ChannelTransport(inbox=a_to_b, outbox=b_to_a)


def client_negotiate(request: QosRequest, transport, floor: float | None = None,
                     timeout: float = DEFAULT_TIMEOUT, clock: Callable[[], float] = time.monotonic,
                     dest_label: str | None = None):
    """Run the application side over ``transport`` (``send(bytes)``, ``recv(timeout)``).

    Returns Granted, RevisedGranted or BestEffort; never raises for network trouble.
    """
    machine = ClientNegotiation(request, floor, timeout, dest_label)
    for frame in machine.start(clock()):
        transport.send(encode_frame(frame))
    while not machine.done:
        remaining = max(0.0, machine.deadline - clock())
        data = transport.recv(remaining)
        now = clock()
        if data is None:
            machine.on_timeout(max(now, machine.deadline))
            continue
        try:
            frame = decode_frame(data)
        except FrameError:
            machine.outcome = BestEffort("malformed")
            machine._enter(State.FAILED, now)
            break
        for reply in machine.on_frame(frame, now):
            transport.send(encode_frame(reply))
    return machine.outcome
