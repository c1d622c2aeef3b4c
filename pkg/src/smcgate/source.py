"""Source nodes: discovery, policy-driven consent, share exchange, transparency log."""

from __future__ import annotations

import fnmatch
import logging
import random
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .config import Params
from .errors import MalformedRequest, MissingShares, OutOfRange
from .field import FieldElement, RandomSource, encode_fixed
from .protocol import SessionSpec, participate, source_accumulate
from .request import AGGREGATES, DataRequest
from .transport import Node
from .wire import MessageKind, ProtocolMessage, b64, canonical_dumps, canonical_loads, decode_message, unb64

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DataTypeInfo:
    name: str
    unit: str = ""
    description: str = ""


@dataclass(frozen=True)
class SourceMetadata:
    source_id: str
    data_types: tuple[DataTypeInfo, ...]
    supported_protocols: tuple[str, ...] = AGGREGATES
    scope: str = ""  # location tag, e.g. "3.A"

    def __post_init__(self) -> None:
        names = [dt.name for dt in self.data_types]
        if not names:
            raise ValueError(f"{self.source_id}: at least one data type required")
        if len(set(names)) != len(names):
            raise ValueError(f"{self.source_id}: duplicate data type names {names}")
        bad = set(self.supported_protocols) - set(AGGREGATES)
        if bad:
            raise ValueError(f"{self.source_id}: unknown protocols {sorted(bad)}")

    def offers(self, data_type: str) -> bool:
        return any(dt.name == data_type for dt in self.data_types)

    def to_dict(self) -> dict:
        return {
            "source_id": self.source_id,
            "data_types": [[dt.name, dt.unit, dt.description] for dt in self.data_types],
            "supported_protocols": list(self.supported_protocols),
            "scope": self.scope,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SourceMetadata:
        return cls(
            source_id=d["source_id"],
            data_types=tuple(DataTypeInfo(*dt) for dt in d["data_types"]),
            supported_protocols=tuple(d.get("supported_protocols", AGGREGATES)),
            scope=d.get("scope", ""),
        )


# -- policy ------------------------------------------------------------------


@dataclass(frozen=True)
class PolicyRule:
    consumer: str = "*"
    purpose: str = "*"
    data_type: str = "*"
    decision: str = "allow"

    def __post_init__(self) -> None:
        if self.decision not in ("allow", "deny"):
            raise ValueError(f"decision must be allow or deny, got {self.decision!r}")

    def matches(self, request: DataRequest) -> bool:
        return (
            fnmatch.fnmatchcase(request.consumer_id, self.consumer)
            and fnmatch.fnmatchcase(request.purpose, self.purpose)
            and fnmatch.fnmatchcase(request.data_type, self.data_type)
        )


@dataclass(frozen=True)
class SourcePolicy:
    """Ordered glob rules; the first match decides, otherwise ``default``."""

    rules: tuple[PolicyRule, ...] = ()
    default: str = "deny"

    def to_dict(self) -> dict:
        return {
            "rules": [[r.consumer, r.purpose, r.data_type, r.decision] for r in self.rules],
            "default": self.default,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SourcePolicy:
        return cls(tuple(PolicyRule(*r) for r in d.get("rules", ())), d.get("default", "deny"))


@dataclass(frozen=True)
class Decision:
    commit: bool
    reason: str | None = None


def evaluate_request(request: DataRequest, policy: SourcePolicy) -> Decision:
    for i, rule in enumerate(policy.rules):
        if rule.matches(request):
            if rule.decision == "allow":
                return Decision(True)
            return Decision(False, f"denied by rule {i}")
    if policy.default == "allow":
        return Decision(True)
    return Decision(False, "denied by default")


# -- transparency log --------------------------------------------------------


@dataclass(frozen=True)
class TransparencyRecord:
    timestamp: float
    session_id: str
    original_request: bytes
    consumer_id: str
    decision: str  # contributed | vetoed
    reason: str | None = None
    result_delivered: bool = False


class TransparencyLog:
    """Append-only per-source log of session requests and decisions.

    Two line types are written: a ``request`` line when the source decides,
    and an ``outcome`` line when it learns how the session ended. Nothing is
    rewritten; :meth:`records` folds outcomes into the request records.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._lines: list[bytes] = []
        self._sessions: set[str] = set()
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            for line in self.path.read_bytes().splitlines():
                if line:
                    self._ingest(line)

    def _ingest(self, line: bytes) -> None:
        self._lines.append(line)
        entry = canonical_loads(line)
        if entry["entry"] == "request":
            self._sessions.add(entry["session_id"])

    def _append(self, entry: dict) -> None:
        line = canonical_dumps(entry)
        with self._lock:
            self._ingest(line)
            if self.path is not None:
                with self.path.open("ab") as fh:
                    fh.write(line + b"\n")

    def has(self, session_id: str) -> bool:
        return session_id in self._sessions

    def record(self, rec: TransparencyRecord) -> None:
        self._append(
            {
                "entry": "request",
                "timestamp": rec.timestamp,
                "session_id": rec.session_id,
                "original_request": b64(rec.original_request),
                "consumer_id": rec.consumer_id,
                "decision": rec.decision,
                "reason": rec.reason,
            }
        )

    def outcome(self, timestamp: float, session_id: str, outcome: str, result_delivered: bool) -> None:
        self._append(
            {
                "entry": "outcome",
                "timestamp": timestamp,
                "session_id": session_id,
                "outcome": outcome,
                "result_delivered": result_delivered,
            }
        )

    def lines(self) -> list[bytes]:
        return list(self._lines)

    def to_bytes(self) -> bytes:
        return b"".join(line + b"\n" for line in self._lines)

    def records(self) -> list[TransparencyRecord]:
        delivered = set()
        out = []
        entries = [canonical_loads(line) for line in self._lines]
        for e in entries:
            if e["entry"] == "outcome" and e["result_delivered"]:
                delivered.add(e["session_id"])
        for e in entries:
            if e["entry"] == "request":
                out.append(
                    TransparencyRecord(
                        timestamp=e["timestamp"],
                        session_id=e["session_id"],
                        original_request=unb64(e["original_request"]),
                        consumer_id=e["consumer_id"],
                        decision=e["decision"],
                        reason=e["reason"],
                        result_delivered=e["session_id"] in delivered,
                    )
                )
        return out

    @classmethod
    def from_bytes(cls, data: bytes) -> TransparencyLog:
        tlog = cls()
        for line in data.splitlines():
            if line:
                tlog._ingest(line)
        return tlog


# -- local readings ----------------------------------------------------------


class ScriptedReadings:
    """Readings given as (data_type, time, value); the latest one inside the
    session window [start, end) is used."""

    def __init__(self, readings: Iterable[Sequence] = ()):
        self.readings = [(str(dt), float(t), float(v)) for dt, t, v in readings]

    def reading(self, data_type: str, window: tuple[float, float]) -> float | None:
        start, end = window
        best = None
        for dt, t, v in self.readings:
            if dt == data_type and start <= t < end and (best is None or t >= best[0]):
                best = (t, v)
        return None if best is None else best[1]


class FileReadings(ScriptedReadings):
    """Newline-delimited ``[data_type, time, value]`` records."""

    def __init__(self, path: str | Path):
        lines = Path(path).read_bytes().splitlines()
        super().__init__(canonical_loads(line) for line in lines if line.strip())


# -- the node ----------------------------------------------------------------


@dataclass
class _Participation:
    spec: SessionSpec
    gateway: str
    started: bool = False
    own: FieldElement | None = None
    received: dict[str, FieldElement] = field(default_factory=dict)
    partial_sent: bool = False
    timer: object = None


class SourceNode(Node):
    def __init__(
        self,
        metadata: SourceMetadata,
        policy: SourcePolicy,
        readings: ScriptedReadings,
        tlog: TransparencyLog | None = None,
        address: str | None = None,
        rng: RandomSource | None = None,
        params: Params = Params(),
    ):
        super().__init__(address or metadata.source_id)
        self.metadata = metadata
        self.policy = policy
        self.readings = readings
        self.tlog = tlog if tlog is not None else TransparencyLog()
        self.rng = rng if rng is not None else random.SystemRandom()
        self.params = params
        self.announces_sent = 0
        self.heartbeats_sent = 0
        self._reset()

    @property
    def source_id(self) -> str:
        return self.metadata.source_id

    def _reset(self) -> None:
        self.gateway: str | None = None
        self.sessions: dict[str, _Participation] = {}
        self._last_ack = 0.0
        self._watchdog = None
        self._gen = 0

    def start(self) -> None:
        self._reset()
        self._begin_announcing()

    def restart(self) -> None:
        self.start()

    # -- discovery and liveness --

    def announce_message(self) -> ProtocolMessage:
        return ProtocolMessage(
            MessageKind.DISCOVERY_ANNOUNCE,
            self.source_id,
            None,
            {"source_id": self.source_id, "endpoint": self.address},
        )

    def _begin_announcing(self) -> None:
        self.gateway = None
        self._gen += 1
        self._announce(self._gen)

    def _announce(self, gen: int) -> None:
        if gen != self._gen or self.gateway is not None:
            return
        self.broadcast(self.announce_message())
        self.announces_sent += 1
        self.call_later(self.params.heartbeat_interval, lambda: self._announce(gen))

    def _heartbeat(self, gen: int) -> None:
        if gen != self._gen or self.gateway is None:
            return
        self.send(self.gateway, ProtocolMessage(MessageKind.HEARTBEAT, self.source_id))
        self.heartbeats_sent += 1
        self.call_later(self.params.heartbeat_interval, lambda: self._heartbeat(gen))

    def _acked(self) -> None:
        self._last_ack = self.now
        if self._watchdog is not None:
            self._watchdog.cancel()
        gen = self._gen
        self._watchdog = self.call_later(self.params.liveness_timeout, lambda: self._gateway_lost(gen))

    def _gateway_lost(self, gen: int) -> None:
        if gen == self._gen and self.gateway is not None:
            log.info("%s lost gateway %s at t=%.3f", self.source_id, self.gateway, self.now)
            self._begin_announcing()

    # -- frame dispatch --

    def on_frame(self, sender: str, frame: bytes) -> None:
        try:
            msg = decode_message(frame)
        except ValueError:
            log.warning("%s: dropping malformed frame from %s", self.source_id, sender)
            return
        kind = msg.kind
        if kind is MessageKind.SETUP_METADATA:
            self._on_setup(sender, msg)
        elif kind is MessageKind.SHARE_TRANSFER:
            self._on_share(sender, msg)
        elif sender != self.gateway:
            return
        elif kind is MessageKind.HEARTBEAT:
            self._acked()
        elif kind is MessageKind.ANNOUNCE:
            self._on_announce(sender, msg)
        elif kind is MessageKind.COMMIT:
            self._on_go(msg)
        elif kind is MessageKind.ABORT:
            self._finish(msg.session_id, "aborted", False)
        elif kind is MessageKind.RESULT:
            self._finish(msg.session_id, "completed", True)

    def _on_setup(self, sender: str, msg: ProtocolMessage) -> None:
        phase = msg.payload.get("phase")
        if phase == "request" and self.gateway is None:
            self.send(
                sender,
                ProtocolMessage(
                    MessageKind.SETUP_METADATA,
                    self.source_id,
                    None,
                    {"phase": "offer", "metadata": self.metadata.to_dict(), "endpoint": self.address},
                ),
            )
        elif phase == "ack" and self.gateway is None:
            self.gateway = sender
            self._gen += 1
            self._acked()
            gen = self._gen
            self.call_later(self.params.heartbeat_interval, lambda: self._heartbeat(gen))

    # -- sessions --

    def evaluate(self, spec: SessionSpec) -> Decision:
        """Consent check for one announced session. Pure apart from the caller's logging."""
        try:
            req = DataRequest.from_bytes(spec.original_request)
        except MalformedRequest as exc:
            return Decision(False, f"malformed request: {exc}")
        if (req.data_type, req.aggregate, req.window) != (spec.data_type, spec.protocol_id, spec.window):
            return Decision(False, "session does not match the forwarded request")
        if not self.metadata.offers(spec.data_type):
            return Decision(False, f"data type {spec.data_type!r} not offered")
        if spec.protocol_id not in self.metadata.supported_protocols:
            return Decision(False, f"protocol {spec.protocol_id!r} not supported")
        return evaluate_request(req, self.policy)

    def _on_announce(self, sender: str, msg: ProtocolMessage) -> None:
        try:
            spec = SessionSpec.from_dict(msg.payload["spec"])
        except (KeyError, TypeError, ValueError) as exc:
            log.warning("%s: bad session spec: %s", self.source_id, exc)
            return
        if self.source_id not in spec.party_ids or self.tlog.has(spec.session_id):
            return
        decision = self.evaluate(spec)
        try:
            consumer = DataRequest.from_bytes(spec.original_request, strict=False).consumer_id
        except MalformedRequest:
            consumer = ""
        self.tlog.record(
            TransparencyRecord(
                timestamp=self.now,
                session_id=spec.session_id,
                original_request=spec.original_request,
                consumer_id=consumer,
                decision="contributed" if decision.commit else "vetoed",
                reason=decision.reason,
            )
        )
        if decision.commit:
            self.sessions[spec.session_id] = _Participation(spec, sender)
            self.send(sender, ProtocolMessage(MessageKind.COMMIT, self.source_id, spec.session_id))
        else:
            self.send(
                sender,
                ProtocolMessage(MessageKind.VETO, self.source_id, spec.session_id, {"reason": decision.reason}),
            )

    def _on_go(self, msg: ProtocolMessage) -> None:
        part = self.sessions.get(msg.session_id)
        if part is None or part.started:
            return
        spec = part.spec
        reading = self.readings.reading(spec.data_type, spec.window)
        if reading is None:
            self._report(part, {"reason": "no_local_data"})
            return
        try:
            value = encode_fixed(1.0 if spec.protocol_id == "count" else reading, spec.codec)
        except OutOfRange:
            self._report(part, {"reason": "out_of_range"})
            return
        part.own, out = participate(value, spec, self.rng, self.source_id)
        part.started = True
        for dst, share_msg in out:
            self.send(dst, share_msg)
        part.timer = self.call_later(self.params.peer_timeout, lambda: self._peer_timeout(spec.session_id))
        self._maybe_partial(part)

    def _on_share(self, sender: str, msg: ProtocolMessage) -> None:
        part = self.sessions.get(msg.session_id)
        if part is None or msg.sender == self.source_id:
            return
        try:
            if part.spec.endpoint(msg.sender) != sender:
                return
        except LookupError:
            return
        part.received[msg.sender] = FieldElement.from_wire(msg.payload["share"], part.spec.codec.modulus)
        self._maybe_partial(part)

    def _maybe_partial(self, part: _Participation) -> None:
        peers = len(part.spec.participants) - 1
        if not part.started or part.partial_sent or len(part.received) < peers:
            return
        try:
            partial = source_accumulate(part.own, part.received.values(), peers)
        except MissingShares:
            return
        part.partial_sent = True
        if part.timer is not None:
            part.timer.cancel()
        # shares are no longer needed once folded
        part.received.clear()
        part.own = None
        self.send(
            part.gateway,
            ProtocolMessage(MessageKind.PARTIAL_SUM, self.source_id, part.spec.session_id, {"value": partial.to_wire()}),
        )

    def _peer_timeout(self, session_id: str) -> None:
        part = self.sessions.get(session_id)
        if part is None or part.partial_sent:
            return
        missing = [pid for pid in part.spec.party_ids if pid != self.source_id and pid not in part.received]
        self._report(part, {"reason": "peer_timeout", "missing": missing})

    def _report(self, part: _Participation, payload: dict) -> None:
        """Failure report to the gateway; local session state is discarded."""
        self.sessions.pop(part.spec.session_id, None)
        self.send(part.gateway, ProtocolMessage(MessageKind.ABORT, self.source_id, part.spec.session_id, payload))

    def _finish(self, session_id: str | None, outcome: str, delivered: bool) -> None:
        if session_id is None or not self.tlog.has(session_id):
            return
        self.sessions.pop(session_id, None)
        self.tlog.outcome(self.now, session_id, outcome, delivered)
