"""The gateway: orchestrates sessions among sources without ever holding data.

Towards consumers it looks like an ordinary data middleware (request in,
aggregate out). Towards sources it keeps a metadata directory fed by
discovery and heartbeats, plans sessions, drives their state machine and
restarts them with a reduced participant set when a source fails.
"""

from __future__ import annotations

import fnmatch
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .config import Params
from .errors import (
    AccessDenied,
    AuthFailed,
    DecodeOverflow,
    GatewayError,
    Implausible,
    InsufficientSources,
    MalformedRequest,
    SessionFailed,
    Vetoed,
)
from .field import FieldElement, FixedPointCodec
from .protocol import Phase, SessionSpec, SessionState, gateway_combine
from .request import AGGREGATES, DataRequest
from .source import SourceMetadata
from .transport import Node
from .wire import MessageKind, ProtocolMessage, canonical_dumps, canonical_loads, decode_message, unb64

log = logging.getLogger(__name__)


# -- metadata directory ------------------------------------------------------


@dataclass
class DirectoryEntry:
    metadata: SourceMetadata
    endpoint: str
    last_heartbeat: float
    dead: bool = False


class MetadataDirectory:
    def __init__(self, liveness_timeout: float = 3.0):
        self.liveness_timeout = liveness_timeout
        self.entries: dict[str, DirectoryEntry] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def is_live(self, source_id: str, now: float) -> bool:
        e = self.entries.get(source_id)
        return e is not None and not e.dead and now - e.last_heartbeat <= self.liveness_timeout

    def conflicts(self, source_id: str, endpoint: str, now: float) -> bool:
        """True if a *live* entry already holds this id at another endpoint."""
        e = self.entries.get(source_id)
        return e is not None and e.endpoint != endpoint and self.is_live(source_id, now)

    def register(self, metadata: SourceMetadata, endpoint: str, now: float) -> bool:
        if self.conflicts(metadata.source_id, endpoint, now):
            return False
        self.entries[metadata.source_id] = DirectoryEntry(metadata, endpoint, now)
        return True

    def heartbeat(self, source_id: str, endpoint: str, now: float) -> bool:
        e = self.entries.get(source_id)
        if e is None or e.endpoint != endpoint:
            return False
        e.last_heartbeat = now
        e.dead = False
        return True

    def mark_dead(self, source_id: str) -> None:
        if source_id in self.entries:
            self.entries[source_id].dead = True

    def live(self, now: float) -> list[DirectoryEntry]:
        return [self.entries[sid] for sid in sorted(self.entries) if self.is_live(sid, now)]

    def matching(self, data_type: str, scope: str, aggregate: str, now: float) -> list[DirectoryEntry]:
        return [
            e
            for e in self.live(now)
            if e.metadata.offers(data_type)
            and fnmatch.fnmatchcase(e.metadata.scope, scope)
            and aggregate in e.metadata.supported_protocols
        ]


def query_directory(directory: MetadataDirectory, now: float, data_type: str = "*") -> dict:
    """Consumer-facing view: data types, scopes and aggregates. Never identities or endpoints."""
    listing: dict[str, dict[str, set]] = {}
    for e in directory.live(now):
        for dt in e.metadata.data_types:
            if not fnmatch.fnmatchcase(dt.name, data_type):
                continue
            item = listing.setdefault(dt.name, {"scopes": set(), "aggregates": set(), "unit": set()})
            item["scopes"].add(e.metadata.scope)
            item["aggregates"].update(e.metadata.supported_protocols)
            if dt.unit:
                item["unit"].add(dt.unit)
    return {
        name: {key: sorted(values) for key, values in item.items()}
        for name, item in sorted(listing.items())
    }


# -- access control ----------------------------------------------------------


@dataclass(frozen=True)
class Grant:
    consumer_id: str
    data_type: str
    aggregate: str
    purpose: str


class AccessControlList:
    def __init__(self, grants: Iterable[Grant] = ()):
        self.grants = frozenset(grants)

    def admits(self, req: DataRequest) -> bool:
        return Grant(req.consumer_id, req.data_type, req.aggregate, req.purpose) in self.grants

    def to_bytes(self) -> bytes:
        rows = sorted(self.grants, key=lambda g: (g.consumer_id, g.data_type, g.aggregate, g.purpose))
        return b"".join(canonical_dumps(g.__dict__) + b"\n" for g in rows)

    @classmethod
    def from_bytes(cls, data: bytes) -> AccessControlList:
        return cls(Grant(**canonical_loads(line)) for line in data.splitlines() if line.strip())

    @classmethod
    def load(cls, path: str | Path) -> AccessControlList:
        return cls.from_bytes(Path(path).read_bytes())


def keys_to_bytes(keys: dict[str, bytes]) -> bytes:
    return b"".join(
        canonical_dumps({"consumer_id": cid, "key": key.hex()}) + b"\n" for cid, key in sorted(keys.items())
    )


def load_keys(path: str | Path) -> dict[str, bytes]:
    out = {}
    for line in Path(path).read_bytes().splitlines():
        if line.strip():
            rec = canonical_loads(line)
            out[rec["consumer_id"]] = bytes.fromhex(rec["key"])
    return out


# -- request admission and planning -------------------------------------------


def authenticate(raw: bytes, keys: dict[str, bytes]) -> DataRequest:
    try:
        req = DataRequest.from_bytes(raw)
    except MalformedRequest as exc:
        raise AuthFailed(f"unverifiable request: {exc}") from None
    key = keys.get(req.consumer_id)
    if key is None or not req.verify(key):
        raise AuthFailed("bad authentication tag", request_id=req.request_id)
    return req


def check_plausible(req: DataRequest, directory: MetadataDirectory, now: float) -> None:
    if req.aggregate not in AGGREGATES:
        raise Implausible(f"unsupported aggregate {req.aggregate!r}")
    if not req.window[1] > req.window[0]:
        raise Implausible("empty time window")
    offering = [e for e in directory.live(now) if e.metadata.offers(req.data_type)]
    if not offering:
        raise Implausible(f"unknown data type {req.data_type!r}")
    if not any(req.aggregate in e.metadata.supported_protocols for e in offering):
        raise Implausible(f"aggregate {req.aggregate!r} not offered for {req.data_type!r}")
    if not any(fnmatch.fnmatchcase(e.metadata.scope, req.scope) for e in offering):
        raise Implausible(f"scope {req.scope!r} unknown for {req.data_type!r}")


def plan_session(
    req: DataRequest,
    raw: bytes,
    directory: MetadataDirectory,
    now: float,
    session_id: str,
    params: Params = Params(),
    exclude: Iterable[str] = (),
) -> SessionSpec:
    excluded = set(exclude)
    matches = [
        e
        for e in directory.matching(req.data_type, req.scope, req.aggregate, now)
        if e.metadata.source_id not in excluded
    ]
    if len(matches) < params.min_participants:
        raise InsufficientSources(len(matches), params.min_participants)
    matches = matches[: params.max_participants]
    codec = FixedPointCodec(params.fraction_bits, params.half_range, params.max_participants, params.modulus)
    return SessionSpec(
        session_id=session_id,
        participants=tuple((e.metadata.source_id, e.endpoint) for e in matches),
        data_type=req.data_type,
        window=req.window,
        protocol_id=req.aggregate,
        codec=codec,
        original_request=raw,
        min_participants=params.min_participants,
    )


# -- the node ----------------------------------------------------------------


@dataclass
class SessionDriver:
    request: DataRequest
    raw: bytes
    consumer: str
    spec: SessionSpec
    state: SessionState = field(default_factory=SessionState)
    excluded: set[str] = field(default_factory=set)
    timer: object = None
    history: list[str] = field(default_factory=list)  # session ids, oldest first


class Gateway(Node):
    def __init__(
        self,
        keys: dict[str, bytes],
        acl: AccessControlList,
        params: Params = Params(),
        address: str = "gateway",
        acl_path: str | Path | None = None,
        keys_path: str | Path | None = None,
        operators: Iterable[str] = ("operator",),
    ):
        super().__init__(address)
        self.keys = dict(keys)
        self.acl = acl
        self.params = params
        self.acl_path = acl_path
        self.keys_path = keys_path
        self.operators = set(operators)
        self.epoch = 0
        # request_id -> outcome summary; kept across restarts for reporting
        self.outcomes: dict[str, dict] = {}
        self._reset()

    def _reset(self) -> None:
        self.directory = MetadataDirectory(self.params.liveness_timeout)
        self.sessions: dict[str, SessionDriver] = {}
        self._pending: dict[str, tuple[str, object]] = {}
        self._counter = 0
        self.rejected_announcements = 0

    def start(self) -> None:
        self._reset()

    def restart(self) -> None:
        self.epoch += 1
        self._reset()

    # -- dispatch --

    def on_frame(self, sender: str, frame: bytes) -> None:
        try:
            msg = decode_message(frame)
        except ValueError:
            log.warning("gateway: dropping malformed frame from %s", sender)
            return
        kind = msg.kind
        if kind is MessageKind.DISCOVERY_ANNOUNCE:
            self.handle_announcement(sender, msg)
        elif kind is MessageKind.SETUP_METADATA:
            self._on_offer(sender, msg)
        elif kind is MessageKind.HEARTBEAT:
            if self.directory.heartbeat(msg.sender, sender, self.now):
                self.send(sender, ProtocolMessage(MessageKind.HEARTBEAT, self.address))
        elif kind is MessageKind.REQUEST:
            try:
                raw = unb64(msg.payload["request"])
            except (KeyError, TypeError, ValueError):
                raw = b""
            self.handle_request(sender, raw)
        elif kind is MessageKind.DIRECTORY_QUERY:
            listing = query_directory(self.directory, self.now, msg.payload.get("data_type", "*"))
            self.send(sender, ProtocolMessage(MessageKind.DIRECTORY_LISTING, self.address, None, {"listing": listing}))
        elif kind is MessageKind.RELOAD:
            self._on_reload(sender)
        elif msg.session_id in self.sessions:
            self._on_session_frame(sender, msg)

    # -- discovery --

    def handle_announcement(self, sender: str, msg: ProtocolMessage) -> None:
        sid = msg.payload.get("source_id")
        if not isinstance(sid, str):
            return
        pending = self._pending.get(sid)
        if self.directory.conflicts(sid, sender, self.now) or (pending and pending[0] != sender):
            self.rejected_announcements += 1
            log.info("gateway: rejecting duplicate source id %s from %s", sid, sender)
            return
        if pending:
            return
        timer = self.call_later(self.params.setup_timeout, lambda: self._setup_expired(sid, sender))
        self._pending[sid] = (sender, timer)
        self.send(sender, ProtocolMessage(MessageKind.SETUP_METADATA, self.address, None, {"phase": "request"}))

    def _setup_expired(self, sid: str, endpoint: str) -> None:
        pending = self._pending.get(sid)
        if pending and pending[0] == endpoint:
            del self._pending[sid]
            log.info("gateway: setup with %s timed out", sid)

    def _on_offer(self, sender: str, msg: ProtocolMessage) -> None:
        if msg.payload.get("phase") != "offer":
            return
        sid = msg.sender
        pending = self._pending.get(sid)
        if not pending or pending[0] != sender:
            return
        try:
            metadata = SourceMetadata.from_dict(msg.payload["metadata"])
        except (KeyError, TypeError, ValueError):
            return
        if metadata.source_id != sid:
            return
        del self._pending[sid]
        pending[1].cancel()
        if self.directory.register(metadata, sender, self.now):
            self.send(sender, ProtocolMessage(MessageKind.SETUP_METADATA, self.address, None, {"phase": "ack"}))
        else:
            self.rejected_announcements += 1

    # -- consumer requests --

    def admit(self, raw: bytes) -> DataRequest:
        """Authentication, access control and plausibility, in that order."""
        req = authenticate(raw, self.keys)
        if not self.acl.admits(req):
            raise AccessDenied(
                f"{req.consumer_id} may not request {req.aggregate}({req.data_type}) for {req.purpose!r}",
                request_id=req.request_id,
            )
        check_plausible(req, self.directory, self.now)
        return req

    def handle_request(self, consumer: str, raw: bytes) -> None:
        request_id = peek_request_id(raw)
        try:
            req = self.admit(raw)
            spec = plan_session(req, raw, self.directory, self.now, self._next_session_id(), self.params)
        except GatewayError as exc:
            self._reply_error(consumer, request_id, exc)
            return
        self.orchestrate(SessionDriver(req, raw, consumer, spec))

    def _next_session_id(self) -> str:
        self._counter += 1
        return f"{self.address}.{self.epoch}.{self._counter}"

    def _reply_error(self, consumer: str, request_id: str | None, exc: GatewayError, restarts: int = 0) -> None:
        if request_id is not None:
            self.outcomes[request_id] = {"status": "error", "error": exc.code, "restarts": restarts}
        payload = {"request_id": request_id, **exc.to_payload()}
        self.send(consumer, ProtocolMessage(MessageKind.ERROR, self.address, None, payload))

    # -- sessions --

    def orchestrate(self, driver: SessionDriver) -> None:
        spec = driver.spec
        self.sessions[spec.session_id] = driver
        driver.history.append(spec.session_id)
        driver.state.advance(Phase.ANNOUNCED)
        announce = ProtocolMessage(MessageKind.ANNOUNCE, self.address, spec.session_id, {"spec": spec.to_dict()})
        for _, endpoint in spec.participants:
            self.send(endpoint, announce)
        self._arm(driver, self.params.decision_timeout)

    def _arm(self, driver: SessionDriver, delay: float) -> None:
        if driver.timer is not None:
            driver.timer.cancel()
        sid = driver.spec.session_id
        driver.timer = self.call_later(delay, lambda: self._on_timeout(sid))

    def _broadcast_session(self, driver: SessionDriver, kind: MessageKind, skip: Iterable[str] = (), payload=None) -> None:
        skip = set(skip)
        msg = ProtocolMessage(kind, self.address, driver.spec.session_id, payload or {})
        for pid, endpoint in driver.spec.participants:
            if pid not in skip:
                self.send(endpoint, msg)

    def _on_session_frame(self, sender: str, msg: ProtocolMessage) -> None:
        driver = self.sessions[msg.session_id]
        state = driver.state
        pid = msg.sender
        try:
            if driver.spec.endpoint(pid) != sender:
                return
        except LookupError:
            return
        kind = msg.kind
        if kind is MessageKind.COMMIT and state.phase is Phase.ANNOUNCED:
            state.commits.add(pid)
            if len(state.commits) == len(driver.spec.participants):
                state.advance(Phase.COMMITTED)
                self._broadcast_session(driver, MessageKind.COMMIT)
                state.advance(Phase.EXCHANGING)
                self._arm(driver, self.params.exchange_timeout)
        elif kind is MessageKind.VETO and state.phase is Phase.ANNOUNCED:
            state.vetoes.add(pid)
            reason = msg.payload.get("reason")
            self._abort_vetoed(driver, {pid: reason if isinstance(reason, str) else ""})
        elif kind is MessageKind.ABORT and state.phase in (Phase.ANNOUNCED, Phase.EXCHANGING):
            reason = msg.payload.get("reason")
            if reason == "peer_timeout":
                missing = [m for m in msg.payload.get("missing", []) if m in driver.spec.party_ids]
                self.recover_session(driver, missing or [pid], "Timeout")
            else:
                # a source that cannot contribute refuses like a veto does
                state.vetoes.add(pid)
                self._abort_vetoed(driver, {pid: str(reason)})
        elif kind is MessageKind.PARTIAL_SUM and state.phase is Phase.EXCHANGING:
            state.partials[pid] = FieldElement.from_wire(msg.payload["value"], driver.spec.codec.modulus)
            if len(state.partials) == len(driver.spec.participants):
                self._combine(driver)

    def _abort_vetoed(self, driver: SessionDriver, reasons: dict[str, str]) -> None:
        state = driver.state
        state.advance(Phase.ABORTED, "Vetoed")
        self._close(driver)
        self._broadcast_session(driver, MessageKind.ABORT, skip=state.vetoes, payload={"reason": "vetoed"})
        self._reply_error(
            driver.consumer, driver.request.request_id, Vetoed(sorted(state.vetoes), reasons), driver.state.attempt
        )

    def _combine(self, driver: SessionDriver) -> None:
        state = driver.state
        state.advance(Phase.COMBINING)
        try:
            result = gateway_combine(state.partials, driver.spec)
        except DecodeOverflow:
            state.advance(Phase.ABORTED, "DecodeOverflow")
            self._close(driver)
            self._broadcast_session(driver, MessageKind.ABORT, payload={"reason": "decode_overflow"})
            self._reply_error(
                driver.consumer,
                driver.request.request_id,
                SessionFailed(state.attempt, "DecodeOverflow", Phase.COMBINING.value),
                state.attempt,
            )
            return
        state.advance(Phase.COMPLETED, expected=len(driver.spec.participants))
        self._close(driver)
        self._broadcast_session(driver, MessageKind.RESULT, payload={"status": "completed"})
        req = driver.request
        self.outcomes[req.request_id] = {
            "status": "ok",
            "restarts": state.attempt,
            "sessions": list(driver.history),
            "contributors": result.contributors,
        }
        self.send(
            driver.consumer,
            ProtocolMessage(
                MessageKind.RESULT,
                self.address,
                None,
                {
                    "request_id": req.request_id,
                    "aggregate": req.aggregate,
                    "value": result.value,
                    "contributors": result.contributors,
                },
            ),
        )

    def _close(self, driver: SessionDriver) -> None:
        if driver.timer is not None:
            driver.timer.cancel()
        self.sessions.pop(driver.spec.session_id, None)

    def _on_timeout(self, session_id: str) -> None:
        driver = self.sessions.get(session_id)
        if driver is None:
            return
        state = driver.state
        if state.phase is Phase.ANNOUNCED:
            failed = [p for p in driver.spec.party_ids if p not in state.commits]
        else:
            failed = [p for p in driver.spec.party_ids if p not in state.partials]
        self.recover_session(driver, failed, "Timeout")

    def recover_session(self, driver: SessionDriver, failed: list[str], cause: str) -> None:
        """Drop the failed sources and restart with fresh ids and fresh shares,
        or give up once quorum or the restart budget is gone."""
        state = driver.state
        phase = state.phase.value
        for pid in failed:
            self.directory.mark_dead(pid)
        driver.excluded.update(failed)
        self._close(driver)
        self._broadcast_session(driver, MessageKind.ABORT, payload={"reason": "restart"})
        log.info("gateway: session %s failed in %s (%s), dropping %s", driver.spec.session_id, phase, cause, failed)
        if state.attempt >= self.params.max_restarts:
            return self._fail(driver, cause, phase)
        try:
            spec = plan_session(
                driver.request,
                driver.raw,
                self.directory,
                self.now,
                self._next_session_id(),
                self.params,
                exclude=driver.excluded,
            )
        except InsufficientSources:
            return self._fail(driver, cause, phase)
        state.advance(Phase.RESTARTING)
        driver.spec = spec
        driver.timer = None
        self.orchestrate(driver)

    def _fail(self, driver: SessionDriver, cause: str, phase: str) -> None:
        driver.state.advance(Phase.ABORTED, cause)
        self._reply_error(
            driver.consumer,
            driver.request.request_id,
            SessionFailed(driver.state.attempt, cause, phase),
            driver.state.attempt,
        )

    # -- operator --

    def _on_reload(self, sender: str) -> None:
        if sender not in self.operators:
            return
        try:
            if self.acl_path is not None:
                self.acl = AccessControlList.load(self.acl_path)
            if self.keys_path is not None:
                self.keys = load_keys(self.keys_path)
            payload = {"status": "ok", "grants": len(self.acl.grants), "keys": len(self.keys)}
        except (OSError, ValueError, KeyError, TypeError) as exc:
            payload = {"status": "error", "reason": str(exc)}
        self.send(sender, ProtocolMessage(MessageKind.RELOAD, self.address, None, payload))


def peek_request_id(raw: bytes) -> str | None:
    try:
        rid = canonical_loads(raw).get("request_id")
    except (ValueError, AttributeError, UnicodeDecodeError):
        return None
    return rid if isinstance(rid, str) else None
