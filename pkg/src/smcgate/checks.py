"""Transcript checks for the privacy and accountability invariants.

These are the functions the CLI report and the test suite both call, so the
two cannot drift apart.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import OutOfRange
from .field import FixedPointCodec, encode_fixed
from .gateway import peek_request_id
from .source import TransparencyLog
from .transport import Transcript
from .wire import unb64

# what the gateway is allowed to receive: partial sums, controls and metadata
GATEWAY_INBOUND = {
    "Commit",
    "Veto",
    "PartialSum",
    "Abort",
    "Heartbeat",
    "DiscoveryAnnounce",
    "SetupMetadata",
    "Request",
    "DirectoryQuery",
    "Reload",
}


@dataclass
class CheckResult:
    name: str
    passed: bool
    violations: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "violations": self.violations}


def _messages(transcript: Transcript):
    for i, rec in enumerate(transcript.records):
        yield i, rec, rec.message()


def reading_tokens(readings: Mapping[str, Iterable[float]], codec: FixedPointCodec) -> dict[bytes, str]:
    """Quoted decimal field encodings of every scripted reading, as they would
    appear inside a frame."""
    tokens = {}
    for source_id, values in readings.items():
        for v in values:
            try:
                fe = encode_fixed(v, codec)
            except OutOfRange:
                continue
            tokens[b'"%d"' % fe.value] = source_id
    return tokens


def check_blindness(
    transcript: Transcript, readings: Mapping[str, Iterable[float]], codec: FixedPointCodec, gateway: str = "gateway"
) -> CheckResult:
    tokens = reading_tokens(readings, codec)
    violations = []
    for i, rec in enumerate(transcript.records):
        if rec.receiver != gateway:
            continue
        for token, source_id in tokens.items():
            if token in rec.frame:
                violations.append({"index": i, "source": source_id, "token": token.decode()})
    return CheckResult("blindness", not violations, violations)


def check_share_routing(transcript: Transcript, gateway: str = "gateway") -> CheckResult:
    violations = []
    for i, rec, msg in _messages(transcript):
        kind = msg.get("kind") if isinstance(msg, dict) else None
        if kind == "ShareTransfer" and gateway in (rec.sender, rec.receiver):
            violations.append({"index": i, "kind": kind, "sender": rec.sender, "receiver": rec.receiver})
        elif rec.receiver == gateway and kind not in GATEWAY_INBOUND:
            violations.append({"index": i, "kind": kind, "sender": rec.sender, "receiver": rec.receiver})
    return CheckResult("share_routing", not violations, violations)


def _consumer_requests(transcript: Transcript, gateway: str) -> dict[bytes, int]:
    """Original request bytes as sent by consumers, mapped to frame index."""
    out = {}
    for i, rec, msg in _messages(transcript):
        if rec.receiver == gateway and isinstance(msg, dict) and msg.get("kind") == "Request":
            try:
                out.setdefault(unb64(msg["payload"]["request"]), i)
            except (KeyError, TypeError, ValueError):
                continue
    return out


def _announces(transcript: Transcript, gateway: str):
    """(index, session_id, source_id, original_request) per delivered Announce."""
    for i, rec, msg in _messages(transcript):
        if rec.sender != gateway or rec.disposition != "delivered":
            continue
        if not isinstance(msg, dict) or msg.get("kind") != "Announce":
            continue
        spec = msg["payload"]["spec"]
        by_endpoint = {ep: pid for pid, ep in spec["participants"]}
        yield i, msg["session_id"], by_endpoint.get(rec.receiver), unb64(spec["original_request"])


def terminal_sessions(transcript: Transcript, gateway: str = "gateway") -> set[str]:
    done = set()
    for _, rec, msg in _messages(transcript):
        if not isinstance(msg, dict) or msg.get("session_id") is None:
            continue
        kind = msg.get("kind")
        if rec.sender == gateway and kind in ("Abort", "Result"):
            done.add(msg["session_id"])
        elif rec.receiver == gateway and kind == "Veto" and rec.disposition == "delivered":
            done.add(msg["session_id"])
    return done


def check_transparency(
    transcript: Transcript, logs: Mapping[str, TransparencyLog], gateway: str = "gateway"
) -> CheckResult:
    """Each source contacted for a finished session holds exactly one record
    whose request bytes equal what the consumer sent."""
    originals = _consumer_requests(transcript, gateway)
    done = terminal_sessions(transcript, gateway)
    records = {sid: Counter() for sid in logs}
    request_bytes: dict[tuple[str, str], list[bytes]] = defaultdict(list)
    for source_id, tlog in logs.items():
        for rec in tlog.records():
            records[source_id][rec.session_id] += 1
            request_bytes[(source_id, rec.session_id)].append(rec.original_request)
    violations = []
    for i, session_id, source_id, original in _announces(transcript, gateway):
        if session_id not in done:
            continue
        if original not in originals:
            violations.append({"index": i, "session_id": session_id, "problem": "request differs from consumer's"})
        if source_id not in records:
            violations.append({"index": i, "session_id": session_id, "source": source_id, "problem": "no log"})
            continue
        count = records[source_id][session_id]
        if count != 1:
            violations.append(
                {"index": i, "session_id": session_id, "source": source_id, "problem": f"{count} records"}
            )
        elif request_bytes[(source_id, session_id)][0] != original:
            violations.append(
                {"index": i, "session_id": session_id, "source": source_id, "problem": "logged bytes differ"}
            )
    return CheckResult("transparency_completeness", not violations, violations)


def check_fail_closed(transcript: Transcript, gateway: str = "gateway") -> CheckResult:
    """Requests rejected for authentication or access must never reach a source."""
    rejected = set()
    for _, rec, msg in _messages(transcript):
        if rec.sender == gateway and isinstance(msg, dict) and msg.get("kind") == "Error":
            if msg["payload"].get("error") in ("AuthFailed", "AccessDenied"):
                rejected.add(msg["payload"].get("request_id"))
    rejected_bytes = {
        raw for raw, _ in _consumer_requests(transcript, gateway).items() if peek_request_id(raw) in rejected
    }
    violations = [
        {"index": i, "session_id": session_id, "source": source_id}
        for i, session_id, source_id, original in _announces(transcript, gateway)
        if original in rejected_bytes
    ]
    return CheckResult("fail_closed", not violations, violations)


def check_single_result(transcript: Transcript, gateway: str = "gateway") -> CheckResult:
    """Every request gets at most one reply, and a result goes to exactly one consumer."""
    replies: dict[str, list[tuple[int, str]]] = defaultdict(list)
    for i, rec, msg in _messages(transcript):
        if rec.sender == gateway and isinstance(msg, dict) and msg.get("kind") in ("Result", "Error"):
            rid = msg["payload"].get("request_id")
            if msg.get("session_id") is None and rid is not None:
                replies[rid].append((i, rec.receiver))
    violations = [
        {"request_id": rid, "indices": [i for i, _ in items]} for rid, items in replies.items() if len(items) > 1
    ]
    return CheckResult("single_result", not violations, violations)


def run_checks(
    transcript: Transcript,
    readings: Mapping[str, Iterable[float]],
    codec: FixedPointCodec,
    logs: Mapping[str, TransparencyLog],
    gateway: str = "gateway",
) -> list[CheckResult]:
    return [
        check_blindness(transcript, readings, codec, gateway),
        check_share_routing(transcript, gateway),
        check_transparency(transcript, logs, gateway),
        check_fail_closed(transcript, gateway),
        check_single_result(transcript, gateway),
    ]
