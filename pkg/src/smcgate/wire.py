"""Canonical newline-delimited frame encoding.

Every frame is one JSON object with sorted keys, no insignificant whitespace,
ASCII only, terminated by a single ``\\n``. The same canonical encoding is
used for transparency logs, transcripts, scenario files and ACL/key files.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from .errors import MalformedFrame, UnknownKind


def canonical_dumps(obj: Any) -> bytes:
    return json.dumps(
        obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True, allow_nan=False
    ).encode("ascii")


def canonical_loads(data: bytes | str) -> Any:
    return json.loads(data)


def b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def unb64(text: str) -> bytes:
    return base64.b64decode(text.encode("ascii"), validate=True)


class MessageKind(str, Enum):
    ANNOUNCE = "Announce"
    COMMIT = "Commit"
    VETO = "Veto"
    SHARE_TRANSFER = "ShareTransfer"
    PARTIAL_SUM = "PartialSum"
    RESULT = "Result"
    ABORT = "Abort"
    HEARTBEAT = "Heartbeat"
    DISCOVERY_ANNOUNCE = "DiscoveryAnnounce"
    SETUP_METADATA = "SetupMetadata"
    # consumer / operator API
    REQUEST = "Request"
    ERROR = "Error"
    DIRECTORY_QUERY = "DirectoryQuery"
    DIRECTORY_LISTING = "DirectoryListing"
    RELOAD = "Reload"


_FIELD_PAYLOAD = {MessageKind.SHARE_TRANSFER: "share", MessageKind.PARTIAL_SUM: "value"}
_FRAME_KEYS = {"kind", "payload", "sender", "session_id"}


@dataclass(frozen=True)
class ProtocolMessage:
    kind: MessageKind
    sender: str
    session_id: str | None = None
    payload: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "payload": self.payload,
            "sender": self.sender,
            "session_id": self.session_id,
        }


def encode_message(m: ProtocolMessage) -> bytes:
    return canonical_dumps(m.to_dict()) + b"\n"


def decode_message(frame: bytes) -> ProtocolMessage:
    if not frame.endswith(b"\n") or b"\n" in frame[:-1]:
        raise MalformedFrame("frame must be exactly one newline-terminated line")
    try:
        obj = canonical_loads(frame[:-1])
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedFrame(f"undecodable frame: {exc}") from None
    if not isinstance(obj, dict) or set(obj) != _FRAME_KEYS:
        raise MalformedFrame("frame must have exactly kind, payload, sender, session_id")
    try:
        kind = MessageKind(obj["kind"])
    except ValueError:
        raise UnknownKind(f"unknown message kind {obj['kind']!r}") from None
    sender, session_id, payload = obj["sender"], obj["session_id"], obj["payload"]
    if not isinstance(sender, str) or not isinstance(payload, dict):
        raise MalformedFrame("sender must be a string and payload an object")
    if session_id is not None and not isinstance(session_id, str):
        raise MalformedFrame("session_id must be a string or null")
    if kind in _FIELD_PAYLOAD:
        key = _FIELD_PAYLOAD[kind]
        value = payload.get(key)
        if set(payload) != {key} or not isinstance(value, str) or not value.isdigit():
            raise MalformedFrame(f"{kind.value} payload must hold exactly one field element")
    return ProtocolMessage(kind, sender, session_id, payload)


def frame_kind(frame: bytes) -> str | None:
    """Best-effort kind lookup for transport-level matching; None if undecodable."""
    try:
        return canonical_loads(frame)["kind"]
    except (ValueError, TypeError, KeyError):
        return None
