"""Consumer data requests and their keyed integrity tags."""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import asdict, dataclass, replace

from .errors import MalformedRequest
from .wire import canonical_dumps, canonical_loads

AGGREGATES = ("sum", "count", "average")

_FIELDS = ("request_id", "consumer_id", "purpose", "aggregate", "data_type", "scope", "window")


@dataclass(frozen=True)
class DataRequest:
    request_id: str
    consumer_id: str
    purpose: str
    aggregate: str
    data_type: str
    scope: str
    window: tuple[float, float]
    auth_tag: str = ""

    def body(self) -> dict:
        d = asdict(self)
        del d["auth_tag"]
        d["window"] = [float(self.window[0]), float(self.window[1])]
        return d

    def signing_bytes(self) -> bytes:
        return canonical_dumps(self.body())

    def compute_tag(self, key: bytes) -> str:
        return hmac.new(key, self.signing_bytes(), hashlib.sha256).hexdigest()

    def signed(self, key: bytes) -> DataRequest:
        return replace(self, auth_tag=self.compute_tag(key))

    def verify(self, key: bytes) -> bool:
        return hmac.compare_digest(self.compute_tag(key), self.auth_tag)

    def to_bytes(self) -> bytes:
        return canonical_dumps({**self.body(), "auth_tag": self.auth_tag})

    @classmethod
    def from_bytes(cls, data: bytes, strict: bool = True) -> DataRequest:
        """Parse the wire form.

        With ``strict`` the input must already be in canonical form, so any
        byte-level change to a signed request either fails here or breaks the
        tag.
        """
        try:
            obj = canonical_loads(data)
        except (ValueError, UnicodeDecodeError) as exc:
            raise MalformedRequest(f"undecodable request: {exc}") from None
        if not isinstance(obj, dict) or set(obj) != set(_FIELDS) | {"auth_tag"}:
            raise MalformedRequest("unexpected request fields")
        window = obj["window"]
        if (
            not isinstance(window, list)
            or len(window) != 2
            or not all(isinstance(w, (int, float)) and not isinstance(w, bool) for w in window)
        ):
            raise MalformedRequest("window must be [start, end]")
        for name in (*_FIELDS[:-1], "auth_tag"):
            if not isinstance(obj[name], str):
                raise MalformedRequest(f"{name} must be a string")
        req = cls(**{**obj, "window": (float(window[0]), float(window[1]))})
        if strict and req.to_bytes() != data:
            raise MalformedRequest("request is not in canonical form")
        return req
