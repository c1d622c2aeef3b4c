"""Thin consumer client: signs requests, sends them at scheduled times, keeps replies."""

from __future__ import annotations

from dataclasses import dataclass, field

from .request import DataRequest
from .transport import Node
from .wire import MessageKind, ProtocolMessage, b64, decode_message


def corrupt_tag(req: DataRequest, position: int = 0) -> DataRequest:
    """Flip one hex digit of the tag (keeps the request canonical)."""
    tag = req.auth_tag
    i = position % len(tag)
    flipped = "0123456789abcdef"[(int(tag[i], 16) + 1) % 16]
    return DataRequest(**{**req.__dict__, "auth_tag": tag[:i] + flipped + tag[i + 1 :]})


@dataclass
class PlannedRequest:
    at: float
    request: DataRequest  # unsigned; consumer_id must match the issuing consumer
    corrupt_tag: bool = False


@dataclass
class Response:
    request_id: str
    issued_at: float
    answered_at: float | None = None
    kind: str | None = None
    payload: dict = field(default_factory=dict)


class ConsumerNode(Node):
    def __init__(
        self,
        consumer_id: str,
        key: bytes,
        requests: list[PlannedRequest] = (),
        gateway: str = "gateway",
        address: str | None = None,
    ):
        super().__init__(address or consumer_id)
        self.consumer_id = consumer_id
        self.key = key
        self.planned = list(requests)
        self.gateway = gateway
        self.sent: dict[str, bytes] = {}
        self.responses: dict[str, Response] = {}
        self.listings: list[dict] = []

    def start(self) -> None:
        for pr in self.planned:
            self.call_later(max(0.0, pr.at - self.now), lambda pr=pr: self.issue(pr.request, pr.corrupt_tag))

    def issue(self, request: DataRequest, corrupt: bool = False) -> bytes:
        signed = request.signed(self.key)
        if corrupt:
            signed = corrupt_tag(signed)
        raw = signed.to_bytes()
        self.send_raw(request.request_id, raw)
        return raw

    def send_raw(self, request_id: str, raw: bytes) -> None:
        self.sent[request_id] = raw
        self.responses[request_id] = Response(request_id, self.now)
        self.send(self.gateway, ProtocolMessage(MessageKind.REQUEST, self.address, None, {"request": b64(raw)}))

    def query(self, data_type: str = "*") -> None:
        self.send(self.gateway, ProtocolMessage(MessageKind.DIRECTORY_QUERY, self.address, None, {"data_type": data_type}))

    def on_frame(self, sender: str, frame: bytes) -> None:
        if sender != self.gateway:
            return
        try:
            msg = decode_message(frame)
        except ValueError:
            return
        if msg.kind is MessageKind.DIRECTORY_LISTING:
            self.listings.append(msg.payload.get("listing", {}))
        elif msg.kind in (MessageKind.RESULT, MessageKind.ERROR):
            resp = self.responses.get(msg.payload.get("request_id"))
            if resp is not None and resp.answered_at is None:
                resp.answered_at = self.now
                resp.kind = msg.kind.value
                resp.payload = msg.payload

    def all_answered(self) -> bool:
        return len(self.responses) >= len(self.planned) and all(
            r.answered_at is not None for r in self.responses.values()
        )
