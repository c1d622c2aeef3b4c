"""One-round additive re-sharing for linear aggregates.

Each source splits its encoded reading into one share per participant, sends
the foreign shares directly to the peers, and adds up everything it holds.
Only those partial sums reach the gateway, which adds them and decodes.
The gateway never holds a share and is not a computation party.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from .errors import IllegalTransition, IncompletePartials, MissingShares, NotParticipant
from .field import (
    FieldElement,
    FixedPointCodec,
    RandomSource,
    decode_fixed,
    fe_sum,
    share_additive,
)
from .request import AGGREGATES
from .wire import MessageKind, ProtocolMessage, b64, unb64


@dataclass(frozen=True)
class SessionSpec:
    session_id: str
    participants: tuple[tuple[str, str], ...]  # (party_id, endpoint)
    data_type: str
    window: tuple[float, float]
    protocol_id: str
    codec: FixedPointCodec
    original_request: bytes
    min_participants: int = 3

    def __post_init__(self) -> None:
        ids = self.party_ids
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate participants {ids}")
        if self.min_participants < 2:
            raise ValueError("min_participants must be at least 2")
        if len(ids) < self.min_participants:
            raise ValueError(f"{len(ids)} participants < min_participants {self.min_participants}")
        if self.protocol_id not in AGGREGATES:
            raise ValueError(f"unknown protocol {self.protocol_id!r}")
        if len(ids) > self.codec.max_participants:
            raise ValueError(f"{len(ids)} participants exceed codec bound {self.codec.max_participants}")

    @property
    def party_ids(self) -> list[str]:
        return [pid for pid, _ in self.participants]

    def endpoint(self, party_id: str) -> str:
        for pid, ep in self.participants:
            if pid == party_id:
                return ep
        raise NotParticipant(party_id)

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "participants": [[pid, ep] for pid, ep in self.participants],
            "data_type": self.data_type,
            "window": [self.window[0], self.window[1]],
            "protocol_id": self.protocol_id,
            "codec": self.codec.to_dict(),
            "original_request": b64(self.original_request),
            "min_participants": self.min_participants,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SessionSpec:
        return cls(
            session_id=d["session_id"],
            participants=tuple((pid, ep) for pid, ep in d["participants"]),
            data_type=d["data_type"],
            window=(float(d["window"][0]), float(d["window"][1])),
            protocol_id=d["protocol_id"],
            codec=FixedPointCodec.from_dict(d["codec"]),
            original_request=unb64(d["original_request"]),
            min_participants=int(d["min_participants"]),
        )


class Phase(str, Enum):
    PLANNED = "Planned"
    ANNOUNCED = "Announced"
    COMMITTED = "Committed"
    EXCHANGING = "Exchanging"
    COMBINING = "Combining"
    COMPLETED = "Completed"
    ABORTED = "Aborted"
    RESTARTING = "Restarting"


TERMINAL = {Phase.COMPLETED, Phase.ABORTED}

_FORWARD = {
    Phase.PLANNED: {Phase.ANNOUNCED},
    Phase.ANNOUNCED: {Phase.COMMITTED, Phase.RESTARTING},
    Phase.COMMITTED: {Phase.EXCHANGING, Phase.RESTARTING},
    Phase.EXCHANGING: {Phase.COMBINING, Phase.RESTARTING},
    Phase.COMBINING: {Phase.COMPLETED},
    Phase.RESTARTING: {Phase.ANNOUNCED},
}


def legal_transition(src: Phase, dst: Phase) -> bool:
    if src in TERMINAL:
        return False
    return dst is Phase.ABORTED or dst in _FORWARD[src]


@dataclass
class SessionState:
    phase: Phase = Phase.PLANNED
    commits: set[str] = field(default_factory=set)
    vetoes: set[str] = field(default_factory=set)
    partials: dict[str, FieldElement] = field(default_factory=dict)
    attempt: int = 0
    reason: str | None = None
    history: list[Phase] = field(default_factory=lambda: [Phase.PLANNED])

    def advance(self, dst: Phase, reason: str | None = None, expected: int | None = None) -> None:
        if not legal_transition(self.phase, dst):
            raise IllegalTransition(f"{self.phase.value} -> {dst.value}")
        if dst is Phase.COMPLETED and expected is not None and len(self.partials) != expected:
            raise IllegalTransition(f"Completed with {len(self.partials)}/{expected} partials")
        if dst is Phase.RESTARTING:
            self.attempt += 1
        if dst is Phase.ANNOUNCED and self.phase is Phase.RESTARTING:
            self.commits.clear()
            self.vetoes.clear()
            self.partials.clear()
        if dst is Phase.ABORTED:
            self.reason = reason
        self.phase = dst
        self.history.append(dst)


@dataclass(frozen=True)
class AggregateResult:
    value: float
    contributors: int


# -- round functions ---------------------------------------------------------


def source_prepare_shares(
    value: FieldElement, spec: SessionSpec, rng: RandomSource, party_id: str
) -> dict[str, FieldElement]:
    if party_id not in spec.party_ids:
        raise NotParticipant(f"{party_id} is not in session {spec.session_id}")
    return share_additive(value, spec.party_ids, rng).as_dict()


def participate(
    value: FieldElement, spec: SessionSpec, rng: RandomSource, party_id: str
) -> tuple[FieldElement, list[tuple[str, ProtocolMessage]]]:
    """Shares for one source: its own retained share plus one outbound
    ShareTransfer per peer, addressed to the peer's endpoint."""
    shares = source_prepare_shares(value, spec, rng, party_id)
    own = shares.pop(party_id)
    out = [
        (
            spec.endpoint(pid),
            ProtocolMessage(
                MessageKind.SHARE_TRANSFER, party_id, spec.session_id, {"share": fe.to_wire()}
            ),
        )
        for pid, fe in shares.items()
    ]
    return own, out


def source_accumulate(
    own_share: FieldElement, received: Iterable[FieldElement], expected: int | None = None
) -> FieldElement:
    """Fold own share with the peers' shares into this party's partial sum.

    ``expected`` is the number of peers; without it, only an empty ``received``
    is rejected (a session always has at least one peer).
    """
    received = list(received)
    if not received:
        raise MissingShares(expected or 1)
    if expected is not None and len(received) != expected:
        raise MissingShares(expected - len(received))
    return fe_sum([own_share, *received], own_share.modulus)


def gateway_combine(partials: Mapping[str, FieldElement], spec: SessionSpec) -> AggregateResult:
    missing = [pid for pid in spec.party_ids if pid not in partials]
    if missing:
        raise IncompletePartials(missing)
    n = len(spec.participants)
    if spec.protocol_id == "count":
        return AggregateResult(float(n), n)
    total = fe_sum((partials[pid] for pid in spec.party_ids), spec.codec.modulus)
    decoded = decode_fixed(total, spec.codec)  # raises DecodeOverflow
    if spec.protocol_id == "sum":
        return AggregateResult(decoded, n)
    return AggregateResult(total.signed() / (spec.codec.scale * n), n)
