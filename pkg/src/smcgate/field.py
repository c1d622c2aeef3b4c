"""Prime-field arithmetic, fixed-point encoding and additive secret sharing.

All secret-shared arithmetic happens in GF(p). The production modulus is the
Mersenne prime 2^61 - 1; tests pass small primes (31, 5) so that the sharing
distributions can be enumerated exhaustively.

Randomness is injected: anything with a ``randrange(n)`` method works, so a
``random.Random(seed)`` gives reproducible transcripts and
``secrets.SystemRandom()`` gives production-grade shares.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Iterable, Protocol, Sequence

from .errors import DecodeOverflow, EmptyParticipants, EmptyShares, OutOfRange

M61 = (1 << 61) - 1


class RandomSource(Protocol):
    def randrange(self, stop: int) -> int: ...


@dataclass(frozen=True, slots=True)
class FieldElement:
    value: int
    modulus: int = M61

    def __post_init__(self) -> None:
        object.__setattr__(self, "value", self.value % self.modulus)

    def _check(self, other: FieldElement) -> None:
        if other.modulus != self.modulus:
            raise ValueError(f"modulus mismatch: {self.modulus} vs {other.modulus}")

    def __add__(self, other: FieldElement) -> FieldElement:
        self._check(other)
        return FieldElement(self.value + other.value, self.modulus)

    def __sub__(self, other: FieldElement) -> FieldElement:
        self._check(other)
        return FieldElement(self.value - other.value, self.modulus)

    def __neg__(self) -> FieldElement:
        return FieldElement(-self.value, self.modulus)

    def __int__(self) -> int:
        return self.value

    def signed(self) -> int:
        """Balanced residue: values above p/2 map to negatives."""
        return self.value if self.value <= self.modulus // 2 else self.value - self.modulus

    def to_wire(self) -> str:
        return str(self.value)

    @classmethod
    def from_wire(cls, text: str, modulus: int = M61) -> FieldElement:
        if not isinstance(text, str) or not text.isdigit():
            raise ValueError(f"not a decimal field element: {text!r}")
        value = int(text)
        if value >= modulus:
            raise ValueError(f"{value} is not reduced modulo {modulus}")
        return cls(value, modulus)


def fe_add(a: FieldElement, b: FieldElement) -> FieldElement:
    return a + b


def fe_neg(a: FieldElement) -> FieldElement:
    return -a


def fe_sum(items: Iterable[FieldElement], modulus: int = M61) -> FieldElement:
    total = 0
    for item in items:
        if item.modulus != modulus:
            raise ValueError(f"modulus mismatch: {item.modulus} vs {modulus}")
        total += item.value
    return FieldElement(total, modulus)


@dataclass(frozen=True)
class FixedPointCodec:
    """Maps reals in [-half_range, half_range] to field elements.

    ``max_participants`` bounds how many encoded values may be summed before
    decoding; a decoded magnitude beyond ``half_range * 2**fraction_bits *
    max_participants`` is reported as overflow.
    """

    fraction_bits: int = 16
    half_range: int = 1 << 40
    max_participants: int = 16
    modulus: int = M61

    def __post_init__(self) -> None:
        if self.fraction_bits < 0 or self.half_range <= 0 or self.max_participants < 1:
            raise ValueError("codec parameters must be positive")
        if 2 * self.half_range * (1 << self.fraction_bits) >= self.modulus:
            raise ValueError(
                "2 * half_range * 2**fraction_bits must stay below the modulus"
            )

    @property
    def scale(self) -> int:
        return 1 << self.fraction_bits

    def to_dict(self) -> dict:
        return {
            "fraction_bits": self.fraction_bits,
            "half_range": self.half_range,
            "max_participants": self.max_participants,
            "modulus": str(self.modulus),
        }

    @classmethod
    def from_dict(cls, data: dict) -> FixedPointCodec:
        return cls(
            fraction_bits=int(data["fraction_bits"]),
            half_range=int(data["half_range"]),
            max_participants=int(data["max_participants"]),
            modulus=int(data["modulus"]),
        )


def encode_fixed(x: float, codec: FixedPointCodec) -> FieldElement:
    if not abs(x) <= codec.half_range:
        raise OutOfRange(f"|{x}| exceeds {codec.half_range}")
    return FieldElement(round(x * codec.scale), codec.modulus)


def decode_fixed(a: FieldElement, codec: FixedPointCodec) -> float:
    if a.modulus != codec.modulus:
        raise ValueError(f"modulus mismatch: {a.modulus} vs {codec.modulus}")
    signed = a.signed()
    if abs(signed) > codec.half_range * codec.scale * codec.max_participants:
        raise DecodeOverflow(f"decoded magnitude {abs(signed)} out of range")
    return signed / codec.scale


@dataclass(frozen=True)
class ShareVector:
    shares: tuple[tuple[Hashable, FieldElement], ...]

    def __post_init__(self) -> None:
        ids = [pid for pid, _ in self.shares]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate party ids in {ids}")

    def as_dict(self) -> dict:
        return dict(self.shares)

    def __len__(self) -> int:
        return len(self.shares)

    def __iter__(self):
        return iter(self.shares)


def share_additive(
    secret: FieldElement, party_ids: Sequence[Hashable], rng: RandomSource
) -> ShareVector:
    """Split ``secret`` into ``len(party_ids)`` uniformly random summands.

    The first n-1 shares are drawn from ``rng`` in party order; the last one
    closes the sum.
    """
    if not party_ids:
        raise EmptyParticipants("cannot share among zero parties")
    if len(set(party_ids)) != len(party_ids):
        raise ValueError(f"duplicate party ids in {list(party_ids)}")
    p = secret.modulus
    drawn = [FieldElement(rng.randrange(p), p) for _ in party_ids[:-1]]
    last = secret - fe_sum(drawn, p)
    return ShareVector(tuple(zip(party_ids, drawn + [last])))


def reconstruct_additive(shares: ShareVector | Iterable[tuple[Hashable, FieldElement]]) -> FieldElement:
    items = list(shares)
    if not items:
        raise EmptyShares("nothing to reconstruct")
    return fe_sum((fe for _, fe in items), items[0][1].modulus)
