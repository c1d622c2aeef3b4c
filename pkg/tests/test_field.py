import itertools
import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import ScriptedRng
from smcgate.errors import DecodeOverflow, EmptyParticipants, EmptyShares, OutOfRange
from smcgate.field import (
    M61,
    FieldElement,
    FixedPointCodec,
    ShareVector,
    decode_fixed,
    encode_fixed,
    fe_add,
    fe_neg,
    reconstruct_additive,
    share_additive,
)

CODEC = FixedPointCodec()
elements = st.integers(min_value=0, max_value=M61 - 1).map(FieldElement)


def test_modulus_is_mersenne_61():
    assert M61 == 2**61 - 1 == 2305843009213693951


def test_constructor_reduces():
    assert FieldElement(M61).value == 0
    assert FieldElement(-1).value == M61 - 1
    assert FieldElement(35, 31).value == 4


def test_fe_add_examples():
    assert fe_add(FieldElement(M61 - 1), FieldElement(1)) == FieldElement(0)
    x = FieldElement(123456789)
    assert fe_add(FieldElement(0), x) == x
    assert fe_add(FieldElement(20, 31), FieldElement(15, 31)).value == 4


def test_fe_neg_examples():
    assert fe_neg(FieldElement(0)).value == 0
    assert fe_neg(FieldElement(1)).value == M61 - 1
    assert fe_neg(FieldElement(12, 31)).value == 19


def test_mixed_moduli_rejected():
    with pytest.raises(ValueError):
        FieldElement(1, 31) + FieldElement(1, 5)


def test_wire_form_is_decimal():
    fe = FieldElement(M61 - 1)
    assert fe.to_wire() == "2305843009213693950"
    assert FieldElement.from_wire(fe.to_wire()) == fe
    for bad in ("-1", "0x10", str(M61), "", "1.5"):
        with pytest.raises(ValueError):
            FieldElement.from_wire(bad)


@settings(max_examples=1000)
@given(elements, elements, elements)
def test_add_associative_commutative(a, b, c):
    assert fe_add(fe_add(a, b), c) == fe_add(a, fe_add(b, c))
    assert fe_add(a, b) == fe_add(b, a)


@given(elements)
def test_neg_is_two_sided_inverse(a):
    assert fe_add(a, fe_neg(a)) == FieldElement(0)
    assert fe_add(fe_neg(a), a) == FieldElement(0)


# -- fixed point --


def test_encode_examples():
    assert encode_fixed(1.5, CODEC).value == 98304
    assert encode_fixed(-1.0, CODEC).value == M61 - 65536
    assert encode_fixed(0.0, CODEC).value == 0


def test_decode_examples():
    assert decode_fixed(FieldElement(98304), CODEC) == 1.5
    assert decode_fixed(FieldElement(M61 - 65536), CODEC) == -1.0
    assert decode_fixed(FieldElement(1), CODEC) == 2**-16 == 0.0000152587890625


def test_encode_out_of_range():
    with pytest.raises(OutOfRange):
        encode_fixed(2.0**40 + 1, CODEC)
    with pytest.raises(OutOfRange):
        encode_fixed(float("nan"), CODEC)
    encode_fixed(-(2.0**40), CODEC)


def test_decode_overflow_detected():
    codec = FixedPointCodec(fraction_bits=4, half_range=10, max_participants=2)
    assert decode_fixed(FieldElement(320), codec) == 20.0
    with pytest.raises(DecodeOverflow):
        decode_fixed(FieldElement(321), codec)
    with pytest.raises(DecodeOverflow):
        decode_fixed(FieldElement(-321), codec)


def test_codec_invariant_enforced():
    FixedPointCodec(fraction_bits=0, half_range=15, max_participants=1, modulus=31)
    with pytest.raises(ValueError):
        FixedPointCodec(fraction_bits=0, half_range=16, max_participants=1, modulus=31)
    with pytest.raises(ValueError):
        FixedPointCodec(fraction_bits=21)  # 2 * 2^40 * 2^21 > p


def test_fixed_point_round_trip_10k():
    rng = random.Random(7)
    half = float(CODEC.half_range)
    for _ in range(10_000):
        x = rng.uniform(-half, half)
        assert abs(decode_fixed(encode_fixed(x, CODEC), CODEC) - x) <= 2**-16


@given(st.floats(min_value=-(2.0**40), max_value=2.0**40, allow_nan=False))
def test_fixed_point_round_trip_property(x):
    assert abs(decode_fixed(encode_fixed(x, CODEC), CODEC) - x) <= 2**-16


# -- sharing --


def test_single_party_share_is_secret():
    s = FieldElement(42)
    assert share_additive(s, ["A"], random.Random(0)).as_dict() == {"A": s}


def test_scripted_sharing_example():
    shares = share_additive(FieldElement(20, 31), ["A", "B", "C"], ScriptedRng([5, 7]))
    assert [(pid, fe.value) for pid, fe in shares] == [("A", 5), ("B", 7), ("C", 8)]


def test_reconstruct_examples():
    assert reconstruct_additive([("A", FieldElement(9))]) == FieldElement(9)
    vec = ShareVector((("A", FieldElement(5, 31)), ("B", FieldElement(7, 31)), ("C", FieldElement(8, 31))))
    assert reconstruct_additive(vec).value == 20


def test_sharing_errors():
    with pytest.raises(EmptyParticipants):
        share_additive(FieldElement(1), [], random.Random(0))
    with pytest.raises(EmptyShares):
        reconstruct_additive([])
    with pytest.raises(ValueError):
        share_additive(FieldElement(1), ["A", "A"], random.Random(0))
    with pytest.raises(ValueError):
        ShareVector((("A", FieldElement(1)), ("A", FieldElement(2))))


def test_round_trip_10k_random_cases():
    rng = random.Random(11)
    for _ in range(10_000):
        s = FieldElement(rng.randrange(M61))
        parties = [f"P{i}" for i in range(rng.randint(1, 16))]
        assert reconstruct_additive(share_additive(s, parties, rng)) == s


def _first_share_counts(p: int, secret: int) -> Counter:
    # oracle: every possible draw of the single random share for n=2
    counts = Counter()
    for r in range(p):
        vec = share_additive(FieldElement(secret, p), ["A", "B"], ScriptedRng([r]))
        counts[vec.as_dict()["A"].value] += 1
    return counts


def test_first_share_uniform_p5_n2():
    for secret in range(5):
        assert _first_share_counts(5, secret) == Counter({v: 1 for v in range(5)})


@pytest.mark.parametrize("n", [2, 3])
def test_proper_subsets_secret_independent_p5(n):
    p = 5
    parties = [f"P{i}" for i in range(n)]
    subsets = [c for k in range(1, n) for c in itertools.combinations(range(n), k)]
    tables = {}
    for secret in range(p):
        per_subset = {sub: Counter() for sub in subsets}
        for draws in itertools.product(range(p), repeat=n - 1):
            vec = share_additive(FieldElement(secret, p), parties, ScriptedRng(draws))
            values = [fe.value for _, fe in vec]
            assert sum(values) % p == secret
            for sub in subsets:
                per_subset[sub][tuple(values[i] for i in sub)] += 1
        tables[secret] = per_subset
    for secret in range(1, p):
        assert tables[secret] == tables[0]
