"""Exhaustive secrecy check over GF(5) with three parties.

For every one of the 125 input vectors, enumerate all 5^6 sharing draws and
collect the multiset of partial-sum triples the gateway would see. Vectors
with the same sum (mod 5) must produce identical multisets.

    python scripts/secrecy_enumeration.py
"""

from __future__ import annotations

import itertools
import sys
import time
from collections import Counter

from smcgate.field import FieldElement, FixedPointCodec
from smcgate.protocol import SessionSpec, source_accumulate, source_prepare_shares

P = 5
PARTIES = ("A", "B", "C")
SPEC = SessionSpec(
    "s", tuple((p, p) for p in PARTIES), "x", (0.0, 1.0), "sum",
    FixedPointCodec(fraction_bits=0, half_range=2, max_participants=3, modulus=P), b"{}",
)


class Replay:
    def __init__(self, draws):
        self.draws = iter(draws)

    def randrange(self, stop):
        return next(self.draws)


def views(inputs) -> Counter:
    out = Counter()
    for draws in itertools.product(range(P), repeat=len(PARTIES) * (len(PARTIES) - 1)):
        rng = Replay(draws)
        held = {p: [] for p in PARTIES}
        for p, x in zip(PARTIES, inputs):
            for q, share in source_prepare_shares(FieldElement(x, P), SPEC, rng, p).items():
                held[q].append(share)
        out[tuple(source_accumulate(held[p][0], held[p][1:]).value for p in PARTIES)] += 1
    return out


def main() -> int:
    start = time.perf_counter()
    by_sum: dict[int, Counter] = {}
    mismatches = 0
    for inputs in itertools.product(range(P), repeat=len(PARTIES)):
        total = sum(inputs) % P
        v = views(inputs)
        if total not in by_sum:
            by_sum[total] = v
        elif v != by_sum[total]:
            mismatches += 1
            print(f"mismatch: {inputs} differs from the first vector with sum {total}")
    for total, v in sorted(by_sum.items()):
        print(f"sum {total}: {len(v)} distinct views, each seen {sorted(set(v.values()))} times")
    print(f"{P ** len(PARTIES)} input vectors, {mismatches} mismatches, {time.perf_counter() - start:.1f}s")
    return 1 if mismatches else 0


if __name__ == "__main__":
    sys.exit(main())
