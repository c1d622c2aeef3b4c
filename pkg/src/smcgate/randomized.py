"""Random scenario generation for property sweeps.

Readings are drawn on the 2^-16 grid so their fixed-point encoding is exact
and a plaintext oracle over the same floats is exact for sums.
"""

from __future__ import annotations

import random

from .config import Params
from .gateway import Grant
from .request import AGGREGATES
from .scenario import ConsumerConfig, RequestConfig, Scenario, SourceConfig
from .source import PolicyRule, SourcePolicy

KEY = "00112233445566778899aabbccddeeff00112233445566778899aabbccddeeff"
GRID = 1 << 16


def random_reading(rng: random.Random, bound: int = 1000) -> float:
    while True:
        k = rng.randint(-bound * GRID, bound * GRID)
        if k != 0:
            return k / GRID


def random_scenario(seed: int, n: int | None = None, aggregates=AGGREGATES, params: Params | None = None) -> Scenario:
    rng = random.Random(f"scenario:{seed}")
    n = n if n is not None else rng.randint(3, 16)
    allow = SourcePolicy((PolicyRule("probe", "*", "occupancy", "allow"),), "deny")
    sources = [
        SourceConfig(
            f"S{i:02d}",
            [["occupancy", "persons", ""]],
            [["occupancy", 100.0, random_reading(rng)]],
            allow,
            scope="3.A",
        )
        for i in range(n)
    ]
    requests = [
        RequestConfig(2.0 + 0.5 * i, f"q{i}-{agg}", "statistics", agg, "occupancy", "3.A", (0.0, 3600.0))
        for i, agg in enumerate(aggregates)
    ]
    return Scenario(
        name=f"random-{seed}",
        seed=seed,
        sources=sources,
        consumers=[ConsumerConfig("probe", KEY, requests)],
        acl=[Grant("probe", "occupancy", agg, "statistics") for agg in AGGREGATES],
        params=params or Params(),
    )


def plaintext_oracle(scenario: Scenario, aggregate: str) -> float:
    values = [float(s.readings[0][2]) for s in scenario.sources]
    if aggregate == "sum":
        return sum(values)
    if aggregate == "count":
        return float(len(values))
    return sum(values) / len(values)
