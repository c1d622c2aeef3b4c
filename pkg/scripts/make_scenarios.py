"""Regenerate the bundled scenario fixtures in scenarios/.

    python scripts/make_scenarios.py
"""

from __future__ import annotations

from pathlib import Path

from smcgate.config import Params
from smcgate.gateway import Grant
from smcgate.scenario import ConsumerConfig, RequestConfig, Scenario, SourceConfig
from smcgate.source import PolicyRule, SourcePolicy
from smcgate.transport import Fault

OUT = Path(__file__).resolve().parent.parent / "scenarios"

DISPLAY_KEY = "7e1f0c3a9b2d4e5f60718293a4b5c6d7e8f90112233445566778899aabbccdd0"
HOUR = (0.0, 3600.0)
OCCUPANCY = [["occupancy", "persons", "people counted in the room"]]
STATS_POLICY = SourcePolicy((PolicyRule("display-*", "statistics", "occupancy", "allow"),), "deny")


def source(sid: str, reading: float, scope: str = "3.A", policy: SourcePolicy = STATS_POLICY) -> SourceConfig:
    return SourceConfig(sid, OCCUPANCY, [["occupancy", 1800.0, reading]], policy, scope)


def average_request(rid: str = "r1", at: float = 2.0) -> RequestConfig:
    # the average number of people on floor 3.A over one hour
    return RequestConfig(at, rid, "statistics", "average", "occupancy", "3.A", HOUR)


def display(requests: list[RequestConfig]) -> ConsumerConfig:
    return ConsumerConfig("display-1", DISPLAY_KEY, requests)


GRANTS = [Grant("display-1", "occupancy", agg, "statistics") for agg in ("average", "count", "sum")]


def smoke() -> Scenario:
    return Scenario(
        name="smoke",
        seed=1,
        sources=[source("S1", 1.0), source("S2", 2.0), source("S3", 4.5)],
        consumers=[display([average_request()])],
        acl=GRANTS,
    )


def veto() -> Scenario:
    refuses = SourcePolicy((PolicyRule("*", "*", "*", "deny"),), "deny")
    return Scenario(
        name="veto",
        seed=2,
        sources=[source("S1", 1.0), source("S2", 2.0), source("S3", 4.5), source("S4", 3.0, policy=refuses)],
        consumers=[display([average_request()])],
        acl=GRANTS,
    )


def churn() -> Scenario:
    return Scenario(
        name="churn",
        seed=3,
        sources=[source("S1", 1.0), source("S2", 2.0), source("S3", 4.5), source("S4", 3.0)],
        consumers=[display([average_request()])],
        acl=GRANTS,
        # S4 crashes right after handing out its first share
        faults=[Fault("drop_node", after={"kind": "ShareTransfer", "sender": "S4"}, node="S4")],
        params=Params(),
    )


def main() -> None:
    OUT.mkdir(exist_ok=True)
    for build in (smoke, veto, churn):
        sc = build()
        sc.dump(OUT / f"{sc.name}.json")
        print(f"wrote {OUT / (sc.name + '.json')}")


if __name__ == "__main__":
    main()
