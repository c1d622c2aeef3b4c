from __future__ import annotations

from smcgate.transport import Timer


class ScriptedRng:
    """randrange() that replays a fixed list of draws."""

    def __init__(self, draws):
        self.draws = list(draws)

    def randrange(self, stop: int) -> int:
        value = self.draws.pop(0)
        assert 0 <= value < stop
        return value


class RecordingNet:
    """Minimal network stand-in: records sends, fires timers only on demand."""

    def __init__(self):
        self.now = 0.0
        self.sent: list[tuple[str, str, bytes]] = []
        self.timers: list[tuple[float, Timer, object]] = []

    def send(self, src, dst, frame):
        self.sent.append((src, dst, frame))

    def broadcast(self, src, frame):
        self.sent.append((src, "*", frame))

    def call_later(self, address, delay, fn):
        timer = Timer()
        self.timers.append((self.now + delay, timer, fn))
        return timer

    def fire_due(self, now: float) -> None:
        self.now = now
        due = [t for t in self.timers if t[0] <= now]
        self.timers = [t for t in self.timers if t[0] > now]
        for _, timer, fn in sorted(due, key=lambda t: t[0]):
            if not timer.cancelled:
                fn()


# -- small simulated worlds --

from smcgate.config import Params  # noqa: E402
from smcgate.gateway import Grant  # noqa: E402
from smcgate.scenario import ConsumerConfig, RequestConfig, Scenario, SourceConfig  # noqa: E402
from smcgate.source import PolicyRule, SourcePolicy  # noqa: E402

KEY_HEX = "aa" * 32
ALLOW = SourcePolicy((PolicyRule("display-*", "statistics", "occupancy", "allow"),), "deny")


def world(
    readings,
    aggregate="average",
    policies=None,
    faults=(),
    params=None,
    at=2.0,
    seed=0,
    scopes=None,
    extra_requests=(),
) -> Scenario:
    sources = [
        SourceConfig(
            f"S{i + 1}",
            [["occupancy", "persons", ""]],
            [] if r is None else [["occupancy", 10.0, r]],
            (policies or {}).get(f"S{i + 1}", ALLOW),
            scope=(scopes or {}).get(f"S{i + 1}", "3.A"),
        )
        for i, r in enumerate(readings)
    ]
    requests = [RequestConfig(at, "r1", "statistics", aggregate, "occupancy", "3.A", (0.0, 3600.0))]
    requests += list(extra_requests)
    return Scenario(
        seed=seed,
        sources=sources,
        consumers=[ConsumerConfig("display-1", KEY_HEX, requests)],
        acl=[Grant("display-1", "occupancy", a, "statistics") for a in ("sum", "count", "average")],
        faults=list(faults),
        params=params or Params(),
    )


def frames(transcript, **match):
    """Decoded (record, message) pairs whose record fields and message kind match."""
    out = []
    for rec in transcript:
        msg = rec.message()
        if msg is None:
            continue
        if "kind" in match and msg["kind"] != match["kind"]:
            continue
        if any(getattr(rec, k) != v for k, v in match.items() if k != "kind"):
            continue
        out.append((rec, msg))
    return out


# one line per acceptance criterion, printed in the pytest terminal summary
ACCEPTANCE: list[str] = []
