"""Message delivery: node base class, transcripts and the discrete-event simulator.

The simulator is single-threaded and fully deterministic: events are ordered
by (virtual time, sequence number), latencies come from a seeded RNG, and every
frame handed to :meth:`SimNetwork.send` ends up in the transcript exactly once,
as ``delivered``, ``dropped`` or (if the run stops first) ``in_flight``.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

from .errors import UnknownNode
from .wire import ProtocolMessage, canonical_dumps, canonical_loads, encode_message

log = logging.getLogger(__name__)


class Node:
    """Something addressable on a network. Subclasses override the hooks."""

    def __init__(self, address: str):
        self.address = address
        self.net: Any = None

    def attach(self, net) -> None:
        self.net = net

    @property
    def now(self) -> float:
        return self.net.now

    def start(self) -> None:
        pass

    def restart(self) -> None:
        """Called when a crashed node is revived; volatile state must be reset."""
        self.start()

    def on_frame(self, sender: str, frame: bytes) -> None:
        pass

    def send(self, dst: str, msg: ProtocolMessage) -> None:
        self.net.send(self.address, dst, encode_message(msg))

    def broadcast(self, msg: ProtocolMessage) -> None:
        self.net.broadcast(self.address, encode_message(msg))

    def call_later(self, delay: float, fn: Callable[[], None]):
        return self.net.call_later(self.address, delay, fn)


# -- transcripts -------------------------------------------------------------


@dataclass(frozen=True)
class TranscriptRecord:
    seq: int
    sent_at: float
    time: float
    sender: str
    receiver: str
    disposition: str  # delivered | dropped | in_flight
    frame: bytes

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "sent_at": self.sent_at,
            "time": self.time,
            "sender": self.sender,
            "receiver": self.receiver,
            "disposition": self.disposition,
            "frame": self.frame.decode("latin-1"),
        }

    @classmethod
    def from_dict(cls, d: dict) -> TranscriptRecord:
        return cls(
            seq=int(d["seq"]),
            sent_at=float(d["sent_at"]),
            time=float(d["time"]),
            sender=d["sender"],
            receiver=d["receiver"],
            disposition=d["disposition"],
            frame=d["frame"].encode("latin-1"),
        )

    def message(self) -> dict | None:
        try:
            return canonical_loads(self.frame)
        except ValueError:
            return None


class Transcript:
    def __init__(self, records: Iterable[TranscriptRecord] = ()):
        self.records: list[TranscriptRecord] = list(records)

    def append(self, record: TranscriptRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def to_bytes(self) -> bytes:
        return b"".join(canonical_dumps(r.to_dict()) + b"\n" for r in self.records)

    def sha256(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def write(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> Transcript:
        lines = Path(path).read_bytes().splitlines()
        return cls(TranscriptRecord.from_dict(canonical_loads(line)) for line in lines if line)


# -- fault schedule ----------------------------------------------------------

FAULT_KINDS = ("drop_node", "revive_node", "partition", "heal", "lose_message", "delay")


@dataclass
class Fault:
    """One scripted fault.

    Fires at virtual time ``at``, or right after the first frame matching
    ``after`` has been sent (useful for "crash mid-exchange").
    """

    kind: str
    at: float | None = None
    after: dict | None = None
    node: str | None = None
    groups: list[list[str]] | None = None
    match: dict | None = None
    extra: float = 0.0
    count: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in FAULT_KINDS:
            raise ValueError(f"unknown fault kind {self.kind!r}")
        if (self.at is None) == (self.after is None):
            raise ValueError("a fault needs exactly one of 'at' or 'after'")

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"kind": self.kind}
        for name in ("at", "after", "node", "groups", "match", "count"):
            value = getattr(self, name)
            if value is not None:
                d[name] = value
        if self.kind == "delay":
            d["extra"] = self.extra
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Fault:
        return cls(**d)


def frame_matches(rule: dict, sender: str, receiver: str, frame: bytes) -> bool:
    if "sender" in rule and rule["sender"] != sender:
        return False
    if "receiver" in rule and rule["receiver"] != receiver:
        return False
    if "kind" in rule or "session_id" in rule:
        try:
            obj = canonical_loads(frame)
        except ValueError:
            return False
        if "kind" in rule and obj.get("kind") != rule["kind"]:
            return False
        if "session_id" in rule and obj.get("session_id") != rule["session_id"]:
            return False
    return True


# -- simulator ---------------------------------------------------------------


class Timer:
    __slots__ = ("cancelled",)

    def __init__(self) -> None:
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class SimNetwork:
    def __init__(
        self,
        seed: int = 0,
        latency: float = 0.01,
        jitter: float = 0.0,
        faults: Iterable[Fault] = (),
    ):
        self.rng = random.Random(f"net:{seed}")
        self.latency = latency
        self.jitter = jitter
        self.now = 0.0
        self.nodes: dict[str, Node] = {}
        self.down: set[str] = set()
        self.transcript = Transcript()
        self._incarnation: dict[str, int] = {}
        self._queue: list[tuple[float, int, str, Any]] = []
        self._order = itertools.count()
        self._frames = itertools.count()
        self._link_clock: dict[tuple[str, str], float] = {}
        self._in_flight: dict[int, tuple[float, str, str, bytes]] = {}
        self._group: dict[str, int] | None = None
        self._loss: list[list] = []  # [rule, remaining or None]
        self._delay: list[tuple[dict, float]] = []
        self._triggers: list[Fault] = []
        for fault in faults:
            self.schedule_fault(fault)

    # -- topology --

    def register(self, node: Node) -> None:
        self.nodes[node.address] = node
        self._incarnation.setdefault(node.address, 0)
        node.attach(self)

    def start(self) -> None:
        for node in list(self.nodes.values()):
            node.start()

    def drop_node(self, address: str) -> None:
        self.down.add(address)
        self._incarnation[address] += 1

    def revive_node(self, address: str) -> None:
        if address not in self.down:
            return
        self.down.discard(address)
        self._incarnation[address] += 1
        self.nodes[address].restart()

    def partition(self, groups: list[list[str]]) -> None:
        self._group = {addr: i for i, members in enumerate(groups) for addr in members}

    def heal(self) -> None:
        self._group = None

    def reachable(self, a: str, b: str) -> bool:
        if self._group is None:
            return True
        return self._group.get(a, -1) == self._group.get(b, -1)

    # -- faults --

    def schedule_fault(self, fault: Fault) -> None:
        if fault.at is not None:
            self._push(fault.at, "fault", fault)
        else:
            self._triggers.append(fault)

    def apply_fault(self, fault: Fault) -> None:
        log.debug("t=%.3f fault %s", self.now, fault.to_dict())
        if fault.kind == "drop_node":
            self.drop_node(fault.node)
        elif fault.kind == "revive_node":
            self.revive_node(fault.node)
        elif fault.kind == "partition":
            self.partition(fault.groups)
        elif fault.kind == "heal":
            self.heal()
        elif fault.kind == "lose_message":
            self._loss.append([fault.match or {}, fault.count])
        elif fault.kind == "delay":
            self._delay.append((fault.match or {}, fault.extra))

    # -- messaging --

    def send(self, src: str, dst: str, frame: bytes) -> None:
        if dst not in self.nodes:
            raise UnknownNode(dst)
        seq = next(self._frames)
        if src in self.down or dst in self.down or not self.reachable(src, dst) or self._lost(src, dst, frame):
            self._record(seq, self.now, src, dst, "dropped", frame)
        else:
            delay = self.latency
            if self.jitter:
                delay += self.jitter * self.rng.random()
            for rule, extra in self._delay:
                if frame_matches(rule, src, dst, frame):
                    delay += extra
            at = max(self.now + delay, self._link_clock.get((src, dst), 0.0))
            self._link_clock[(src, dst)] = at
            self._in_flight[seq] = (self.now, src, dst, frame)
            self._push(at, "deliver", seq)
        if self._triggers:
            for fault in [f for f in self._triggers if frame_matches(f.after, src, dst, frame)]:
                self._triggers.remove(fault)
                self.apply_fault(fault)

    def broadcast(self, src: str, frame: bytes) -> None:
        for addr in list(self.nodes):
            if addr != src and addr not in self.down and self.reachable(src, addr):
                self.send(src, addr, frame)

    def _lost(self, src: str, dst: str, frame: bytes) -> bool:
        for entry in self._loss:
            rule, remaining = entry
            if remaining != 0 and frame_matches(rule, src, dst, frame):
                if remaining is not None:
                    entry[1] = remaining - 1
                return True
        return False

    def _record(self, seq: int, sent_at: float, src: str, dst: str, disposition: str, frame: bytes) -> None:
        self.transcript.append(TranscriptRecord(seq, sent_at, self.now, src, dst, disposition, frame))

    # -- timers and the event loop --

    def call_later(self, address: str, delay: float, fn: Callable[[], None]) -> Timer:
        timer = Timer()
        self._push(self.now + delay, "timer", (address, self._incarnation[address], timer, fn))
        return timer

    def _push(self, at: float, kind: str, data: Any) -> None:
        heapq.heappush(self._queue, (at, next(self._order), kind, data))

    def _execute(self, kind: str, data: Any) -> None:
        if kind == "deliver":
            sent_at, src, dst, frame = self._in_flight.pop(data)
            if dst in self.down or not self.reachable(src, dst):
                self._record(data, sent_at, src, dst, "dropped", frame)
            else:
                self._record(data, sent_at, src, dst, "delivered", frame)
                self.nodes[dst].on_frame(src, frame)
        elif kind == "timer":
            address, incarnation, timer, fn = data
            if not timer.cancelled and address not in self.down and self._incarnation[address] == incarnation:
                fn()
        elif kind == "fault":
            self.apply_fault(data)

    def next_event_time(self) -> float | None:
        return self._queue[0][0] if self._queue else None

    def step(self) -> bool:
        if not self._queue:
            return False
        at, _, kind, data = heapq.heappop(self._queue)
        self.now = max(self.now, at)
        self._execute(kind, data)
        return True

    def advance_time(self, until: float) -> int:
        """Execute every event scheduled at or before ``until``; returns the count."""
        if until < self.now:
            raise ValueError(f"cannot go back in time ({until} < {self.now})")
        executed = 0
        while self._queue and self._queue[0][0] <= until:
            self.step()
            executed += 1
        self.now = until
        return executed

    def run_until(self, done: Callable[[], bool], horizon: float) -> bool:
        """Step until ``done()`` holds or the next event lies beyond ``horizon``."""
        while not done():
            t = self.next_event_time()
            if t is None or t > horizon:
                return False
            self.step()
        return True

    def finalize(self) -> Transcript:
        """Record frames still on the wire; call once when the run stops."""
        for seq, (sent_at, src, dst, frame) in sorted(self._in_flight.items()):
            self._record(seq, sent_at, src, dst, "in_flight", frame)
        self._in_flight.clear()
        return self.transcript
