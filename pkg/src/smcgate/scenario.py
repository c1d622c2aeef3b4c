"""Scenario files and the simulator-backed runner.

A scenario is one canonical JSON object (same encoding as wire frames)
describing sources, consumers, grants, faults and parameters.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .config import Params
from .consumer import ConsumerNode, PlannedRequest
from .errors import ConfigError
from .gateway import AccessControlList, Gateway, Grant
from .request import AGGREGATES, DataRequest
from .source import (
    DataTypeInfo,
    ScriptedReadings,
    SourceMetadata,
    SourceNode,
    SourcePolicy,
    TransparencyLog,
)
from .transport import Fault, SimNetwork, Transcript
from .wire import canonical_dumps, canonical_loads

GATEWAY = "gateway"


@dataclass
class SourceConfig:
    id: str
    data_types: list[list[str]]
    readings: list[list] = field(default_factory=list)
    policy: SourcePolicy = field(default_factory=SourcePolicy)
    scope: str = ""
    protocols: list[str] = field(default_factory=lambda: list(AGGREGATES))
    address: str | None = None

    def metadata(self) -> SourceMetadata:
        return SourceMetadata(
            self.id, tuple(DataTypeInfo(*dt) for dt in self.data_types), tuple(self.protocols), self.scope
        )

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "data_types": [list(dt) for dt in self.data_types],
            "readings": [list(r) for r in self.readings],
            "policy": self.policy.to_dict(),
            "scope": self.scope,
            "protocols": list(self.protocols),
        }
        if self.address is not None:
            d["address"] = self.address
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SourceConfig:
        return cls(
            id=d["id"],
            data_types=[list(dt) for dt in d["data_types"]],
            readings=[list(r) for r in d.get("readings", [])],
            policy=SourcePolicy.from_dict(d.get("policy", {})),
            scope=d.get("scope", ""),
            protocols=list(d.get("protocols", AGGREGATES)),
            address=d.get("address"),
        )


@dataclass
class RequestConfig:
    at: float
    request_id: str
    purpose: str
    aggregate: str
    data_type: str
    scope: str = "*"
    window: tuple[float, float] = (0.0, 3600.0)
    corrupt_tag: bool = False

    def to_request(self, consumer_id: str) -> DataRequest:
        return DataRequest(
            self.request_id, consumer_id, self.purpose, self.aggregate, self.data_type, self.scope, self.window
        )

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["window"] = [float(self.window[0]), float(self.window[1])]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> RequestConfig:
        d = dict(d)
        if "window" in d:
            d["window"] = (float(d["window"][0]), float(d["window"][1]))
        return cls(**d)


@dataclass
class ConsumerConfig:
    id: str
    key: str  # hex
    requests: list[RequestConfig] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"id": self.id, "key": self.key, "requests": [r.to_dict() for r in self.requests]}

    @classmethod
    def from_dict(cls, d: dict) -> ConsumerConfig:
        return cls(d["id"], d["key"], [RequestConfig.from_dict(r) for r in d.get("requests", [])])


@dataclass
class Scenario:
    seed: int = 0
    transport: str = "sim"
    sources: list[SourceConfig] = field(default_factory=list)
    consumers: list[ConsumerConfig] = field(default_factory=list)
    acl: list[Grant] = field(default_factory=list)
    faults: list[Fault] = field(default_factory=list)
    params: Params = field(default_factory=Params)
    name: str = ""

    def validate(self) -> None:
        if not self.sources:
            raise ValueError("a scenario needs at least one source")
        if self.transport not in ("sim", "socket"):
            raise ValueError(f"transport must be sim or socket, got {self.transport!r}")
        source_ids = [s.id for s in self.sources]
        consumer_ids = [c.id for c in self.consumers]
        if len(set(source_ids)) != len(source_ids) or len(set(consumer_ids)) != len(consumer_ids):
            raise ValueError("duplicate source or consumer id")
        addresses = {s.address or s.id for s in self.sources} | set(consumer_ids) | {GATEWAY}
        if len(addresses) != len(self.sources) + len(self.consumers) + 1:
            raise ValueError("node addresses collide")
        for g in self.acl:
            if g.consumer_id not in consumer_ids:
                raise ValueError(f"grant for unknown consumer {g.consumer_id!r}")
        request_ids = [r.request_id for c in self.consumers for r in c.requests]
        if len(set(request_ids)) != len(request_ids):
            raise ValueError("duplicate request ids")
        for f in self.faults:
            if f.node is not None and f.node not in addresses:
                raise ValueError(f"fault references unknown node {f.node!r}")
            for group in f.groups or []:
                for member in group:
                    if member not in addresses:
                        raise ValueError(f"partition references unknown node {member!r}")
        for s in self.sources:
            s.metadata()

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "transport": self.transport,
            "sources": [s.to_dict() for s in self.sources],
            "consumers": [c.to_dict() for c in self.consumers],
            "acl": [dict(g.__dict__) for g in self.acl],
            "faults": [f.to_dict() for f in self.faults],
            "params": self.params.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> Scenario:
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown scenario keys {sorted(unknown)}")
        sc = cls(
            seed=int(d.get("seed", 0)),
            transport=d.get("transport", "sim"),
            sources=[SourceConfig.from_dict(s) for s in d.get("sources", [])],
            consumers=[ConsumerConfig.from_dict(c) for c in d.get("consumers", [])],
            acl=[Grant(**g) for g in d.get("acl", [])],
            faults=[Fault.from_dict(f) for f in d.get("faults", [])],
            params=Params.from_dict(d.get("params", {})),
            name=d.get("name", ""),
        )
        sc.validate()
        return sc

    def to_bytes(self) -> bytes:
        return canonical_dumps(self.to_dict()) + b"\n"

    def dump(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> Scenario:
        try:
            data = canonical_loads(Path(path).read_bytes())
            return cls.from_dict(data)
        except OSError as exc:
            raise ConfigError(str(path), f"cannot read: {exc.strerror}") from None
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(str(path), f"invalid scenario: {exc!r}") from None

    def readings(self) -> dict[str, list[float]]:
        return {s.id: [float(r[2]) for r in s.readings] for s in self.sources}


# -- running -----------------------------------------------------------------


@dataclass
class RunResult:
    results: list[dict]
    transcript: Transcript
    logs: dict[str, TransparencyLog]
    gateway: Gateway
    sources: dict[str, SourceNode]
    consumers: dict[str, ConsumerNode]
    end_time: float

    def result(self, request_id: str) -> dict:
        for r in self.results:
            if r["request_id"] == request_id:
                return r
        raise KeyError(request_id)


def node_rng(seed: int, address: str) -> random.Random:
    return random.Random(f"{seed}:{address}")


def build_nodes(scenario: Scenario, log_dir: str | Path | None = None):
    params = scenario.params
    keys = {c.id: bytes.fromhex(c.key) for c in scenario.consumers}
    gateway = Gateway(keys, AccessControlList(scenario.acl), params, address=GATEWAY)
    sources = {}
    for sc in scenario.sources:
        path = Path(log_dir) / f"{sc.id}.jsonl" if log_dir is not None else None
        if path is not None and path.exists():
            path.unlink()
        address = sc.address or sc.id
        sources[sc.id] = SourceNode(
            sc.metadata(),
            sc.policy,
            ScriptedReadings(sc.readings),
            TransparencyLog(path),
            address=address,
            rng=node_rng(scenario.seed, address),
            params=params,
        )
    consumers = {
        c.id: ConsumerNode(
            c.id,
            bytes.fromhex(c.key),
            [PlannedRequest(r.at, r.to_request(c.id), r.corrupt_tag) for r in c.requests],
            gateway=GATEWAY,
        )
        for c in scenario.consumers
    }
    return gateway, sources, consumers


def collect_results(gateway: Gateway, consumers: dict[str, ConsumerNode]) -> list[dict]:
    out = []
    for cid, consumer in consumers.items():
        for rid, resp in consumer.responses.items():
            summary = gateway.outcomes.get(rid, {})
            row: dict[str, Any] = {
                "request_id": rid,
                "consumer_id": cid,
                "issued_at": resp.issued_at,
                "answered_at": resp.answered_at,
                "restarts": summary.get("restarts"),
            }
            if resp.kind == "Result":
                row.update(outcome="ok", value=resp.payload["value"], contributors=resp.payload["contributors"])
            elif resp.kind == "Error":
                row.update(outcome="error", error=resp.payload["error"], detail=resp.payload["detail"])
            else:
                row.update(outcome="no_response")
            out.append(row)
    return out


def run_sim(scenario: Scenario, log_dir: str | Path | None = None) -> RunResult:
    params = scenario.params
    net = SimNetwork(scenario.seed, params.latency, params.jitter, scenario.faults)
    gateway, sources, consumers = build_nodes(scenario, log_dir)
    net.register(gateway)
    for node in sources.values():
        net.register(node)
    for node in consumers.values():
        net.register(node)
    net.start()
    net.run_until(lambda: all(c.all_answered() for c in consumers.values()), params.horizon)
    net.advance_time(min(net.now + params.settle, max(net.now, params.horizon)))
    transcript = net.finalize()
    return RunResult(
        collect_results(gateway, consumers),
        transcript,
        {sid: node.tlog for sid, node in sources.items()},
        gateway,
        sources,
        consumers,
        net.now,
    )
