from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from .field import M61


@dataclass(frozen=True)
class Params:
    """Deployment parameters shared by the gateway, sources and the runner.

    Times are in seconds (virtual seconds under the simulator).
    """

    min_participants: int = 3
    max_restarts: int = 2
    heartbeat_interval: float = 1.0
    liveness_intervals: int = 3
    setup_timeout: float = 2.0
    decision_timeout: float = 2.0
    peer_timeout: float = 2.0
    exchange_timeout: float = 4.0
    modulus: int = M61
    fraction_bits: int = 16
    half_range: int = 1 << 40
    max_participants: int = 16
    latency: float = 0.01
    jitter: float = 0.0
    settle: float = 1.0
    horizon: float = 600.0

    @property
    def liveness_timeout(self) -> float:
        return self.heartbeat_interval * self.liveness_intervals

    def to_dict(self) -> dict:
        d = asdict(self)
        d["modulus"] = str(self.modulus)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Params:
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown parameter(s) {sorted(unknown)}")
        kwargs = dict(d)
        if "modulus" in kwargs:
            kwargs["modulus"] = int(kwargs["modulus"])
        return cls(**kwargs)
