"""Exception hierarchy.

Low-level errors (field, wire, protocol) are plain exceptions. Errors that the
gateway reports to consumers derive from :class:`GatewayError` and carry a
stable ``code`` plus a JSON-compatible ``detail`` dict so they can travel in an
Error frame and be rebuilt on the other side.
"""

from __future__ import annotations

from typing import Any


# -- field -------------------------------------------------------------------


class OutOfRange(ValueError):
    """A real value exceeds the fixed-point codec's encodable magnitude."""


class DecodeOverflow(ArithmeticError):
    """A field element decodes to a magnitude no honest sum can reach."""


class EmptyParticipants(ValueError):
    pass


class EmptyShares(ValueError):
    pass


# -- wire / protocol ---------------------------------------------------------


class MalformedFrame(ValueError):
    pass


class UnknownKind(MalformedFrame):
    pass


class MalformedRequest(ValueError):
    pass


class NotParticipant(LookupError):
    pass


class MissingShares(RuntimeError):
    def __init__(self, count: int):
        super().__init__(f"missing {count} share(s)")
        self.count = count


class IncompletePartials(RuntimeError):
    def __init__(self, missing: list[str]):
        super().__init__(f"no partial sum from {missing}")
        self.missing = missing


class IllegalTransition(RuntimeError):
    pass


class UnknownNode(LookupError):
    pass


class ConfigError(ValueError):
    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


# -- consumer-facing ---------------------------------------------------------


class GatewayError(Exception):
    code = "GatewayError"

    def __init__(self, message: str = "", **detail: Any):
        super().__init__(message or self.code)
        self.detail = detail

    def to_payload(self) -> dict[str, Any]:
        return {"error": self.code, "message": str(self), "detail": self.detail}


class AuthFailed(GatewayError):
    code = "AuthFailed"


class AccessDenied(GatewayError):
    code = "AccessDenied"


class Implausible(GatewayError):
    code = "Implausible"

    def __init__(self, reason: str):
        super().__init__(f"implausible request: {reason}", reason=reason)


class InsufficientSources(GatewayError):
    code = "InsufficientSources"

    def __init__(self, found: int, required: int):
        super().__init__(
            f"{found} matching live source(s), {required} required",
            found=found,
            required=required,
        )
        self.found = found
        self.required = required


class Vetoed(GatewayError):
    code = "Vetoed"

    def __init__(self, parties: list[str], reasons: dict[str, str] | None = None):
        super().__init__(
            f"vetoed by {sorted(parties)}",
            parties=sorted(parties),
            reasons=dict(sorted((reasons or {}).items())),
        )
        self.parties = sorted(parties)


class SessionFailed(GatewayError):
    code = "SessionFailed"

    def __init__(self, attempts: int, last_cause: str, phase: str | None = None):
        super().__init__(
            f"session failed after {attempts} restart(s): {last_cause}",
            attempts=attempts,
            last_cause=last_cause,
            phase=phase,
        )
        self.attempts = attempts
        self.last_cause = last_cause


class SetupTimeout(GatewayError):
    code = "SetupTimeout"


ERROR_CODES: dict[str, type[GatewayError]] = {
    cls.code: cls
    for cls in (
        AuthFailed,
        AccessDenied,
        Implausible,
        InsufficientSources,
        Vetoed,
        SessionFailed,
        SetupTimeout,
    )
}
