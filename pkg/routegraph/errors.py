"""
Exception hierarchy for routegraph.

Every error the system can raise derives from RouteGraphError. Each class
carries the CLI exit code and the HTTP status it maps to, so the command
line and the HTTP servers translate failures the same way.
"""

from typing import Any, ClassVar


class RouteGraphError(Exception):
    """Base class for all routegraph errors."""

    exit_code: ClassVar[int] = 1
    http_status: ClassVar[int] = 500

    def __init__(self, message: str = "", **context: Any) -> None:
        super().__init__(message or self.__class__.__name__)
        self.context = context

    def to_dict(self) -> dict[str, Any]:
        """Render the error the way the HTTP surfaces report it."""
        body: dict[str, Any] = {"error": self.__class__.__name__, "detail": str(self)}
        if self.context:
            body["context"] = self.context
        return body


# Input / capture errors


class InputError(RouteGraphError):
    exit_code = 2
    http_status = 400


class MalformedArchive(InputError):
    """Capture is not JSON or has no log.entries."""


class EmptyArchive(InputError):
    """Capture parsed but holds zero entries."""


class NotStructured(InputError):
    """A body that was expected to be JSON is not."""


class NoApiEntries(InputError):
    """Distillation was handed no API traffic."""


class DomainMismatch(InputError):
    """Two skill packages for different domains were merged."""


class NegativeAge(InputError):
    """Freshness was asked for a negative age."""


# Registry errors


class ValidationFailed(RouteGraphError):
    """A skill package failed hard pre-publish checks."""

    exit_code = 3
    http_status = 422

    def __init__(self, failures: list[str]) -> None:
        super().__init__("; ".join(failures) or "validation failed", failures=failures)
        self.failures = failures


class NotFoundError(RouteGraphError):
    exit_code = 7
    http_status = 404


class EmptyIndex(NotFoundError):
    """Search over a registry with no searchable records."""


class SkillNotFound(NotFoundError):
    """No record with the requested id."""


# Economics errors


class EconomicsError(RouteGraphError):
    exit_code = 6
    http_status = 400


class NoAttributions(EconomicsError):
    """Contributor share cannot be distributed without a positive score."""


class Unamortizable(EconomicsError):
    """Cached cost is not below the baseline, so discovery never pays off."""


# Payment errors


class PaymentError(RouteGraphError):
    exit_code = 4
    http_status = 402


class UnknownWallet(PaymentError):
    """The wallet holds no secret for the payer id."""


class BadSignature(PaymentError):
    """Proof does not verify against the issued terms."""


class Expired(PaymentError):
    """Proof presented after the terms expired."""


class Replay(PaymentError):
    """Nonce already consumed."""


class AmountMismatch(PaymentError):
    """Terms amount differs from the fee the resource requires."""


class PaymentRefused(PaymentError):
    """The server rejected a payment the client offered."""


# Resolution / execution errors


class ResolutionError(RouteGraphError):
    exit_code = 5
    http_status = 502


class Unresolvable(ResolutionError):
    """All three resolution paths failed."""


class AuthMissing(ResolutionError):
    """Endpoint needs a credential the local vault does not hold."""

    http_status = 401


class EndpointFailed(ResolutionError):
    """Target endpoint answered with an error or not at all."""


class SchemaMismatch(ResolutionError):
    """Live response diverged from the documented schema.

    The raw data and the drift report travel with the error.
    """

    def __init__(self, message: str, data: Any = None, drift: Any = None) -> None:
        super().__init__(message)
        self.data = data
        self.drift = drift


class DiscoveryEmpty(ResolutionError):
    """Browser capture produced no API endpoints."""


# Simulated web errors


class SimError(RouteGraphError):
    exit_code = 5


class NotFound(SimError):
    """Path does not exist on the simulated site."""

    http_status = 404


class BotBlocked(SimError):
    """Protected site rejected a request without the browser marker."""

    http_status = 403


def _subclasses(cls: type[RouteGraphError]) -> list[type[RouteGraphError]]:
    found = [cls]
    for sub in cls.__subclasses__():
        found.extend(_subclasses(sub))
    return found


def error_from_payload(
    payload: dict[str, Any], default: type[RouteGraphError] = RouteGraphError
) -> RouteGraphError:
    """Rebuild the exception a server rendered with ``to_dict``."""
    by_name = {cls.__name__: cls for cls in _subclasses(RouteGraphError)}
    cls = by_name.get(str(payload.get("error", "")), default)
    detail = str(payload.get("detail", ""))
    if cls is ValidationFailed:
        failures = (payload.get("context") or {}).get("failures") or [detail]
        return ValidationFailed(list(failures))
    if cls is SchemaMismatch:
        return SchemaMismatch(detail)
    return cls(detail)
