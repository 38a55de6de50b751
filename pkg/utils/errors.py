"""
Exception hierarchy for the electromechanics toolkit.

Each exception carries the process exit code the CLI reports for it, so
commands can raise freely and ``app.main`` maps failures in one place.
"""
from typing import Optional


class ToolkitError(Exception):
    """Base class for all toolkit failures."""

    exit_code: int = 1

    def __init__(self, message: str, field: Optional[str] = None) -> None:
        self.field = field
        if field and field not in message:
            message = f"{field}: {message}"
        super().__init__(message)


class UsageError(ToolkitError):
    """Bad command-line input, empty traces or malformed sweep specs."""

    exit_code = 2


class ConvergenceError(ToolkitError):
    """A least-squares fit did not converge."""

    exit_code = 3


class FeatureNotFoundError(ToolkitError):
    """No transparency feature could be located in an EIT trace."""

    exit_code = 3


class InvariantError(ToolkitError, ValueError):
    """A domain record or configuration violates its invariants."""

    exit_code = 4


class DomainError(InvariantError):
    """Argument outside the mathematical or physical domain of an operation."""


class RangeError(InvariantError):
    """Query outside a tabulated range (no extrapolation)."""


class MissingDerivativeError(InvariantError):
    """The vacuum coupling rate needs an externally supplied dC_m/du."""


class InstabilityError(InvariantError):
    """Anti-damped dynamics exceeded the configured occupancy cap."""


class SetupError(InvariantError):
    """A fit problem is ill-posed before any iteration runs."""
