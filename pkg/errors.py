"""Exception types shared by every EscapeLab component.

Each exception carries the process exit code the CLI uses when it escapes a
command: 2 for bad input, 3 for numerical failures and 4 for statistically
inconclusive results.
"""
from typing import Any, Dict, Optional


class EscapeLabError(Exception):
    """Base class for all EscapeLab errors."""
    exit_code: int = 3

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None) -> None:
        super().__init__(message)
        self.details: Dict[str, Any] = details or {}


class ConfigError(EscapeLabError):
    """Malformed run configuration or system document."""
    exit_code = 2


class DomainError(EscapeLabError):
    """Map, hole or potential data outside the supported class."""
    exit_code = 2


class GridError(EscapeLabError):
    exit_code = 3


class OrbitError(EscapeLabError):
    """An orbit index outside the sampled window was requested."""
    exit_code = 3


class NumericsError(EscapeLabError):
    exit_code = 3


class DegenerateSystemError(EscapeLabError):
    """The support of the iterated transfer operator vanished."""
    exit_code = 3


class UndefinedMetric(EscapeLabError):
    exit_code = 3


class NotAnalyticError(EscapeLabError):
    """Closed-form pressure requested for a system without full affine branches."""
    exit_code = 3


class DepthError(EscapeLabError):
    """An exact enumeration exceeded its size cap."""
    exit_code = 3


class InsufficientDataError(EscapeLabError):
    exit_code = 3


class InconclusiveError(EscapeLabError):
    """A Monte Carlo sign decision did not resolve at the sample cap."""
    exit_code = 4
