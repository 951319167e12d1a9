"""Errors for cardiolts."""
from __future__ import annotations

try:
    from enum import StrEnum
except ImportError:
    from strenum import StrEnum


class CardioError(Exception):
    """Base exception for all solver errors"""


class InvalidArgumentError(CardioError, ValueError):
    """Exception raised when an operation precondition is violated"""


class GeometryError(CardioError):
    """Degenerate element geometry"""

    def __init__(self, element_id: int, measure: float):
        super().__init__()
        self.element_id = element_id
        self.measure = measure

    def __str__(self) -> str:
        return f"Degenerate element {self.element_id}: measure {self.measure!r}"


class StaleTopologyError(CardioError):
    """Raised when a mesh-bound object is used after the topology changed"""

    def __init__(self, expected: int, found: int, detail: str | None = None):
        super().__init__()
        self.expected = expected
        self.found = found
        self.detail = detail

    def __str__(self) -> str:
        message = f"Stale topology: expected generation {self.expected}, found {self.found}"
        if self.detail:
            return f"{message} ({self.detail})"
        return message


class LayoutError(CardioError):
    """Field data does not match the element layout it is used with"""


class CellModelError(CardioError):
    """Invalid cell model evaluation (e.g. non-positive gate time constant)"""


class NumericalDomainError(CardioError):
    """Non-finite input handed to a pointwise model evaluation"""


class ExtrapolationError(CardioError):
    """Time interpolation requested outside the stored span"""

    def __init__(self, t_query: float, t_prev: float, t_curr: float):
        super().__init__()
        self.t_query = t_query
        self.t_prev = t_prev
        self.t_curr = t_curr

    def __str__(self) -> str:
        return (
            f"Cannot interpolate at t={self.t_query!r} ms outside "
            f"[{self.t_prev!r}, {self.t_curr!r}] ms"
        )


class SchedulingError(CardioError):
    """Internal substep scheduling inconsistency"""


class DivergenceError(CardioError):
    """The explicit march produced a non-finite state"""

    def __init__(self, time: float):
        super().__init__()
        self.time = time

    def __str__(self) -> str:
        return f"Non-finite state detected at t={self.time:.6g} ms"


class InsufficientDataError(CardioError):
    """Not enough snapshots for a time-series evaluation"""


class PropagationError(CardioError):
    """A benchmark wave failed to propagate or to form"""

    def __init__(self, message: str, diagnostics: dict[str, object] | None = None):
        super().__init__()
        self.message = message
        self.diagnostics = diagnostics or {}

    def __str__(self) -> str:
        if not self.diagnostics:
            return self.message
        details = ", ".join(f"{key}={value!r}" for key, value in self.diagnostics.items())
        return f"{self.message} [{details}]"


class OutputError(CardioError):
    """A run artifact could not be written"""

    def __init__(self, path: object, reason: str):
        super().__init__()
        self.path = path
        self.reason = reason

    def __str__(self) -> str:
        return f"Cannot write {self.path}: {self.reason}"


class ConfigErrorCode(StrEnum):
    """Configuration error codes"""

    PARSE_ERROR = "parse_error"
    UNKNOWN_KEY = "unknown_key"
    INVALID_VALUE = "invalid_value"
    MISSING_KEY = "missing_key"


class ConfigError(CardioError):
    """Run configuration could not be parsed or validated"""

    def __init__(
        self,
        code: ConfigErrorCode,
        key: str | None,
        message: str,
        line: int | None = None,
    ):
        super().__init__()
        self.code = code
        self.key = key
        self.message = message
        self.line = line

    def __str__(self) -> str:
        where = f"line {self.line}: " if self.line is not None else ""
        key = f"'{self.key}': " if self.key else ""
        return f"Config error ({self.code}) {where}{key}{self.message}"
