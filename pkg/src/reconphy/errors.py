"""Exception hierarchy shared across the simulator."""

from .fixedpoint import DomainError


class ReconPhyError(Exception):
    """Base class for simulator errors."""


class ConfigError(ReconPhyError, ValueError):
    pass


class StateError(ReconPhyError, RuntimeError):
    pass


class FeedbackError(ReconPhyError, ValueError):
    pass


class MeasurementError(ReconPhyError, ValueError):
    pass


class LengthError(ReconPhyError, ValueError):
    pass


class SyncError(ReconPhyError, RuntimeError):
    pass


class EqError(ReconPhyError, RuntimeError):
    pass


class ParseError(ConfigError):
    """Configuration file problem; carries the offending line and field when known."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.line = line
        self.field = field


__all__ = [
    "ConfigError",
    "DomainError",
    "EqError",
    "FeedbackError",
    "LengthError",
    "MeasurementError",
    "ParseError",
    "ReconPhyError",
    "StateError",
    "SyncError",
]
