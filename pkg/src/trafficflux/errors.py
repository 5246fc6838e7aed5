"""Exception hierarchy shared by every pipeline stage."""


class TrafficFluxError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 3


class ConfigError(TrafficFluxError, ValueError):
    exit_code = 1


class SegmentLookupError(TrafficFluxError, KeyError):
    exit_code = 1

    def __str__(self):
        # KeyError quotes its argument; keep messages readable
        return str(self.args[0]) if self.args else ""


class RangeError(TrafficFluxError, ValueError):
    exit_code = 1


class ShapeError(TrafficFluxError, ValueError):
    exit_code = 3


class EmptyInputError(TrafficFluxError, ValueError):
    exit_code = 1


class InsufficientDataError(TrafficFluxError, ValueError):
    exit_code = 1


class NumericalError(TrafficFluxError, FloatingPointError):
    """Raised when training produces a non-finite loss."""

    exit_code = 3

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics

    def __str__(self):
        extra = " ".join(f"{k}={v}" for k, v in self.diagnostics.items())
        return f"{self.args[0]} {extra}".strip()


class StaleCacheError(TrafficFluxError, RuntimeError):
    exit_code = 3


class MissingArtifactError(TrafficFluxError, FileNotFoundError):
    exit_code = 2
