"""Exception hierarchy shared by every gridwatch module."""

from __future__ import annotations


class GridwatchError(Exception):
    """Base class for all errors raised by gridwatch."""

    exit_code = 1


class InputError(GridwatchError):
    """Bad input data (CLI exit code 2)."""

    exit_code = 2


class ConfigError(GridwatchError):
    """Bad configuration (CLI exit code 3)."""

    exit_code = 3


class NumericalError(GridwatchError):
    """A numerical routine failed (CLI exit code 4)."""

    exit_code = 4


class ZeroVarianceRow(NumericalError):
    def __init__(self, row: int):
        super().__init__(f"row {row} has zero variance inside the window; inject noise first")
        self.row = row


class ConvergenceFailure(NumericalError):
    pass


class DegenerateEigenvalue(NumericalError):
    pass


class InvalidRatio(ConfigError):
    pass


class ShapeMismatch(InputError):
    pass


class EmptySpectrum(NumericalError):
    pass


class DegenerateSeries(NumericalError):
    pass


class IndexOutOfRange(InputError):
    pass


class InsufficientHistory(InputError):
    pass


class MalformedRow(InputError):
    def __init__(self, line: int, reason: str = ""):
        msg = f"malformed CSV row at line {line}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)
        self.line = line


class MissingTick(InputError):
    def __init__(self, device: str, timestamp: float):
        super().__init__(f"device {device!r} has no sample at timestamp {timestamp!r}")
        self.device = device
        self.timestamp = timestamp


class NonMonotonicTimestamps(InputError):
    pass


class InvalidSpec(ConfigError):
    pass
