"""Exception hierarchy shared across the package.

The CLI maps these onto its exit-code contract (config -> 2, artifact -> 3,
numeric -> 4), so library code raises the most specific class that applies.
"""


class DeepSTAError(Exception):
    """Base class for all package errors."""


class ConfigError(DeepSTAError, ValueError):
    """Invalid configuration value or combination."""


class DimensionError(DeepSTAError, ValueError):
    """Operand shapes are incompatible."""


class NumericError(DeepSTAError, ArithmeticError):
    """NaN/inf encountered where finite values are required."""


class DataError(DeepSTAError, ValueError):
    """Input data is missing, malformed or out of range."""


class ConnectivityError(DataError):
    """A required path between two graph nodes does not exist."""


class DegenerateInputError(DataError):
    """Input is well-formed but geometrically degenerate (e.g. duplicate points)."""


class WindowError(DataError):
    """Not enough history to build the requested input window."""


class ArtifactError(DeepSTAError, FileNotFoundError):
    """A required on-disk artifact is missing or unreadable."""


class TrainingError(NumericError):
    """Training diverged."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
