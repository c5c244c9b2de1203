"""Exception types shared across the package.

Each class carries the process exit code the CLI maps it to:
1 usage/config, 2 data/format, 3 numerical failure.
"""


class C2CLabError(Exception):
    exit_code = 3


class InvalidInput(C2CLabError):
    """Caller passed data that violates an operation's preconditions."""

    exit_code = 2


class InvalidConfig(C2CLabError):
    """Bad hyperparameter, flag combination, or unknown mode."""

    exit_code = 1


class ShapeError(C2CLabError):
    """Tensor operands with incompatible shapes."""

    exit_code = 2


class NumericalError(C2CLabError):
    """NaN/degenerate values where finite ones are required."""

    exit_code = 3


class InvalidState(C2CLabError):
    """An operation was invoked with required pieces missing."""

    exit_code = 3


class ConstructionFailed(C2CLabError):
    """Benchmark split construction could not satisfy its constraints."""

    exit_code = 2

    def __init__(self, message, stage=None):
        super().__init__(message if stage is None else f"{stage}: {message}")
        self.stage = stage


class FormatError(C2CLabError):
    """Malformed binary or text artifact."""

    exit_code = 2

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (at byte {offset})")
        self.offset = offset
