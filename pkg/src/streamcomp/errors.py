"""Exception hierarchy shared by the library and the CLI."""

from __future__ import annotations


class SmcError(Exception):
    """Base class for every error raised by streamcomp."""

    exit_code = 1


class InvalidArgumentError(SmcError, ValueError):
    exit_code = 2


class StreamParseError(SmcError, ValueError):
    """Malformed stream, dense or factors file."""

    exit_code = 3

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class NumericalError(SmcError, ArithmeticError):
    exit_code = 4


class RankDeficiencyError(NumericalError):
    def __init__(self, column: int, message: str | None = None):
        super().__init__(message or f"rank deficiency detected at column {column}")
        self.column = column


class SingularMatrixError(NumericalError):
    def __init__(self, index: int, message: str | None = None):
        super().__init__(message or f"near-zero pivot at index {index}")
        self.index = index


class SingularFactorError(SingularMatrixError):
    """Raised when the row-vector estimate has dependent columns."""


class NonConvergenceError(NumericalError):
    pass


class DegenerateInputError(NumericalError):
    pass


class StateError(SmcError, RuntimeError):
    pass


class SequencingError(StateError):
    pass


class InsufficientDataError(SmcError, ValueError):
    exit_code = 2


class DegenerateSubspaceWarning(UserWarning):
    """Quality warning: an estimated subspace lost directions and was refilled."""
