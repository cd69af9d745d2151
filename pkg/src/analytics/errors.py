"""
Error Types
===========

Exception hierarchy shared by the analytics engine and the CLI.

Each top-level category maps to one CLI exit code:
- ConfigError: malformed or inconsistent run configuration (2)
- DataError / InvalidInputError: unreadable or invalid input data (3)
- InvariantViolation: an internal invariant was broken (4)
- UsageError: unknown command or scenario (5)
"""

from typing import Optional


class FDClassError(Exception):
    """Base class for all errors raised by this package."""

    exit_code: int = 1


class InvalidInputError(FDClassError, ValueError):
    """An operation was called with arguments violating its preconditions."""

    exit_code = 3


class ConfigError(FDClassError):
    """The run configuration is malformed or inconsistent."""

    exit_code = 2


class DataError(FDClassError):
    """A data file is missing, unreadable or malformed."""

    exit_code = 3


class InvariantViolation(FDClassError):
    """An internal invariant did not hold."""

    exit_code = 4


class UsageError(FDClassError):
    """Unknown command, scenario or flag combination."""

    exit_code = 5


class StageError(FDClassError):
    """
    Failure of one pipeline stage.

    Wraps the original exception and keeps its exit code so the CLI can
    report which stage failed and why.
    """

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")

    @property
    def exit_code(self) -> int:  # type: ignore[override]
        return exit_code_for(self.cause)


class KernelFallbackWarning(UserWarning):
    """kNCD kernel weights summed to zero; nearest-neighbour probabilities were used."""


def exit_code_for(error: Optional[BaseException]) -> int:
    """Map an exception to the CLI exit code."""
    if isinstance(error, FDClassError):
        return error.exit_code
    if isinstance(error, (FileNotFoundError, PermissionError, IsADirectoryError)):
        return DataError.exit_code
    return InvariantViolation.exit_code
