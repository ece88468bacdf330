"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors exit 1, numeric and
domain errors exit 2, I/O failures exit 3.
"""


class LorascaleError(Exception):
    """Base class for all package errors."""


class DimensionError(LorascaleError):
    """A matrix or vector has an invalid or mismatched shape."""


class RankError(LorascaleError):
    """Adapter rank outside the admissible range 1 <= r <= n."""


class DomainError(LorascaleError):
    """A parameter lies outside its mathematical domain."""


class NumericError(LorascaleError):
    """Non-finite values where finite ones are required."""


class InsufficientDataError(LorascaleError):
    """Too few points for the requested estimate or fit."""


class NoOptimumError(LorascaleError):
    """Every candidate in a sweep diverged; no optimum exists."""


class UsageError(LorascaleError):
    """Bad command line or config file input."""


class IoError(LorascaleError):
    """Reading or writing an artifact file failed."""
