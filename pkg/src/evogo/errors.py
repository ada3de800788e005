"""Exception and warning types raised across the package."""


class EvoGoError(Exception):
    """Base class for package errors."""


class DimensionMismatch(EvoGoError, ValueError):
    pass


class NotPositiveDefinite(EvoGoError, ArithmeticError):
    pass


class DomainError(EvoGoError, ValueError):
    pass


class TapeMismatch(EvoGoError, ValueError):
    pass


class EmptySplit(EvoGoError, ValueError):
    pass


class EmptyData(EvoGoError, ValueError):
    pass


class FrozenModelMissing(EvoGoError, ValueError):
    pass


class SnapshotMissing(EvoGoError, LookupError):
    pass


class DegenerateTargets(UserWarning):
    """Emitted when GP targets are constant; a constant model is returned instead."""
