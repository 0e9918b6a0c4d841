"""Exception hierarchy.

Everything raised on purpose by the package derives from :class:`PermregError`
so callers (and the CLI) can separate our precondition failures from bugs.
"""

from __future__ import annotations


class PermregError(Exception):
    """Base class for all package errors."""


class RankDeficient(PermregError, ValueError):
    pass


class DomainError(PermregError, ValueError):
    pass


class LengthMismatch(PermregError, ValueError):
    pass


class DimMismatch(PermregError, ValueError):
    pass


class NonFinite(PermregError, ValueError):
    pass


class NegativePenalty(PermregError, ValueError):
    pass


class ClassTooLarge(PermregError, ValueError):
    pass


class CountOverflow(PermregError, OverflowError):
    pass


class InvalidDistance(PermregError, ValueError):
    pass


class EmptySet(PermregError, ValueError):
    pass


class EmptyRegion(PermregError, ValueError):
    pass


class IdentifiabilityViolated(PermregError, ValueError):
    pass


class PreconditionViolated(PermregError, ValueError):
    pass


class InfeasibleWindow(PermregError, ValueError):
    pass


class BudgetExceeded(PermregError, RuntimeError):
    pass


class FileError(PermregError, OSError):
    pass


class SchemaError(PermregError, ValueError):
    pass


class DegenerateColumn(PermregError, ValueError):
    pass
