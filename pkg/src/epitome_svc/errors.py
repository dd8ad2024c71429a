"""Exception types shared across the package.

The CLI maps :class:`NumericalError` to exit status 3 and every other
subclass of :class:`EpitomeError` to exit status 2.
"""


class EpitomeError(Exception):
    """Base class for all package errors."""


class ShapeError(EpitomeError, ValueError):
    """Array dimensions do not satisfy an operation's precondition."""


class RangeError(EpitomeError, IndexError):
    """A region or index falls outside its parent plane."""


class IntegrityError(EpitomeError):
    """A data structure violates one of its invariants."""


class NumericalError(EpitomeError, ArithmeticError):
    """A linear system is singular; the caller should raise the regularization."""


class EvaluationError(EpitomeError, ValueError):
    """RD curves cannot be compared (too few points, no PSNR overlap, ...)."""
