"""Exception types shared across the package.

Every error raised on bad input derives from :class:`InputError`, which the
command line maps to exit code 2.
"""


class InputError(ValueError):
    """Base class for invalid inputs and violated preconditions."""


class JetShapeError(InputError):
    """Jets with different arity, base point or cap were combined."""


class BaseMismatchError(InputError):
    """A substitution would leave the germ (inner values miss the outer base)."""


class SingularJacobianError(InputError):
    """The linear part of a map is singular or too badly conditioned."""


class BudgetError(InputError):
    """The jet cap is too small for the requested number of derivatives."""


class WeightError(InputError):
    """A weight table is not Hermitian, not real or not strictly psh."""


class CoercivityError(InputError):
    """The phase ratio Q/|x-y|^2 became non-positive at a sampled pair."""

    def __init__(self, message, pair=None):
        super().__init__(message)
        self.pair = pair


class RadiusError(InputError):
    """A point lies outside the radius where the jets are trusted."""


class GridError(InputError):
    """Quadrature grid is empty, too small or clips a peak state."""


class ConditioningError(InputError):
    """A Gram matrix is too ill conditioned to factor reliably."""


class EllipticityError(InputError):
    """The leading coefficient of a symbol vanishes at the base point."""
