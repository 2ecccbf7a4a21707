"""Exception hierarchy for the aggmarkov package."""


class AggmarkovError(Exception):
    """Base class for all aggmarkov errors."""


class ShapeMismatchError(AggmarkovError):
    """Operands do not have compatible shapes."""


class MassMismatchError(AggmarkovError):
    """Marginal masses disagree beyond the relative tolerance."""


class NonnegativityError(AggmarkovError):
    """An input that must be entrywise nonnegative has a negative or non-finite entry."""


class EmptyInputError(AggmarkovError):
    """An input collection that must be non-empty is empty."""


class ZeroRowError(AggmarkovError):
    """A row of the aggregate plan sums to zero under the strict recovery policy."""


class InfeasibleSupportError(AggmarkovError):
    """The zero pattern of a prior makes the marginal constraints unreachable."""


class NonFiniteError(AggmarkovError):
    """Scaling iterations produced overflow or underflow not recoverable by renormalization."""


class InfeasibleError(AggmarkovError):
    """An estimation subproblem is infeasible even after support restriction."""


class NotRankOneError(AggmarkovError):
    """The plan-to-aggregate ratio matrix is not rank-one; the estimate has not converged."""


class MarginalMismatchError(AggmarkovError):
    """Count-matrix row sums do not match the initial count vector."""


class NegativeCountError(AggmarkovError):
    """A count vector or matrix carries negative or non-integer entries."""


class ReducibleChainError(AggmarkovError):
    """The transition matrix support graph is not strongly connected."""


class NotConvergedError(AggmarkovError):
    """An iterative computation failed to reach its requested tolerance."""


class InvalidTransitionError(AggmarkovError):
    """A matrix that must be row-stochastic is not."""


class InsufficientPointsError(AggmarkovError):
    """Too few data points in the fitting window."""


class NonPositiveValueError(AggmarkovError):
    """A quantity that must be strictly positive for log-scale fitting is not."""


class FileFormatError(AggmarkovError):
    """A JSON document does not match the expected schema; the message names the field."""
