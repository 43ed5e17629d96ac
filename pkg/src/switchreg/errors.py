"""Exception and warning types raised across the package.

Errors signal conditions the caller must handle; warnings mark recoverable
numerical repairs (floored variances, uniformized transition rows) that the
fitting engine applies and records.
"""


class SwitchregError(Exception):
    """Base class for all errors raised by this package."""


class InvariantViolation(SwitchregError):
    """A model object failed one of its structural invariants."""


class TooFewPoints(SwitchregError):
    """Not enough observations to construct the requested object."""


class OutOfDomain(SwitchregError):
    """Evaluation points fall outside the spline knot range."""


class AllZeroLikelihood(SwitchregError):
    """Every regime density underflowed; the parameters are catastrophically
    far from the data."""


class IndexOutOfRange(SwitchregError):
    """A joint-posterior index lies outside the series."""


class SingularSystem(SwitchregError):
    """The penalized normal equations are rank deficient, typically because a
    regime holds fewer than two effective points of weight mass."""


class DegenerateDenominator(SwitchregError):
    """A df-adjusted variance denominator fell to or below its floor of 1.0."""


class EmptyGroup(SwitchregError):
    """An initialization split assigned too few points to one group."""


class GcvAllInfinite(SwitchregError):
    """Every grid point produced an invalid cross-validation value for some
    regime, even after widening the grid once."""


class NotConverged(SwitchregError):
    """The EM loop hit its iteration cap; partial results are still usable."""


class BoundaryEstimate(SwitchregError):
    """A latent-parameter estimate sits on the boundary of the parameter
    space, where the information matrix is undefined."""


class NotAtFixedPoint(SwitchregError):
    """Standard errors were requested at parameters that are not a fixed
    point of the latent-parameter update."""


class PositiveDefiniteViolation(SwitchregError):
    """The assembled information matrix is not positive definite."""


class ComplexityGuard(SwitchregError):
    """The series is too long for the quadratic-cost standard-error sums."""


class ParseError(SwitchregError):
    """A data file row could not be parsed; the message carries the line
    number."""


class EmptyFile(SwitchregError):
    """The input file contains no data rows."""


class UnresolvableTies(SwitchregError):
    """Jittering failed to produce strictly increasing abscissae."""


class NonPositiveU(SwitchregError):
    """The estimated signal variance for the fixed-scale kernel is not
    positive; the input carries no smooth signal."""


class IoError(SwitchregError):
    """An output file could not be written."""


class SwitchregWarning(UserWarning):
    """Base class for recoverable numerical repairs."""


class NonPositiveVariance(SwitchregWarning):
    """A variance update underflowed and was floored."""


class EmptyRow(SwitchregWarning):
    """A transition-matrix row had no posterior mass and was set uniform."""


class DegenerateRegime(SwitchregWarning):
    """A regime's responsibility mass fell below 2.0 during fitting."""
