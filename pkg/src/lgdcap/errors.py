"""Exception and warning types shared across the package."""


class InvalidParameterError(ValueError):
    """A model parameter, portfolio, or state violates its invariants."""


class NumericRangeError(ValueError):
    """A computation left the representable floating-point range."""


class DegenerateDensityError(ValueError):
    """A density or proposal has collapsed to zero variance / zero mass."""


class LatentUnidentifiedError(ValueError):
    """The systematic factor cannot be recovered (rho estimate is zero)."""


class DataFormatError(ValueError):
    """A dataset file or record violates the expected schema."""


class QuadratureAccuracyWarning(UserWarning):
    """Quadrature value did not stabilize when the node count was doubled."""


class BoundarySolutionWarning(UserWarning):
    """A numeric optimizer returned a solution on the search boundary."""


class TuningFailureWarning(UserWarning):
    """Proposal tuning ended with acceptance rates outside the usable band."""
