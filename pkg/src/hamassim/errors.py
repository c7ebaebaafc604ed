"""Exception types shared across the package."""


class HamassimError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(HamassimError):
    """Operand shapes are incompatible with the requested operation."""


# AdamW and friends talk about parameter "shapes"; same failure mode.
ShapeMismatch = DimensionMismatch


class NotPositiveDefinite(HamassimError):
    """A matrix required to be SPD failed its Cholesky factorization."""


class NonFiniteValue(HamassimError):
    """A NaN or infinity appeared while recording a differentiable program."""


class UnsupportedPrimitive(HamassimError):
    """A differentiable program used an operation the tape cannot record."""


class ScalarRequired(HamassimError):
    """backward() was asked to differentiate a non-scalar output."""


class SingularRadius(HamassimError):
    """An orbit state reached the gravitational singularity (|q| = 0)."""


class NonFiniteState(HamassimError):
    """A stepper or predictor produced a NaN/infinite state."""


class FixedPointDiverged(HamassimError):
    """GL4 stage iteration failed to converge within the iteration cap."""


class MalformedCheckpoint(HamassimError):
    """A checkpoint file is truncated, corrupt, or missing fields."""


class NonFiniteLoss(HamassimError):
    """Training produced a non-finite loss value."""


class GridMismatch(HamassimError):
    """Two trajectories do not share the same time grid."""


class NegativeScaledCov(HamassimError):
    """Sigma-point scaling L + lambda <= 0; no real matrix square root."""


class CovarianceCollapse(HamassimError):
    """A filter covariance lost positive definiteness beyond repair."""


class ConfigInvalid(HamassimError):
    """A run configuration failed validation."""


class MissingArtifact(HamassimError):
    """A required input file (dataset, checkpoint) does not exist."""
