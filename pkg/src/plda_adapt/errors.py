"""Exception hierarchy shared across the toolkit.

The CLI maps these onto process exit codes: config problems exit with 2,
data problems with 3, numerical failures (singularities) with 4.
"""


class PldaAdaptError(Exception):
    """Base class for all toolkit errors."""


class InvalidConfigError(PldaAdaptError):
    """A configuration value (weight, dimension, method name) is out of range."""


class InvalidInputError(PldaAdaptError):
    """Input data violates a precondition (asymmetry, shape mismatch, bad rows)."""


class InsufficientDataError(InvalidInputError):
    """Not enough samples/speakers/pairs to carry out the requested estimate."""


class SingularMatrixError(PldaAdaptError):
    """A matrix that must be invertible or strictly positive definite is not."""
