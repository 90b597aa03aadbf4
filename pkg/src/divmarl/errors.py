"""Exception types shared across the package."""


class DivmarlError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(DivmarlError):
    """Two quantities that must share a dimensionality do not."""


class InvalidDistributionError(DivmarlError):
    """A Gaussian was built with a non-positive standard deviation."""


class EmptyObservationSetError(DivmarlError):
    """A metric was requested over zero observations."""


class DeviationCollapseError(DivmarlError):
    """Deviation diversity is ~0 while a positive target is requested.

    The caller is expected to re-initialize the deviation output layers
    and recompute before retrying.
    """


class NonFiniteError(DivmarlError):
    """A NaN or infinity appeared; the message identifies where."""


class SpawnError(DivmarlError):
    """Rejection sampling failed to place entities without overlap."""


class ConfigError(DivmarlError):
    """Invalid configuration key, value, or file."""


class CheckpointError(DivmarlError):
    """Malformed or incompatible checkpoint."""
