"""Exception types shared across the package."""


class SldsIcaError(Exception):
    """Base class for all package-specific errors."""


class NotPositiveDefinite(SldsIcaError):
    """A matrix required to be SPD failed its Cholesky factorization.

    Usually signals a degenerate precision or covariance produced upstream.
    """


class NonScalarOutput(SldsIcaError):
    """backward() was called on a node whose value is not a scalar."""


class ImproperMessage(SldsIcaError):
    """A Gaussian chain message lost positive-definiteness.

    Signals a mismatch between surrogate potentials and dynamics potentials
    (e.g. an encoder emitting potentials the chain cannot absorb).
    """


class ConfigInvalid(SldsIcaError):
    """A run configuration is missing keys or holds out-of-range values."""


class IoError(SldsIcaError):
    """A file could not be read or written."""


class FormatError(SldsIcaError):
    """A binary tensor file or checkpoint has a bad magic, version, or layout."""


class ShapeMismatch(SldsIcaError):
    """Two arrays that must share a shape do not."""


class MissingGroundTruth(SldsIcaError):
    """An evaluation needing simulated ground truth was run on real data."""
