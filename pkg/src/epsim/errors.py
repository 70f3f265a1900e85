"""Exception types shared across the package."""


class EpsimError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(EpsimError):
    """Composite Hilbert-space dimension exceeds the configured cap."""


class SpaceMismatchError(EpsimError):
    """Two objects live on incompatible mode spaces."""


class StateValidationError(EpsimError):
    """A state object violates its invariants (norm, trace, positivity)."""


class EncodingError(EpsimError):
    """An operation requires a logical encoding that was not declared."""


class IntegratorError(EpsimError):
    """Master-equation integration failed (trace drift past tolerance)."""


class CalibrationError(EpsimError):
    """A calibration scan produced no usable operating point."""


class ZeroProbabilityError(EpsimError):
    """Conditioning on a measurement outcome of probability zero."""


class FitError(EpsimError):
    """A curve fit could not be performed on the given data."""


class ConfigError(EpsimError):
    """Malformed configuration file or inconsistent options."""
