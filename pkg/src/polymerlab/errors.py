"""Exception types shared across the package."""


class DivergenceError(ArithmeticError):
    """A log-moment-generating function is infinite at the requested argument."""


class WindowError(ValueError):
    """A lattice computation would read environment sites outside the field's window."""


class ParityError(ValueError):
    """A conditioning point is unreachable (time and displacement have opposite parity)."""


class DimensionError(ValueError):
    """The requested dimension is outside the transient regime the model needs."""


class HypothesisGateError(RuntimeError):
    """A scan was requested outside the hypothesis region it is designed to verify."""


class ResourceLimitError(RuntimeError):
    """Predicted memory or compute exceeds the configured cap."""


class OverflowAbort(FloatingPointError):
    """A transfer-matrix weight left the safe dynamic range; results would be garbage."""


class CorruptRunError(RuntimeError):
    """A run directory is missing required outputs or fails checksum validation."""
