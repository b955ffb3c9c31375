"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Inputs violate a structural precondition (grid, epsilon, recipe)."""


class NumericError(ArithmeticError):
    """An optimizer or transform produced non-finite values."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class CertificationError(ValueError):
    """A growth or membership certificate cannot be issued on the probes."""

    def __init__(self, message, probe=None):
        super().__init__(message)
        self.probe = probe


class EstimationError(ValueError):
    """A Young-measure histogram cannot be formed from the samples."""


class PairingError(ValueError):
    """A duality pairing is ill-defined on the histogram (overflow mass)."""
