"""Exception types shared across the package."""


class ParameterError(ValueError):
    """Infeasible generator or circuit parameters."""


class CapacityError(ValueError):
    """Instance too large for exhaustive enumeration."""


class ValidationError(ValueError):
    """Malformed inputs (duplicate ids, shape mismatch, empty data)."""


class NumericalError(ArithmeticError):
    """Non-finite value produced during optimization or training."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
