"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration file, environment override, or flag value is invalid."""


class ContractViolation(ValueError):
    """An input violates a documented precondition (shapes, ranges, invariants)."""


class DataError(RuntimeError):
    """Input data files are missing, unreadable, or malformed."""


class ConvergenceError(RuntimeError):
    """An iterative solver exhausted its iteration budget before certifying.

    Carries the final optimality-certificate residual so callers can decide
    whether the result is still usable.
    """

    def __init__(self, message, kkt_residual=None):
        super().__init__(message)
        self.kkt_residual = kkt_residual
