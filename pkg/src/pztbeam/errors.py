"""Exception types shared across the package."""


class PztBeamError(Exception):
    """Base class for package errors."""


class ConfigError(PztBeamError):
    """Invalid configuration; carries the offending field path."""

    def __init__(self, field, message):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")


class ConvergenceError(PztBeamError):
    """An iterative solver exhausted its budget.

    For the QP solver the best iterate and its KKT residual are attached so
    callers can fall back gracefully.
    """

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class DivergenceError(PztBeamError):
    """Simulation or training produced non-finite values.

    Episode runners attach the truncated record as `partial` so callers can
    preserve it.
    """

    partial = None


class FeasibilityError(PztBeamError):
    """A candidate point violates constraints; names the violated index."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class SaturationError(PztBeamError):
    """A voltage command exceeds the actuator limit (controllers must pre-clip)."""


class WarmupError(PztBeamError):
    """Controller history is too short for the delay taps."""
