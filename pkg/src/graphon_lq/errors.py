"""Exception hierarchy shared by the solver modules."""


class GraphonLQError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(GraphonLQError, ValueError):
    """An index or argument lies outside its admissible domain."""


class UnsupportedParameterError(GraphonLQError, ValueError):
    pass


class AssumptionViolation(GraphonLQError):
    """A model coefficient violates a hard well-posedness requirement."""


class NumericalError(GraphonLQError):
    """A numerical routine failed (non-convergence, residual too large)."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class BlowUpError(NumericalError):
    """An ODE solution left the admissible range before reaching the end of the horizon."""

    def __init__(self, message, escape_time, diagnostics=None):
        super().__init__(message, diagnostics)
        self.escape_time = escape_time


class WellPosednessError(BlowUpError):
    """The scalar Riccati equation blows up on [0, T]."""


class ModeIllPosedError(NumericalError):
    """A per-mode Riccati equation has no finite solution on [0, T]."""

    def __init__(self, message, mode=None, escape_time=None, diagnostics=None):
        super().__init__(message, diagnostics)
        self.mode = mode
        self.escape_time = escape_time


class FiniteGameIllPosedError(BlowUpError):
    pass


class OracleFailure(NumericalError):
    pass


class ConfigError(GraphonLQError):
    """Malformed or invalid run configuration."""
