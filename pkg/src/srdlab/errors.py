"""Exception hierarchy shared by all modules."""


class SrdLabError(Exception):
    """Base class."""


class ConfigurationError(SrdLabError, ValueError):
    """Inconsistent sizes or invalid configuration values."""


class DomainError(SrdLabError, ValueError):
    """A parameter lies outside the domain of the operation."""


class DivergenceError(DomainError):
    """A series that defines the requested quantity does not converge."""


class BlowUpError(SrdLabError, FloatingPointError):
    """Non-finite state during time stepping."""

    def __init__(self, t: float, last_norm: float | None = None, message: str = ""):
        self.t = t
        self.last_norm = last_norm
        super().__init__(message or f"non-finite state at t={t:.6g} (last finite norm {last_norm})")


class SafeguardError(SrdLabError, ArithmeticError):
    """Coupling schedule fell below the numerical floor before coupling."""


class UnreplayableError(SrdLabError):
    """A results file lacks the metadata needed to reproduce it."""
