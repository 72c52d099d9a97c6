"""Exception types raised by the detection library."""


class GmepError(Exception):
    """Base class for all library errors."""


class ConfigurationError(GmepError, ValueError):
    """Invalid or unsupported configuration value."""


class DomainError(GmepError, ValueError):
    """Input outside the domain of an operation (bad point, shape mismatch)."""


class SingularityError(GmepError, ArithmeticError):
    """A linear system that must be solved is numerically singular."""


class ComplexityGuardError(GmepError, RuntimeError):
    """Mixture tuple enumeration would exceed the configured cap."""


class BudgetExceededError(GmepError, RuntimeError):
    """Brute-force enumeration refused because the hypothesis count is too large."""


class QuadratureError(GmepError, RuntimeError):
    """Numerical integration failed its convergence check."""
