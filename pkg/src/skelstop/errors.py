"""Exception types shared across the package."""


class SkelstopError(Exception):
    """Base class for package errors."""


class DomainError(SkelstopError, ValueError):
    """An argument lies outside the domain of a function."""


class ResolutionTooFineError(SkelstopError, OverflowError):
    """The requested level size produces an unrepresentable period count."""


class InvalidMarkError(SkelstopError, ValueError):
    """A mark vector does not have exactly one nonzero entry equal to +-1."""


class InvalidHistoryError(SkelstopError, ValueError):
    """A history contains non-positive increments or malformed marks."""


class QuadratureError(SkelstopError, ArithmeticError):
    """Adaptive quadrature failed to reach its tolerance within budget."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual estimate {residual:.3e})")
        self.residual = residual


class CoefficientError(SkelstopError, ArithmeticError):
    """An SDE coefficient or payoff produced a non-finite value."""


class BoundViolationError(SkelstopError, ValueError):
    """A functional exceeded its declared sup bound."""


class RegressionError(SkelstopError, ArithmeticError):
    """A least-squares fit failed."""

    def __init__(self, message: str, step: int | None = None):
        prefix = f"step {step}: " if step is not None else ""
        super().__init__(prefix + message)
        self.step = step


class InstanceTooLargeError(SkelstopError, ValueError):
    """The exact oracle was asked for an instance above its cost gate."""


class ConfigError(SkelstopError, ValueError):
    """Invalid run configuration."""
