"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain an operation is defined on."""


class DivergenceError(RuntimeError):
    """A simulated state became non-finite or exceeded the blow-up threshold."""

    def __init__(self, message, time=None, interval=None):
        super().__init__(message)
        self.time = time
        self.interval = interval


class EvaluationError(ArithmeticError):
    """A functional returned a non-finite value."""


class ConfigError(ValueError):
    """A scenario configuration is malformed or violates a precondition."""
