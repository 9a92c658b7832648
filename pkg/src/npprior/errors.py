"""Exception types shared across the package."""


class NppError(Exception):
    """Base class for all package errors."""


class DomainError(NppError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class EvaluationError(NppError, ArithmeticError):
    """A numerical evaluation produced a non-finite or undefined value."""


class ConfigurationError(NppError, ValueError):
    """An analysis, study or command configuration is invalid."""


class InitializationError(NppError, RuntimeError):
    """A Markov chain could not be started from its initial state."""
