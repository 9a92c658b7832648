"""Normalized power prior analysis for borrowing historical data."""

from .errors import ConfigurationError, DomainError, EvaluationError, InitializationError, NppError

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DomainError",
    "EvaluationError",
    "InitializationError",
    "NppError",
    "__version__",
]
