"""
Error types for frequnet
Every error names the offending field, term, shape or file in its message.
"""


class FrequnetError(Exception):
    """Base class for all errors raised by the toolkit."""


class DimensionError(FrequnetError, ValueError):
    """A tensor shape or divisibility precondition was violated."""


class ConfigError(FrequnetError, ValueError):
    """A configuration value, key or combination is invalid."""


class DataError(FrequnetError, ValueError):
    """Input data is inconsistent (labels out of range, failed generation)."""


class TapeError(FrequnetError, RuntimeError):
    """The gradient tape is in a state that does not allow the request."""


class NumericError(FrequnetError, ArithmeticError):
    """A non-finite value appeared in a loss term.

    Attributes:
        term: Name of the offending loss term.
    """

    def __init__(self, term: str, message: str):
        super().__init__(f"non-finite value in loss term '{term}': {message}")
        self.term = term


class CheckpointError(FrequnetError, OSError):
    """A binary container file is malformed or unreadable."""
