"""Error classes shared across the package.

The CLI maps these onto exit codes: configuration errors exit 2,
data and numeric errors exit 1.
"""


class ConfigurationError(ValueError):
    """Invalid shapes, dimensions, or configuration values."""


class DataError(ValueError):
    """Malformed or out-of-contract input data (files, labels, matrices)."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""
