"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data problems
exit 2, numeric failures exit 3.
"""


class SublmError(Exception):
    """Base class for all package errors."""


class ConfigError(SublmError):
    """Invalid configuration or command usage."""


class DataError(SublmError):
    """Missing, empty, malformed or inconsistent input data."""


class NumericError(SublmError):
    """Non-finite values or other numeric breakdowns during computation."""
