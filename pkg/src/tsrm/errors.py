"""Exception taxonomy shared across the package.

Every error raised on a documented failure path is one of these classes so
callers (and the CLI exit-code mapping) can dispatch on type alone.
"""


class TSRMError(Exception):
    """Base class for all package errors."""


class DimensionError(TSRMError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(TSRMError):
    """A configuration value is invalid or out of its allowed range."""


class ContractError(TSRMError):
    """An API was used outside its documented contract."""


class DataError(TSRMError):
    """Input data is malformed, unreadable, or fails validation."""


class NumericError(TSRMError):
    """A numeric invariant was violated (non-finite values, zero division)."""
