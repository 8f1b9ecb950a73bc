"""Error taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError (and
subclasses) -> 3, NumericError (and subclasses) -> 4.
"""


class VVidsError(Exception):
    """Base class for all package errors."""


class ConfigError(VVidsError):
    """Invalid configuration value or combination."""


class DataError(VVidsError):
    """Malformed or inconsistent input data."""


class ParseError(DataError):
    """Dataset file failed schema validation; message names line and field."""


class SynchronizationError(DataError):
    """Video/audio streams cannot be aligned onto a common clip grid."""


class NumericError(VVidsError):
    """Non-finite values or numerically invalid operations."""


class DimensionError(NumericError):
    """Tensor shapes incompatible with the requested operation."""


class EmptyAttentionError(DimensionError):
    """Attention over zero keys (no sequence tokens and no memory slots)."""
