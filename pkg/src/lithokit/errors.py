"""Exception taxonomy shared by every module.

The CLI maps these to process exit codes: ConfigError -> 2,
DataError (and subclasses) -> 3, NumericError -> 4.
"""


class LithoError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(LithoError):
    """Invalid or inconsistent configuration values."""


class DataError(LithoError):
    """Bad input data: missing files, inconsistent dimensions, non-binary masks."""


class FormatError(DataError):
    """Corrupt or unsupported on-disk format (bad magic, truncated payload)."""


class NumericError(LithoError):
    """Numerical failure: non-finite loss, eigensolver breakdown."""


class DimensionError(LithoError, ValueError):
    """Grid or matrix shape violates an operation's preconditions."""
