"""Exception hierarchy shared across the package.

Each class carries the process exit code the CLI maps it to.
"""


class BrainGenError(Exception):
    exit_code = 1


class ConfigError(BrainGenError):
    """Invalid configuration or argument values."""

    exit_code = 2


class ShapeError(ConfigError):
    """Tensor/matrix dimension mismatch; message names both shapes."""


class DataError(BrainGenError):
    """Dataset contents violate a contract (empty groups, zero variance, ...)."""

    exit_code = 3


class FormatError(DataError):
    """On-disk file fails validation; message names the offending field."""


class LookupDataError(DataError):
    """A requested key is absent from an index."""


class NumericError(BrainGenError):
    """Non-finite values where finiteness is guaranteed."""

    exit_code = 4
