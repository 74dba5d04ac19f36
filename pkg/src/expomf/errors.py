"""Exception types shared across the package.

The CLI maps these onto process exit codes (configuration 2, data 3,
numerical 4), so library code should raise the most specific one that applies.
"""


class ExpomfError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(ExpomfError):
    """A hyperparameter, option, or config file entry is invalid."""


class DataError(ExpomfError):
    """Input data could not be parsed or failed validation."""


class CheckpointError(DataError):
    """A checkpoint file is malformed, truncated, or incompatible."""


class NumericalError(ExpomfError):
    """A numerical operation failed (singular system, non-finite values)."""


class NotFittedError(ExpomfError):
    """A model method requiring fitted state was called before fit()."""
