"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes: ConfigError -> 2,
DataError -> 3, NumericError -> 4.
"""


class SpectextError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SpectextError):
    """Invalid configuration: bad flag values, unparsable architecture strings."""


class DataError(SpectextError):
    """Invalid or insufficient input data: empty corpora, label gaps, edgeless graphs."""


class NumericError(SpectextError):
    """Numerical failure: divergence, singular systems, non-finite values."""
