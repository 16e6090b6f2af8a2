"""Exception hierarchy shared by all modules.

The three concrete classes map onto the CLI exit codes: ConfigError -> 2,
DataError -> 3, NumericalError -> 4.
"""


class SalisegError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SalisegError):
    """Invalid or inconsistent configuration."""


class DataError(SalisegError):
    """Malformed input data: files, annotations, masks, dimensions."""


class NumericalError(SalisegError):
    """Numerical failure: NaN scalings, divergence, non-convergence with fail-fast."""
