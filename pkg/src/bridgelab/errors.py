"""Exception types shared across the package.

The CLI maps these onto exit codes: config problems exit 2, numeric
divergence exits 3, I/O failures exit 4.
"""


class BridgeError(Exception):
    """Base class for all package errors."""


class ConfigError(BridgeError, ValueError):
    """A configuration value is missing, malformed or out of range."""


class ScheduleError(ConfigError):
    """A bridge schedule is invalid or degenerate."""


class DimensionError(BridgeError, ValueError):
    """Array shapes do not agree."""


class StageError(BridgeError, ValueError):
    """A sampler step was requested outside its region of validity."""


class DivergenceError(BridgeError, ArithmeticError):
    """A loss, gradient or state became non-finite."""


class FormatError(BridgeError, OSError):
    """A binary file has the wrong magic bytes, version or size."""
