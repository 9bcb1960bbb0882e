"""Exception types shared across modules.

ShapeError / TapeStateError / NumericError live in kernel next to the code
that raises them; these two cover configuration and serialized-data faults
so the CLI can map each family to its own exit code.
"""


class ConfigError(ValueError):
    """A configuration value or combination is invalid."""


class DataFormatError(RuntimeError):
    """A serialized file is malformed, truncated, or inconsistent."""
