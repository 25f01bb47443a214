"""Exception types shared across the package.

Plain ``ValueError`` is used for invalid arguments; the classes below exist
where callers (notably the CLI) need to distinguish failure categories.
"""


class ConfigError(Exception):
    """Invalid or inconsistent run configuration."""


class FormatError(Exception):
    """Malformed input file; the message names the offending offset/field."""


class ResourceLimitError(Exception):
    """A configurable resource cap (state count, qubit count) was exceeded."""


class InsufficientDataError(ValueError):
    """Not enough usable data points for the requested estimate."""
