"""Exception types shared across the package."""


class BranchwiseError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(BranchwiseError, ValueError):
    """An array had a shape the receiving operation cannot accept."""


class FrozenParameterError(BranchwiseError, ValueError):
    """A gradient was routed to a frozen or unknown parameter."""


class StaleCacheError(BranchwiseError, RuntimeError):
    """A forward cache was used after the parameters it was built from changed."""


class CheckpointError(BranchwiseError, ValueError):
    """A checkpoint file is malformed or does not match this format version."""


class ConfigError(BranchwiseError, ValueError):
    """A configuration value is missing, malformed, or out of range."""


class DataError(BranchwiseError, ValueError):
    """A dataset file is malformed or internally inconsistent."""
