"""Exception hierarchy shared across the package."""


class ProcanError(Exception):
    """Base class for every error raised by procan."""


class DimensionError(ProcanError, ValueError):
    """Tensor shapes do not agree."""


class ConfigurationError(ProcanError, ValueError):
    """A configuration value is out of its legal range."""


class DataError(ProcanError, ValueError):
    """Input data is malformed or violates a record invariant."""


class StateError(ProcanError, RuntimeError):
    """An operation was requested in a state that does not allow it."""


class UsageError(ProcanError, ValueError):
    """A function was called with arguments outside its contract."""
