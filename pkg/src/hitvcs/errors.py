"""Exception types shared across the toolkit."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (unknown keys, mismatched setup)."""


class DataError(RuntimeError):
    """Input data missing, unreadable, or structurally wrong."""


class NanLossError(RuntimeError):
    """Training loss became non-finite; message carries the diagnostic context."""
