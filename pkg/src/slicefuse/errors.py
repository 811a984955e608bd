"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or mismatched module parameters (CLI exit code 2)."""


class DataError(ValueError):
    """Malformed or missing input data (CLI exit code 3)."""
