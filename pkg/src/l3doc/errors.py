"""Error taxonomy shared across modules; the CLI maps these to exit codes."""


class ConfigError(ValueError):
    """Invalid configuration (bad divisors, unknown keys, malformed values)."""


class DataError(ValueError):
    """Invalid or malformed input data (files, meshes, labels)."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required (diverged training)."""
