"""Exception hierarchy shared by every stage of the pipeline."""


class AheError(Exception):
    """Base class for all package errors."""

    exit_code = 2


class ConfigError(AheError, ValueError):
    """Invalid configuration: missing channel, bad parameter, shape mismatch."""

    exit_code = 2


class DataError(AheError, ValueError):
    """Malformed or unusable input data (CSV, binary files, empty classes)."""

    exit_code = 2


class NumericError(AheError, ArithmeticError):
    """Non-finite values encountered during training or evaluation."""

    exit_code = 3
