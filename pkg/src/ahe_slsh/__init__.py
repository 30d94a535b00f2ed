"""Vital-sign representation learning, stratified LSH retrieval and AHE prediction."""

from ahe_slsh.errors import ConfigError, DataError, NumericError, AheError

__version__ = "0.1.0"

__all__ = ["AheError", "ConfigError", "DataError", "NumericError", "__version__"]
