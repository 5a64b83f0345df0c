"""Censoring-aware survival modeling and audit toolkit."""

from .errors import ConfigError, DataValidationError, NumericalError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataValidationError", "NumericalError", "__version__"]
