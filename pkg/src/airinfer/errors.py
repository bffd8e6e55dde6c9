"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ConfigError(ValueError):
    """A configuration value is invalid or unknown."""


class NumericError(ArithmeticError):
    """A numeric precondition was violated (NaN input, divergence)."""


class ValidationError(ValueError):
    """Input data failed validation (coordinates, CSV rows, ...)."""


class UsageError(RuntimeError):
    """An API was called in an unsupported way."""
