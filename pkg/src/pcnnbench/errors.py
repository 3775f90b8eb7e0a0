class NumericalError(ArithmeticError):
    """Raised when a computation produces or receives non-finite values."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""
