"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Raised when a configuration is invalid before any compute happens."""


class NumericError(ArithmeticError):
    """Raised on non-finite values where finite ones are required."""


class ReportingError(RuntimeError):
    """Raised when a metric needs data that was never recorded."""
