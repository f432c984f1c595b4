class ConfigError(ValueError):
    """Invalid or unknown configuration values."""


class NumericalError(ArithmeticError):
    """A trajectory or training run produced non-finite values."""


class DataFileError(OSError):
    """A required input file is missing, unreadable or malformed."""
