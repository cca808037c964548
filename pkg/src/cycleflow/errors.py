"""Exception types shared across the package."""


class CycleflowError(Exception):
    """Base class for package-specific errors."""


class ConfigError(CycleflowError):
    """Invalid configuration key, value, or command-line usage."""


class FormatError(CycleflowError):
    """Malformed input file: bad magic, truncated payload, bad records."""


class ValidationError(CycleflowError):
    """Data violates a documented invariant."""


class NumericalError(CycleflowError):
    """Non-finite values encountered during optimization or integration."""
