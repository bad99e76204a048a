"""Exception types shared across the package."""


class NoisyIntentError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(NoisyIntentError, ValueError):
    """Array dimensions do not agree."""


class InvalidInputError(NoisyIntentError, ValueError):
    """Input violates a documented precondition (non-finite, empty, ...)."""


class ConfigError(NoisyIntentError, ValueError):
    """A configuration value is out of its allowed range."""


class ParseError(NoisyIntentError, ValueError):
    """A data file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(NoisyIntentError, ValueError):
    """A parsed file is structurally valid but violates the dataset schema."""


class NumericalError(NoisyIntentError, RuntimeError):
    """Training produced a non-finite value."""


class CalibrationError(NoisyIntentError, RuntimeError):
    """Noise calibration could not reach the requested word error rate."""

    def __init__(self, message: str, best_level: float, best_wer: float):
        super().__init__(message)
        self.best_level = best_level
        self.best_wer = best_wer
