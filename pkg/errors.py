"""
Error types shared by the ingestion, estimation and pipeline modules.

Validation problems (bad input, broken streams, wrong shapes) map to CLI exit
code 2, numeric failures (fits, quadrature, undefined measures) to exit code 3.
"""

from typing import Optional


class ImpactError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ValidationError(ImpactError, ValueError):
    """Input, configuration or precondition violation."""

    exit_code = 2


class ParseError(ValidationError):
    """A message line could not be parsed."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class StreamIntegrityError(ValidationError):
    """The message stream contradicts the reconstructed order book."""

    def __init__(self, message: str, message_index: Optional[int] = None):
        self.message_index = message_index
        if message_index is not None:
            message = f"message {message_index}: {message}"
        super().__init__(message)


class DimensionError(ValidationError):
    """Matrix shapes do not match."""


class PreconditionError(ValidationError):
    """An operation was called with input outside its domain."""


class ConfigError(ValidationError):
    """Invalid pipeline or generator configuration."""


class GenerationError(ConfigError):
    """A synthetic order-flow configuration cannot be realized."""


class NumericError(ImpactError, ArithmeticError):
    """A numerical procedure failed or produced an undefined value."""

    exit_code = 3


class FitError(NumericError):
    """Stable-law fitting failed."""


class QuadratureError(NumericError):
    """Fourier inversion did not reach the requested tolerance."""

    def __init__(self, message: str, achieved: Optional[float] = None):
        self.achieved = achieved
        if achieved is not None:
            message = f"{message} (achieved error {achieved:.3e})"
        super().__init__(message)


class UndefinedAsymmetryError(NumericError):
    """The off-diagonal part of a matrix vanishes, so Lambda is undefined."""


class RescaleError(NumericError):
    """The semicircle scale cannot be derived from the histogram."""


class StageError(ImpactError):
    """A pipeline stage failed; keeps the stage name and artifact path."""

    def __init__(self, stage: str, artifact: str, cause: Exception):
        self.stage = stage
        self.artifact = artifact
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
        super().__init__(f"stage '{stage}' failed ({artifact}): {cause}")
