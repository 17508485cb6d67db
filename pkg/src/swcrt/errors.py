"""Exception hierarchy.

Input problems derive from :class:`ValidationError` (CLI exit code 2),
numerical failures from :class:`ComputeError` (exit code 3) and file
problems from :class:`IoError` (exit code 4).
"""

from __future__ import annotations


class SWCRTError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(SWCRTError, ValueError):
    """An argument or configuration value violates a documented invariant."""


class ComputeError(SWCRTError, ArithmeticError):
    """A numerical procedure could not produce a result."""


class IoError(SWCRTError, OSError):
    """Reading input or writing output failed."""


class NonDivisibleAllocation(ValidationError):
    pass


class DegenerateDesign(ValidationError):
    pass


class IndexOutOfRange(ValidationError, IndexError):
    pass


class InvalidVariance(ValidationError):
    pass


class InvalidGamma(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class UndefinedEstimand(ValidationError):
    pass


class WrongStructure(ValidationError):
    pass


class MissingLikelihood(ValidationError):
    pass


class TooFewClusters(ValidationError):
    pass


class UndefinedPair(ValidationError):
    pass


class SchemaError(ValidationError):
    pass


class UnbalancedPanel(ValidationError):
    pass


class ConfigParseError(ValidationError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")


class ConfigValidationError(ValidationError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class SingularDesign(ComputeError):
    pass


class NonConvergence(ComputeError):
    pass


class LeverageSingular(ComputeError):
    pass
