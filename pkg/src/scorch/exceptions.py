"""Exception hierarchy for scorch."""


class ScorchError(Exception):
    """Base class for all library errors."""


class UnknownKernelError(ScorchError, KeyError):
    """Raised when a kernel name is not in the catalog."""


class DomainError(ScorchError, ValueError):
    """Raised when an argument lies outside a function's domain."""


class ParameterError(ScorchError, ValueError):
    """Raised for invalid scalar parameters (e.g. nonpositive mu)."""


class GroupStructureError(ScorchError, ValueError):
    """Raised when groups overlap or index outside the variable."""


class MetricError(ScorchError, ValueError):
    """Raised when a diagonal metric has a nonpositive entry."""


class DataError(ScorchError, ValueError):
    """Raised for malformed or inconsistent data."""


class ParseError(DataError):
    """Raised by the LIBSVM reader; carries the offending line number."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class UnsupportedPenaltyError(ScorchError, ValueError):
    """Raised when an operation does not support a penalty kind."""


class ConfigError(ScorchError, ValueError):
    """Raised for invalid solver or run configuration."""


class NumericError(ScorchError, ArithmeticError):
    """Raised when a solver encounters a nonfinite quantity or a failed solve."""
