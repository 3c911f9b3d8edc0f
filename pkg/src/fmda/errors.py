"""Exception hierarchy."""


class FmdaError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(FmdaError, ValueError):
    """Input violates a documented precondition."""


class ParseError(ValidationError):
    """Malformed dataset or config file."""


class ShapeMismatchError(ValidationError):
    """Arrays or parameters with inconsistent dimensions."""


class SingularSystemError(FmdaError, ArithmeticError):
    """A linear system stayed singular after ridge damping."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition
