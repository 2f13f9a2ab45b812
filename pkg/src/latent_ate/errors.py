"""Exception types. The CLI maps each class to an exit code."""


class LatentATEError(Exception):
    category = "error"


class DataValidationError(LatentATEError, ValueError):
    """Input data or arguments violate a precondition."""

    category = "data_validation"


class NumericalError(LatentATEError, ArithmeticError):
    """A computation could not produce a usable result."""

    category = "numerical_failure"
