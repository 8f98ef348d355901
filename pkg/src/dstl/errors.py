"""Exception hierarchy shared by the library and the command line front end."""


class DstlError(Exception):
    """Base class for all library errors."""

    exit_code = 3


class InvalidInputError(DstlError, ValueError):
    """Non-finite values or otherwise malformed input data."""


class DimensionError(DstlError, ValueError):
    """Shapes of two operands do not conform."""


class InfeasibleError(DstlError, ValueError):
    """Requested sizes cannot be satisfied by the data (e.g. K > distinct samples)."""


class NumericalError(DstlError, ArithmeticError):
    exit_code = 4


class ConfigError(DstlError, ValueError):
    exit_code = 2


class CodingError(InvalidInputError):
    """A single column failed to code inside a batch; carries the column index."""

    def __init__(self, column, cause):
        super().__init__(f"column {column}: {cause}")
        self.column = column
        self.cause = cause


class NotFittedError(DstlError, ValueError):
    """The model has no classifier yet."""
