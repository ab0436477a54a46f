"""Exception hierarchy shared across the package."""


class ClvarError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(ClvarError, ValueError):
    """An argument violates a documented precondition."""


class NumericalFailure(ClvarError, ArithmeticError):
    """An iterative routine produced a non-finite value or failed to converge.

    Attributes
    ----------
    iteration : int or None
        Iteration index at which the failure was detected.
    trace : object or None
        Optional diagnostic payload (e.g. a partial fit trace).
    """

    def __init__(self, message, iteration=None, trace=None):
        super().__init__(message)
        self.iteration = iteration
        self.trace = trace


class SingularSystemError(NumericalFailure):
    """A linear system could not be factorised."""


class InsufficientDataError(InvalidInputError):
    pass


class DegenerateSeriesError(InvalidInputError):
    def __init__(self, message, series=None):
        super().__init__(message)
        self.series = series


class ParseError(ClvarError, ValueError):
    """Malformed input file; ``row`` and ``column`` are 1-based when known."""

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class SchemaError(ClvarError, ValueError):
    """A model or plan document is missing fields or has the wrong version."""


class GenerationError(ClvarError, RuntimeError):
    pass


class StationarityViolation(NumericalFailure):
    pass
