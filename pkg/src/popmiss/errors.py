"""Exception hierarchy shared by every module."""


class PopmissError(Exception):
    """Base class; the CLI maps subclasses to exit codes."""

    exit_code = 1


class ConfigError(PopmissError, ValueError):
    """Invalid configuration or out-of-range parameter."""


class DataError(PopmissError, ValueError):
    """Input data violates the schema or a dataset invariant.

    ``row`` is the zero-based index of the offending record and ``line``
    its 1-based line in the source file, when known.
    """

    def __init__(self, message, row=None, line=None):
        super().__init__(message)
        self.row = row
        self.line = line


class NumericError(PopmissError, ArithmeticError):
    """A computation produced a non-finite or otherwise unusable value."""

    exit_code = 2


class ConvergenceError(NumericError):
    """An iterative solver stopped before meeting its tolerance."""

    def __init__(self, message, grad_norm=float("nan"), n_iter=0):
        super().__init__(message)
        self.grad_norm = grad_norm
        self.n_iter = n_iter


class UndefinedEstimateError(NumericError):
    """The requested estimator is undefined for the supplied counts."""
