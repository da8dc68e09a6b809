"""Exception types raised across the package."""


class RidaError(Exception):
    """Base class for every error raised by :mod:`rida`."""


class ValidationError(RidaError, ValueError):
    """An input violates a documented precondition or invariant."""


class DatasetFormatError(ValidationError):
    """A dataset file could not be parsed.

    Parameters
    ----------
    path : str
        File being parsed.
    lineno : int
        1-based line number of the offending line.
    message : str
        What went wrong.
    """

    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{self.path}:{lineno}: {message}")


class DegenerateDegreeError(ValidationError):
    """Normalization without self-loops was asked for a graph with an isolated vertex."""


class DivergenceError(RidaError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, where="training"):
        self.epoch = epoch
        super().__init__(f"non-finite loss in {where} at epoch {epoch}")


class BudgetExhaustedError(RidaError):
    """No feasible edge flip remains before the budget is spent."""


class UndefinedMetricError(RidaError, ValueError):
    """A metric was requested over an empty index set."""
