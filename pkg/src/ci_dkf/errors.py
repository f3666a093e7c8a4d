class CIDKFError(Exception):
    """Base class for errors raised by ci_dkf."""


class ModelError(CIDKFError, ValueError):
    """Invalid model, graph, weight or scenario definition."""


class NumericalError(CIDKFError, ArithmeticError):
    """A factorization or solve failed on data that should have been well posed."""


class ConvergenceError(NumericalError):
    """An iterative solver did not reach its tolerance."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = list(residuals or [])
