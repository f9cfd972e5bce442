"""Exception hierarchy shared by every stage of the pipeline."""

import numpy as np


class SDAError(Exception):
    """Base class for errors raised by this package."""


class InvalidInput(SDAError, ValueError):
    pass


class NumericalFailure(SDAError, ArithmeticError):
    pass


class NotPSD(NumericalFailure):
    pass


class SingularSystem(NumericalFailure, np.linalg.LinAlgError):
    pass


class DidNotConverge(NumericalFailure):
    """An iterative solver ran out of budget.

    ``best`` carries the last iterate so callers may still inspect it.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
