"""Exception hierarchy shared by all solvers."""

from __future__ import annotations


class EntrofitError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for this failure."""

    exit_code = 1


class InputError(EntrofitError, ValueError):
    exit_code = 2


class ArbitrageError(InputError):
    """Prices violate a static no-arbitrage bound.

    ``index`` is the strike (or bucket) index at fault, ``row`` the input row if known.
    """

    exit_code = 3

    def __init__(self, message: str, index: int | None = None, row: int | None = None):
        super().__init__(message)
        self.index = index
        self.row = row


class DomainError(EntrofitError, ValueError):
    exit_code = 4


class QuadratureError(EntrofitError, ArithmeticError):
    exit_code = 5

    def __init__(self, message: str, bucket: int | None = None, error: float | None = None):
        super().__init__(message)
        self.bucket = bucket
        self.error = error


class ConvergenceError(EntrofitError, ArithmeticError):
    exit_code = 6

    def __init__(self, message: str, residual: float | None = None, iterations: int | None = None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class NumericalError(EntrofitError, ArithmeticError):
    exit_code = 7


class ConsistencyError(NumericalError):
    """Two independent routes to the same quantity disagree."""

    exit_code = 8
