"""Exception hierarchy shared by all modules."""


class MindepError(Exception):
    """Base class for errors raised by mindep."""


class ModelSpecError(MindepError, ValueError):
    """A model specification or dataset violates its invariants."""


class StatisticDomainError(MindepError, ValueError):
    """A canonical statistic was evaluated outside its domain or returned a
    non-finite value."""


class NonExistenceError(MindepError):
    """The estimator does not exist for the observed data.

    Attributes
    ----------
    certificate : ndarray or None
        A direction ``v`` with ``v @ u >= 0`` for every pair statistic ``u``
        (a separating direction), when one was found.
    """

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class ConvergenceError(MindepError):
    """An iterative solver did not reach its tolerance.

    Attributes
    ----------
    residual : float
        Last residual reached by the solver.
    """

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class EnumerationBudgetError(MindepError):
    """Exact enumeration over permutations would exceed the allowed budget."""


class DegenerateChainError(MindepError):
    """Monte Carlo samples of the sufficient statistic carry no variation."""
