"""Exception hierarchy shared by all gramstab modules."""


class GramstabError(Exception):
    """Base class for every error raised by gramstab."""


class DomainError(GramstabError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ContractError(GramstabError, ValueError):
    """Inputs are individually valid but mutually inconsistent (shapes, norms)."""


class QuadratureError(GramstabError, ArithmeticError):
    """Adaptive quadrature failed to reach its tolerance."""

    def __init__(self, message, k=None, l=None):
        super().__init__(message)
        self.k = k
        self.l = l


class PositivityError(GramstabError, ArithmeticError):
    """A Gramian that must be positive definite is not (numerically)."""

    def __init__(self, message, smallest_eigenvalue=None, stage=None):
        super().__init__(message)
        self.smallest_eigenvalue = smallest_eigenvalue
        self.stage = stage


class ConditioningError(GramstabError, ArithmeticError):
    """A linear system is too ill-conditioned to solve reliably in float64."""


class IntegratorError(GramstabError, ArithmeticError):
    """A time integrator lost an invariant it is supposed to preserve."""


class AliasingError(GramstabError, ValueError):
    """A trajectory is sampled too coarsely for a frequency-based diagnostic."""


class ScheduleError(GramstabError, ValueError):
    """A finite-time stage schedule is not admissible."""
