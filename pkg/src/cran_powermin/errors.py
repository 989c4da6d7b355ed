"""Exception hierarchy shared by the solvers.

Infeasibility is a legitimate outcome and is kept apart from numerical
trouble: callers can catch :class:`InfeasibleError` without swallowing
solver failures.
"""


class CranError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(CranError, ValueError):
    """Malformed or out-of-range configuration."""


class DomainError(CranError, ValueError):
    """Input outside the mathematical domain of a function."""


class ConvergenceError(CranError, RuntimeError):
    """An iterative method did not reach its tolerance.

    Attributes
    ----------
    residual : float
        Last residual observed before giving up.
    """

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class InfeasibleError(CranError):
    """The optimization problem has no feasible point."""


class NumericalLimitError(CranError, RuntimeError):
    """A solver hit its iteration limit or lost numerical accuracy.

    ``best`` carries the last iterate when one is available.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ResourceLimitError(CranError, RuntimeError):
    """A search exceeded its node or size budget.

    Attributes
    ----------
    incumbent : object or None
        Best feasible solution found before stopping.
    gap : float
        Absolute optimality gap ``incumbent - lower_bound`` (``inf`` when no
        incumbent exists).
    """

    def __init__(self, message, incumbent=None, gap=float("inf")):
        super().__init__(message)
        self.incumbent = incumbent
        self.gap = gap


class ExtractionFail(CranError):
    """Gaussian randomization produced no feasible candidate.

    ``best`` is the least-violating candidate seen.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
