"""Exception hierarchy shared by all modules."""


class CpgfError(Exception):
    """Base class for errors raised by this package."""


class DomainError(CpgfError, ValueError):
    """An argument lies outside the domain where a formula is defined."""


class UnsupportedCaseError(CpgfError, ValueError):
    """The requested (nu, scenario) combination is not covered."""


class ResourceLimitError(CpgfError, RuntimeError):
    """An intermediate object exceeded its configured size budget.

    Attributes
    ----------
    last_completed : int or None
        Last expansion order that finished before the budget was hit.
    """

    def __init__(self, message, last_completed=None):
        super().__init__(message)
        self.last_completed = last_completed


class BlowUpError(CpgfError, RuntimeError):
    """A trajectory reached a finite-time singularity.

    Attributes
    ----------
    tau_crit : float
        Estimate of the singular time.
    """

    def __init__(self, message, tau_crit):
        super().__init__(message)
        self.tau_crit = tau_crit


class ConvergenceError(CpgfError, RuntimeError):
    """A quadrature or integrator did not meet its configured tolerance."""


class GridMismatchError(CpgfError, ValueError):
    """Two time grids cannot be aligned."""
