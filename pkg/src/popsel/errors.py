"""Exception hierarchy.

Errors split into two families so the command line can tell a bad request
(exit code 1) from a numerical failure on a valid request (exit code 2).
"""


class PopselError(Exception):
    """Base class for every error raised by this package."""


class DomainError(PopselError, ValueError):
    """An argument lies outside the domain of the operation."""


class InfeasibleParametersError(DomainError):
    """Observed-model parameters that no intrinsic model can produce."""


class EmptySupportError(DomainError):
    """A density has no support left on the evaluation grid."""


class NumericalError(PopselError, ArithmeticError):
    """A valid request that failed numerically."""


class ImpracticalSelectionError(NumericalError):
    """The detection fraction is too small to simulate or normalise."""


class InitializationError(NumericalError):
    """No walker of the initial ensemble has a finite log-likelihood."""


class RemapFailureError(NumericalError):
    """Every posterior draw was outside the image of the intrinsic space."""


class ConvergenceError(NumericalError):
    """A sampler or harness did not reach its convergence criterion."""
