"""Exception types raised across the package."""


class RDODEError(Exception):
    """Base class for all errors raised by rdode."""


class DomainError(RDODEError, ValueError):
    """A nonlinearity produced a non-finite value."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class SingularityError(RDODEError, ArithmeticError):
    """A matrix that must be invertible is (numerically) singular."""


class ConvergenceError(RDODEError, RuntimeError):
    """Newton-type iteration did not reach its tolerance."""

    def __init__(self, message, iterate=None, residual=None, iterations=None):
        super().__init__(message)
        self.iterate = iterate
        self.residual = residual
        self.iterations = iterations


class BranchSolveError(ConvergenceError):
    """Solving f(u, v) = 0 for u at fixed v failed."""

    def __init__(self, message, iterate=None, residual=None, iterations=None, node=None):
        super().__init__(message, iterate, residual, iterations)
        self.node = node


class DegenerateBranchError(BranchSolveError):
    """f_u is singular, so u = k(v) is not determined by the implicit function theorem."""


class DegenerateBranchWarning(UserWarning):
    pass


class BranchNotFoundError(RDODEError, RuntimeError):
    """Continuation found no non-constant solution in the requested parameter range."""

    def __init__(self, message, eigenvalue_history=None):
        super().__init__(message)
        self.eigenvalue_history = eigenvalue_history or []


class NearEssentialSpectrumError(RDODEError, ValueError):
    """lambda is too close to a sampled eigenvalue of A(x) to form the resolvent."""


class FixedPointRangeError(RDODEError, ValueError):
    """The bracketing interval for the fixed point of eta0 has no sign change."""

    def __init__(self, message, sup_eta0=None):
        super().__init__(message)
        self.sup_eta0 = sup_eta0


class CapacityError(RDODEError, MemoryError):
    """Dense eigensolve requested above the configured size cap."""


class BlowUpError(RDODEError, FloatingPointError):
    """Simulated state left the finite range or exceeded the blow-up cap."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class FitError(RDODEError, ValueError):
    """Not enough samples for a growth-rate fit."""
