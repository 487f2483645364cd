"""Exception hierarchy shared by all modules."""


class ControlLabError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(ControlLabError, ValueError):
    """Invalid parameters, window, or experiment configuration."""


class DegenerateModeError(ControlLabError):
    """A generalized eigenpair does not exist at some mode (assumption violated).

    ``modes`` lists the offending mode indices.
    """

    def __init__(self, msg, modes=()):
        super().__init__(msg)
        self.modes = tuple(modes)


class ZeroCouplingError(ControlLabError):
    """Raised when ``a == 0``; the spectral structure changes and the
    generalized-eigenvector construction does not apply."""


class IllConditionedError(ControlLabError):
    """Gram matrix too ill-conditioned for the working precision."""


class ConvergenceError(ControlLabError):
    """An iterative method did not converge.

    ``log`` carries whatever partial history the method accumulated.
    """

    def __init__(self, msg, log=None):
        super().__init__(msg)
        self.log = log if log is not None else []


class NotSPDError(ControlLabError):
    """CG met a direction of non-positive curvature."""


class BlowUpError(ControlLabError):
    """Nonlinear simulation exceeded its blow-up guard."""

    def __init__(self, msg, time=None):
        super().__init__(msg)
        self.time = time


class DivergenceError(ConvergenceError):
    """Fixed-point iteration stopped contracting."""
