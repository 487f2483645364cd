"""Spectral control laboratory for a nonlocal parabolic system with chemotaxis."""
from .errors import (BlowUpError, ConfigError, ControlLabError, ConvergenceError, DegenerateModeError,
                     DivergenceError, IllConditionedError, NotSPDError, ZeroCouplingError)
from .spectral_core import SpectralState, Window, eigenvalue, eigenvalues

__version__ = "0.1.0"

__all__ = [
    "BlowUpError", "ConfigError", "ControlLabError", "ConvergenceError", "DegenerateModeError",
    "DivergenceError", "IllConditionedError", "NotSPDError", "ZeroCouplingError",
    "SpectralState", "Window", "eigenvalue", "eigenvalues", "__version__",
]
