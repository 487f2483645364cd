"""Time grids and control signals supported on the window.

A control is stored as ``u(t, x) = 1_omega(x) * sum_l g_l(t) sin(l pi x)``.
Solvers only ever need ``g`` at the Gauss-Legendre nodes of a ``TimeGrid``;
the modal forcing seen by mode k is ``2 * sum_l O[k, l] g_l(t)`` with ``O``
the window overlap matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError
from .spectral_core import Window, overlap_matrix

_GL4_X, _GL4_W = np.polynomial.legendre.leggauss(4)
GL_OFFSETS = 0.5 * (_GL4_X + 1.0)  # in (0, 1)
GL_WEIGHTS = 0.5 * _GL4_W          # sum to 1


@dataclass(frozen=True)
class TimeGrid:
    T: float
    steps: int

    def __post_init__(self):
        if not self.T > 0:
            raise ConfigError("horizon T must be positive")
        if int(self.steps) < 1:
            raise ConfigError("steps must be >= 1")
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def h(self) -> float:
        return self.T / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.steps + 1)

    @property
    def node_times(self) -> np.ndarray:
        """(steps, 4) array of Gauss-Legendre nodes inside each step."""
        t0 = self.times[:-1]
        return t0[:, None] + self.h * GL_OFFSETS[None, :]

    @property
    def node_weights(self) -> np.ndarray:
        """Quadrature weights matching ``node_times`` (sum to T)."""
        return np.broadcast_to(self.h * GL_WEIGHTS, (self.steps, 4))

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """int_0^T of a quantity sampled at the nodes, shape (steps, 4, ...)."""
        w = self.node_weights.reshape(self.steps, 4, *([1] * (values.ndim - 2)))
        return np.sum(values * w, axis=(0, 1))


class ControlSignal:
    """Base class; subclasses provide ``coefficients(times)``."""

    window: Window | None
    L: int

    def coefficients(self, times: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def node_coefficients(self, grid: TimeGrid) -> np.ndarray:
        t = grid.node_times
        return self.coefficients(t.ravel()).reshape(grid.steps, 4, self.L)

    def node_forcing(self, grid: TimeGrid, K: int) -> np.ndarray:
        """Sine-coefficient forcing on modes 1..K at the grid nodes, (steps, 4, K)."""
        g = self.node_coefficients(grid)
        B = 2.0 * overlap_matrix(K, self.window, self.L)
        return g @ B.T

    def l2_norm(self, grid: TimeGrid) -> float:
        """||u||_{L^2((0,T) x omega)} by node quadrature in time, exact in space."""
        g = self.node_coefficients(grid)
        O = overlap_matrix(self.L, self.window)
        dens = np.einsum("nil,lm,nim->ni", g, O, g)
        return float(np.sqrt(max(grid.integrate(dens), 0.0)))

    def is_zero(self) -> bool:
        return False


class ZeroControl(ControlSignal):
    def __init__(self, window: Window | None = None, L: int = 1):
        self.window = window
        self.L = L

    def coefficients(self, times):
        return np.zeros((np.size(times), self.L))

    def node_forcing(self, grid, K):
        return np.zeros((grid.steps, 4, K))

    def is_zero(self):
        return True


class FunctionControl(ControlSignal):
    """Control whose modal amplitudes are given by a callable ``g(times) -> (n, L)``."""

    def __init__(self, window: Window | None, g: Callable[[np.ndarray], np.ndarray], L: int):
        self.window = window
        self.g = g
        self.L = L

    def coefficients(self, times):
        times = np.atleast_1d(np.asarray(times, dtype=float))
        out = np.asarray(self.g(times), dtype=float)
        return out.reshape(times.size, self.L)


@dataclass
class SampledControl(ControlSignal):
    """Control known only at the nodes of one specific grid."""

    window: Window | None
    grid: TimeGrid
    values: np.ndarray = field(repr=False)  # (steps, 4, L)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[:2] != (self.grid.steps, 4):
            raise ConfigError("sampled control does not match its grid")

    @property
    def L(self) -> int:
        return self.values.shape[2]

    def node_coefficients(self, grid):
        if grid != self.grid:
            raise ConfigError(
                f"sampled control lives on {self.grid}, cannot be used on {grid}"
            )
        return self.values

    def coefficients(self, times):
        # piecewise-linear reconstruction through the nodes; for export only
        t = self.grid.node_times.ravel()
        v = self.values.reshape(-1, self.L)
        times = np.atleast_1d(np.asarray(times, dtype=float))
        return np.stack([np.interp(times, t, v[:, l]) for l in range(self.L)], axis=1)

    def is_zero(self):
        return not np.any(self.values)
