"""Dirichlet sine basis on (0, 1).

Fields are stored as coefficient vectors against ``phi_k(x) = sin(k pi x)``,
k = 1..K (unnormalized, so ``int phi_k^2 = 1/2``).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError

PI = np.pi


@dataclass(frozen=True)
class Window:
    """Control region omega as a sorted union of disjoint open intervals."""

    intervals: tuple[tuple[float, float], ...]

    def __post_init__(self):
        ivs = tuple((float(r1), float(r2)) for r1, r2 in self.intervals)
        if not ivs:
            raise ConfigError("window must contain at least one interval")
        prev = 0.0
        for r1, r2 in ivs:
            if not (0.0 <= r1 < r2 <= 1.0):
                raise ConfigError(f"interval ({r1}, {r2}) must satisfy 0 <= r1 < r2 <= 1")
            if r1 < prev:
                raise ConfigError("window intervals must be sorted and disjoint")
            prev = r2
        object.__setattr__(self, "intervals", ivs)

    @classmethod
    def of(cls, *intervals) -> "Window":
        if len(intervals) == 2 and np.isscalar(intervals[0]):
            intervals = (tuple(intervals),)
        return cls(tuple(tuple(iv) for iv in intervals))

    @property
    def measure(self) -> float:
        return sum(r2 - r1 for r1, r2 in self.intervals)

    def indicator(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for r1, r2 in self.intervals:
            out[(x > r1) & (x < r2)] = 1.0
        return out

    def to_list(self):
        return [list(iv) for iv in self.intervals]


@dataclass
class SpectralState:
    """Truncated sine series ``sum_k coeffs[k-1] * sin(k pi x)``."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=float)).copy()
        if c.ndim != 1 or c.size < 1:
            raise ConfigError("SpectralState needs a 1-d coefficient vector with K >= 1")
        if not np.all(np.isfinite(c)):
            raise ConfigError("SpectralState coefficients must be finite")
        self.coeffs = c

    @property
    def K(self) -> int:
        return self.coeffs.size

    @classmethod
    def zeros(cls, K: int) -> "SpectralState":
        return cls(np.zeros(K))

    @classmethod
    def mode(cls, k: int, K: int, amplitude: float = 1.0) -> "SpectralState":
        c = np.zeros(K)
        c[k - 1] = amplitude
        return cls(c)

    def resized(self, K: int) -> "SpectralState":
        c = np.zeros(K)
        n = min(K, self.K)
        c[:n] = self.coeffs[:n]
        return SpectralState(c)

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(self.coeffs**2) / 2.0))

    def h1_proxy(self) -> float:
        """Sobolev-weighted coefficient norm (sum (1 + lambda_k) c_k^2)^(1/2)."""
        lam = eigenvalues(self.K)
        return float(np.sqrt(np.sum((1.0 + lam) * self.coeffs**2)))

    def mean(self) -> float:
        return float(self.coeffs @ mean_masses(self.K))

    def __call__(self, x):
        return synthesize(self, x)


def eigenvalue(k: int) -> float:
    if k < 1:
        raise ConfigError("mode index must be >= 1")
    return float((k * PI) ** 2)


def eigenvalues(K: int) -> np.ndarray:
    k = np.arange(1, K + 1, dtype=float)
    return (k * PI) ** 2


def eigenfunction_eval(k: int, x):
    return np.sin(k * PI * np.asarray(x, dtype=float))


def mean_mass(k: int) -> float:
    """int_0^1 sin(k pi x) dx; exactly zero for even k."""
    if k % 2 == 0:
        return 0.0
    return 2.0 / (k * PI)


def mean_masses(K: int) -> np.ndarray:
    return np.array([mean_mass(k) for k in range(1, K + 1)])


def sinpi(x):
    """sin(pi x), exact at integers and half-integers."""
    x = np.asarray(x, dtype=float)
    r = np.mod(x, 2.0)
    out = np.sin(PI * r)
    out = np.where(r == 0.0, 0.0, out)
    out = np.where(r == 1.0, 0.0, out)
    out = np.where(r == 0.5, 1.0, out)
    return np.where(r == 1.5, -1.0, out)


def cospi(x):
    """cos(pi x), exact at integers and half-integers."""
    return sinpi(np.asarray(x, dtype=float) + 0.5)


def overlap_on_window(k: int, l: int, window: Window | None) -> float:
    """int_omega sin(k pi x) sin(l pi x) dx in closed form.

    ``window=None`` is shorthand for the whole interval (0, 1).
    """
    return float(overlap_matrix(max(k, l), window)[k - 1, l - 1])


def overlap_matrix(K: int, window: Window | None, L: int | None = None) -> np.ndarray:
    """(K, L) matrix of window overlaps."""
    L = K if L is None else L
    intervals = ((0.0, 1.0),) if window is None else window.intervals
    k = np.arange(1, K + 1, dtype=float)[:, None]
    l = np.arange(1, L + 1, dtype=float)[None, :]
    d, s = k - l, k + l
    same = d == 0
    dd = np.where(same, 1.0, d)
    O = np.zeros((K, L))
    for r1, r2 in intervals:
        sum_part = (sinpi(s * r2) - sinpi(s * r1)) / (s * PI)
        cross = 0.5 * ((sinpi(dd * r2) - sinpi(dd * r1)) / (dd * PI) - sum_part)
        diag = 0.5 * (r2 - r1) - 0.5 * sum_part
        O += np.where(same, diag, cross)
    return O


def synthesize(state: SpectralState, grid) -> np.ndarray:
    x = np.asarray(grid, dtype=float)
    k = np.arange(1, state.K + 1)
    return np.sin(PI * np.multiply.outer(x, k)) @ state.coeffs


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def quadrature_grid(panels: int = 64, order: int = 16):
    """Composite Gauss-Legendre nodes/weights on [0, 1]."""
    nodes, weights = (_GL_NODES, _GL_WEIGHTS) if order == 16 else np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, 1.0, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    w = (half[:, None] * weights[None, :]).ravel()
    return x, w


def analyze(samples: Callable | Sequence[float], K: int, panels: int = 64) -> SpectralState:
    """Sine coefficients ``2 int_0^1 f phi_k`` by composite 16-point Gauss-Legendre.

    ``samples`` is either a callable of x or an array of values already taken
    at the nodes of ``quadrature_grid(panels)``.
    """
    if K < 1:
        raise ConfigError("K must be >= 1")
    x, w = quadrature_grid(panels)
    f = samples(x) if callable(samples) else np.asarray(samples, dtype=float)
    f = np.broadcast_to(np.asarray(f, dtype=float), x.shape)
    k = np.arange(1, K + 1)
    basis = np.sin(PI * np.multiply.outer(k, x))
    return SpectralState(2.0 * basis @ (w * f))
