"""Modal solvers for the simplified, linearized and adjoint systems.

In sine coordinates the linearized system is block lower-triangular:

    y' = -L y + u
    z' = C y - Lz z + v

with ``L = diag(lambda_k)``, ``Lz = diag(lambda_k - c d2 / (lambda_k + kappa))``
and ``C = a I + 2 b m m^T + c d1 diag(1 / (lambda_k + kappa))`` (``m_k`` the mean
of ``phi_k``).  The propagator of this block is available in closed form, so
the homogeneous part is advanced exactly; forcing enters through a 4-point
Gauss-Legendre Duhamel quadrature per step.  The adjoint uses the transposed
propagators, which makes the discrete forward/adjoint pair exactly dual.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .signals import GL_OFFSETS, GL_WEIGHTS, ControlSignal, TimeGrid, ZeroControl
from .spectral_core import SpectralState, Window, eigenvalues, mean_masses


@dataclass(frozen=True)
class SystemParams:
    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    d1: float = 0.0
    d2: float = 0.0
    kappa: float = 1.0
    chi1: float = 1.0
    chi2: float = 1.0
    beta1: float = 0.0
    beta2: float = 0.0
    window: Window = field(default_factory=lambda: Window.of(0.3, 0.8))

    def __post_init__(self):
        if not self.kappa > 0:
            raise ConfigError("kappa must be positive")
        # chi = 0 is accepted as the switch that turns chemotaxis off
        for name in ("chi1", "chi2"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be nonnegative")
        if not isinstance(self.window, Window) and self.window is not None:
            object.__setattr__(self, "window", Window(tuple(map(tuple, self.window))))

    def replace(self, **changes) -> "SystemParams":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(changes)
        return SystemParams(**d)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "window"}
        d["window"] = self.window.to_list() if self.window is not None else None
        return d


def elliptic_solve(kappa: float, d1: float, d2: float, y: SpectralState, z: SpectralState) -> SpectralState:
    """Modal solution of -w'' + kappa w = d1 y + d2 z."""
    if y.K != z.K:
        raise ConfigError("y and z must share the truncation")
    lam = eigenvalues(y.K)
    return SpectralState((d1 * y.coeffs + d2 * z.coeffs) / (lam + kappa))


def exp_divided_difference(a, b, t):
    """int_0^t exp(-b (t - s)) exp(-a s) ds, stable for a ~ b."""
    a, b = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
    lo = np.minimum(a, b)
    gap = np.abs(b - a) * t
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(gap > 1e-12, -np.expm1(-gap) / np.where(gap > 0, gap, 1.0), 1.0 - 0.5 * gap)
    return t * np.exp(-lo * t) * ratio


class LinearModel:
    """Coupling data of the modal linear system at truncation K."""

    def __init__(self, params: SystemParams, K: int, simplified: bool = False):
        if K < 1:
            raise ConfigError("K must be >= 1")
        self.params, self.K, self.simplified = params, K, simplified
        lam = eigenvalues(K)
        m = mean_masses(K)
        C = params.a * np.eye(K) + 2.0 * params.b * np.outer(m, m)
        lam_z = lam.copy()
        if not simplified:
            ell = 1.0 / (lam + params.kappa)
            C = C + params.c * params.d1 * np.diag(ell)
            lam_z = lam - params.c * params.d2 * ell
        self.lam, self.lam_z, self.C, self.m = lam, lam_z, C, m
        self._cache: dict[float, np.ndarray] = {}

    def propagator(self, t: float) -> np.ndarray:
        """Exact 2K x 2K propagator exp(t M) of the homogeneous system."""
        key = float(t)
        if key not in self._cache:
            K = self.K
            E = np.zeros((2 * K, 2 * K))
            idx = np.arange(K)
            E[idx, idx] = np.exp(-self.lam * t)
            E[K + idx, K + idx] = np.exp(-self.lam_z * t)
            dd = exp_divided_difference(self.lam[None, :], self.lam_z[:, None], t)
            E[K:, :K] = self.C * dd
            self._cache[key] = E
        return self._cache[key]

    def generator(self) -> np.ndarray:
        K = self.K
        M = np.zeros((2 * K, 2 * K))
        M[:K, :K] = -np.diag(self.lam)
        M[K:, K:] = -np.diag(self.lam_z)
        M[K:, :K] = self.C
        return M


@dataclass
class Trajectory:
    """States at the step times of ``grid``.

    For forward runs the fields are (y, z, w); adjoint runs store
    (phi, psi, theta) in the same slots and set ``kind='adjoint'``.
    ``nodes`` optionally holds the full 2K state at the quadrature nodes.
    """

    grid: TimeGrid
    y: np.ndarray
    z: np.ndarray
    w: np.ndarray | None
    kind: str = "forward"
    nodes: np.ndarray | None = field(default=None, repr=False)

    @property
    def times(self):
        return self.grid.times

    @property
    def K(self):
        return self.y.shape[1]

    @property
    def field_names(self):
        return ("phi", "psi", "theta") if self.kind == "adjoint" else ("y", "z", "w")

    def state(self, n: int, name: str) -> SpectralState:
        i = self.field_names.index(name)
        arr = (self.y, self.z, self.w)[i]
        return SpectralState(arr[n])

    def terminal(self) -> tuple[SpectralState, SpectralState]:
        return SpectralState(self.y[-1]), SpectralState(self.z[-1])

    def norms(self) -> dict[str, np.ndarray]:
        out = {}
        for name, arr in zip(self.field_names, (self.y, self.z, self.w)):
            if arr is not None:
                out[name] = np.sqrt(np.sum(arr**2, axis=1) / 2.0)
        return out

    def mean_series(self, name: str) -> np.ndarray:
        i = self.field_names.index(name)
        return (self.y, self.z, self.w)[i] @ mean_masses(self.K)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "field", "mode", "coeff"])
            for n, t in enumerate(self.times):
                for name, arr in zip(self.field_names, (self.y, self.z, self.w)):
                    if arr is None:
                        continue
                    for k in range(self.K):
                        wr.writerow([f"{t:.17g}", name, k + 1, f"{arr[n, k]:.17g}"])

    def summary(self) -> dict:
        norms = self.norms()
        return {
            "kind": self.kind,
            "T": self.grid.T,
            "steps": self.grid.steps,
            "K": self.K,
            "terminal_norms": {k: float(v[-1]) for k, v in norms.items()},
            "initial_norms": {k: float(v[0]) for k, v in norms.items()},
        }


def _check_states(y0: SpectralState, z0: SpectralState):
    if y0.K != z0.K:
        raise ConfigError(f"y0 has K={y0.K} but z0 has K={z0.K}")


def _forcing(grid, K, u, v, sources):
    F = np.zeros((grid.steps, 4, 2 * K))
    if u is not None and not u.is_zero():
        F[:, :, :K] += u.node_forcing(grid, K)
    if v is not None and not v.is_zero():
        F[:, :, K:] += v.node_forcing(grid, K)
    if sources is not None:
        s1, s2 = sources.node_forcing(grid, K)
        F[:, :, :K] += s1
        F[:, :, K:] += s2
    return F


def propagate(model: LinearModel, X0: np.ndarray, grid: TimeGrid, F: np.ndarray | None) -> np.ndarray:
    """Advance the modal state through ``grid``; returns (steps + 1, 2K)."""
    h = grid.h
    E = model.propagator(h)
    X = np.empty((grid.steps + 1, X0.size))
    X[0] = X0
    if F is None or not np.any(F):
        for n in range(grid.steps):
            X[n + 1] = E @ X[n]
        return X
    Eg = [h * GL_WEIGHTS[g] * model.propagator(h * (1.0 - GL_OFFSETS[g])) for g in range(4)]
    for n in range(grid.steps):
        acc = E @ X[n]
        for g in range(4):
            acc += Eg[g] @ F[n, g]
        X[n + 1] = acc
    return X


def _run_forward(params, y0, z0, u, v, T, steps, simplified, sources=None):
    _check_states(y0, z0)
    grid = TimeGrid(T, steps)
    K = y0.K
    model = LinearModel(params, K, simplified=simplified)
    F = _forcing(grid, K, u, v, sources)
    X = propagate(model, np.concatenate([y0.coeffs, z0.coeffs]), grid, F)
    y, z = X[:, :K], X[:, K:]
    w = None
    if not simplified:
        w = (params.d1 * y + params.d2 * z) / (model.lam + params.kappa)
    return Trajectory(grid, y, z, w)


def simulate_simplified(params: SystemParams, y0: SpectralState, z0: SpectralState,
                        u: ControlSignal | None, T: float, steps: int) -> Trajectory:
    """y_t - y_xx = u 1_omega, z_t - z_xx = a y + b int y."""
    return _run_forward(params, y0, z0, u, None, T, steps, simplified=True)


def simulate_linearized(params: SystemParams, y0: SpectralState, z0: SpectralState,
                        u: ControlSignal | None, v: ControlSignal | None, T: float, steps: int,
                        sources=None) -> Trajectory:
    """Linearized parabolic-elliptic system, optionally with source terms.

    ``sources`` is any object with ``node_forcing(grid, K) -> (S1, S2)``.
    """
    return _run_forward(params, y0, z0, u, v, T, steps, simplified=False, sources=sources)


def solve_adjoint(params: SystemParams, phiT: SpectralState, psiT: SpectralState, T: float, steps: int,
                  simplified: bool = False) -> Trajectory:
    """Backward solve from final data; also records the state at the forward quadrature nodes."""
    _check_states(phiT, psiT)
    grid = TimeGrid(T, steps)
    K = phiT.K
    model = LinearModel(params, K, simplified=simplified)
    h = grid.h
    Et = model.propagator(h).T
    Eg = [model.propagator(h * (1.0 - GL_OFFSETS[g])).T for g in range(4)]
    P = np.empty((grid.steps + 1, 2 * K))
    nodes = np.empty((grid.steps, 4, 2 * K))
    P[-1] = np.concatenate([phiT.coeffs, psiT.coeffs])
    for n in range(grid.steps - 1, -1, -1):
        for g in range(4):
            nodes[n, g] = Eg[g] @ P[n + 1]
        P[n] = Et @ P[n + 1]
    phi, psi = P[:, :K], P[:, K:]
    theta = None if simplified else params.c * psi / (model.lam + params.kappa)
    return Trajectory(grid, phi, psi, theta, kind="adjoint", nodes=nodes)


@dataclass
class EnergyReport:
    times: np.ndarray
    norms: dict
    monotone: dict
    growth_constant: float | None
    flagged: bool

    def to_dict(self):
        return {
            "times": self.times.tolist(),
            "norms": {k: v.tolist() for k, v in self.norms.items()},
            "monotone_nonincreasing": self.monotone,
            "fitted_growth_constant": self.growth_constant,
            "flagged": self.flagged,
        }


def fit_growth_constant(times, ratio, hi: float = 1e6) -> float:
    """Smallest C with ratio(t) <= C exp(C t) for all sampled t."""
    ratio = np.asarray(ratio, float)
    if not np.any(ratio > 0):
        return 0.0

    def ok(C):
        return bool(np.all(ratio <= C * np.exp(C * times) * (1 + 1e-12)))

    lo, up = 0.0, 1.0
    while not ok(up):
        up *= 2.0
        if up > hi:
            return math.inf
    for _ in range(80):
        mid = 0.5 * (lo + up)
        lo, up = (lo, mid) if ok(mid) else (mid, up)
    return up


def energy_report(traj: Trajectory, controls_vanish: bool = True, growth_cap: float = 1e3) -> EnergyReport:
    """L^2 norm histories plus a fitted ``C`` with ||(y, z)(t)|| <= C e^{Ct} (||y0|| + ||z0||)."""
    norms = traj.norms()
    names = traj.field_names
    monotone = {k: bool(np.all(np.diff(v) <= 1e-14 * max(v[0], 1e-300))) for k, v in norms.items()}
    base = norms[names[0]][0] + norms[names[1]][0]
    C = None
    flagged = False
    if base > 0:
        joint = np.sqrt(norms[names[0]] ** 2 + norms[names[1]] ** 2)
        C = fit_growth_constant(traj.times, joint / base)
        flagged = bool(controls_vanish and not (C <= growth_cap))
    return EnergyReport(traj.times, norms, monotone, C, flagged)


def write_summary(traj: Trajectory, path, extra: dict | None = None) -> None:
    data = traj.summary()
    rep = energy_report(traj)
    data["energy"] = {"fitted_growth_constant": rep.growth_constant, "flagged": rep.flagged,
                      "monotone_nonincreasing": rep.monotone}
    if extra:
        data.update(extra)
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
