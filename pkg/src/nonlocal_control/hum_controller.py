"""Penalized HUM null control for the linearized system.

Adjoint final data p = (phi_T, psi_T) is found from

    (Lambda + eps I) p = -X_free(T)

where Lambda is the observability Gramian (adjoint solve, controls
u = 1_omega phi and v = 1_omega psi, forward solve from zero data) and
X_free is the uncontrolled terminal state.  The controlled terminal state is
then exactly -eps p in the discrete model.  This is the quadratic penalty
(eps / 2) ||p||^2, not the norm penalty, so the terminal bound scales like
sqrt(eps) instead of eps.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ConvergenceError, NotSPDError
from .forward_sim import LinearModel, SystemParams, simulate_linearized, simulate_simplified, solve_adjoint
from .signals import GL_OFFSETS, GL_WEIGHTS, SampledControl, TimeGrid
from .spectral_core import SpectralState, overlap_matrix


@dataclass(frozen=True)
class HUMConfig:
    epsilon: float = 1e-8
    cg_tol: float = 1e-10
    cg_maxiter: int = 500
    steps: int = 400
    K: int = 16
    control_v: bool = True
    simplified: bool = False

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if not 0 < self.cg_tol < 1:
            raise ConfigError("cg_tol must lie in (0, 1)")
        if self.cg_maxiter < 1 or self.steps < 1 or self.K < 1:
            raise ConfigError("cg_maxiter, steps and K must be >= 1")
        if self.simplified and self.control_v:
            object.__setattr__(self, "control_v", False)

    def replace(self, **kw) -> "HUMConfig":
        d = dict(self.__dict__)
        d.update(kw)
        return HUMConfig(**d)


def _control_block(params: SystemParams, K: int, control_v: bool) -> np.ndarray:
    O2 = 2.0 * overlap_matrix(K, params.window)
    B = np.zeros((2 * K, 2 * K))
    B[:K, :K] = O2
    if control_v:
        B[K:, K:] = O2
    return B


def gramian_apply(params: SystemParams, phiT: SpectralState, psiT: SpectralState, T: float, steps: int,
                  control_v: bool = True, simplified: bool = False) -> tuple[SpectralState, SpectralState]:
    """Lambda(phi_T, psi_T) by an adjoint solve followed by a forward solve."""
    u, v = adjoint_controls(params, phiT, psiT, T, steps, control_v, simplified)
    K = phiT.K
    zero = SpectralState.zeros(K)
    if simplified:
        tr = simulate_simplified(params, zero, zero, u, T, steps)
    else:
        tr = simulate_linearized(params, zero, zero, u, v, T, steps)
    return tr.terminal()


def adjoint_controls(params, phiT, psiT, T, steps, control_v=True, simplified=False):
    """Controls (1_omega phi, 1_omega psi) sampled at the forward quadrature nodes."""
    ad = solve_adjoint(params, phiT, psiT, T, steps, simplified=simplified)
    K = phiT.K
    grid = ad.grid
    u = SampledControl(params.window, grid, ad.nodes[:, :, :K])
    v = SampledControl(params.window, grid, ad.nodes[:, :, K:]) if control_v else None
    return u, v


def gramian_matrix(params: SystemParams, K: int, T: float, steps: int, control_v: bool = True,
                   simplified: bool = False) -> np.ndarray:
    """The same discrete Gramian as ``gramian_apply`` as an explicit 2K x 2K matrix."""
    model = LinearModel(params, K, simplified=simplified)
    grid = TimeGrid(T, steps)
    h = grid.h
    B = _control_block(params, K, control_v)
    Q = np.zeros((2 * K, 2 * K))
    for g in range(4):
        Eg = model.propagator(h * (1.0 - GL_OFFSETS[g]))
        Q += h * GL_WEIGHTS[g] * Eg @ B @ Eg.T
    E = model.propagator(h)
    G = np.zeros_like(Q)
    for _ in range(steps):
        G = E @ G @ E.T + Q
    return 0.5 * (G + G.T)


def conjugate_gradient(apply, b: np.ndarray, tol: float, maxiter: int):
    """Plain CG from x0 = 0; returns (x, residual log)."""
    x = np.zeros_like(b)
    r = b.copy()
    bnorm = float(np.linalg.norm(b))
    log = [1.0 if bnorm > 0 else 0.0]
    if bnorm == 0.0:
        return x, log
    p = r.copy()
    rr = float(r @ r)
    for it in range(1, maxiter + 1):
        Ap = apply(p)
        curv = float(p @ Ap)
        if not curv > 0:
            raise NotSPDError(f"non-positive curvature {curv:.3e} at iteration {it}")
        alpha = rr / curv
        x += alpha * p
        r -= alpha * Ap
        rr_new = float(r @ r)
        rel = math.sqrt(rr_new) / bnorm
        log.append(rel)
        if rel <= tol:
            return x, log
        p = r + (rr_new / rr) * p
        rr = rr_new
    raise ConvergenceError(f"CG did not reach {tol:.1e} in {maxiter} iterations (last {log[-1]:.3e})", log)


@dataclass
class HUMResult:
    u: SampledControl
    v: SampledControl | None
    p: np.ndarray
    terminal: tuple[SpectralState, SpectralState, SpectralState | None]
    iterations: int
    residuals: list[float]
    terminal_norm: float
    initial_norm: float
    cost: float
    trajectory: object = field(repr=False, default=None)
    free_terminal_norm: float = 0.0
    epsilon: float = 0.0

    @property
    def relative_terminal(self) -> float:
        return self.terminal_norm / self.initial_norm if self.initial_norm > 0 else 0.0

    @property
    def sqrt_eps_constant(self) -> float:
        """C in ||X(T)|| <= C sqrt(eps) ||X(0)||."""
        return self.relative_terminal / math.sqrt(self.epsilon) if self.initial_norm > 0 else 0.0

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "cg_residuals": self.residuals,
            "terminal_norm": self.terminal_norm,
            "relative_terminal_norm": self.relative_terminal,
            "initial_norm": self.initial_norm,
            "free_terminal_norm": self.free_terminal_norm,
            "control_cost": self.cost,
            "epsilon": self.epsilon,
            "sqrt_eps_constant": self.sqrt_eps_constant,
            "note": "quadratic penalty; minimal-norm control realized only approximately",
        }


def _pair_norm(y: SpectralState, z: SpectralState) -> float:
    return math.hypot(y.l2_norm(), z.l2_norm())


def hum_solve(params: SystemParams, y0: SpectralState, z0: SpectralState, T: float,
              config: HUMConfig, sources=None, matrix_free: bool = False) -> HUMResult:
    """Solve the penalized dual problem by CG and return controls and terminal state.

    ``sources`` (optional) is added to the forcing of both the free and the
    controlled runs.
    """
    K = config.K
    y0, z0 = y0.resized(K), z0.resized(K)
    steps = config.steps
    simp = config.simplified
    zeroK = SpectralState.zeros(K)

    def run(u, v):
        if simp:
            if sources is not None:
                raise ConfigError("sources are only supported for the linearized system")
            return simulate_simplified(params, y0, z0, u, T, steps)
        return simulate_linearized(params, y0, z0, u, v, T, steps, sources=sources)

    free = run(None, None)
    yT, zT = free.terminal()
    b = -np.concatenate([yT.coeffs, zT.coeffs])

    if matrix_free:
        def apply(p):
            gy, gz = gramian_apply(params, SpectralState(p[:K]), SpectralState(p[K:]), T, steps,
                                   config.control_v, simp)
            return np.concatenate([gy.coeffs, gz.coeffs]) + config.epsilon * p
    else:
        G = gramian_matrix(params, K, T, steps, config.control_v, simp)

        def apply(p):
            return G @ p + config.epsilon * p

    p, log = conjugate_gradient(apply, b, config.cg_tol, config.cg_maxiter)
    if np.any(p):
        u, v = adjoint_controls(params, SpectralState(p[:K]), SpectralState(p[K:]), T, steps, config.control_v, simp)
    else:
        grid = TimeGrid(T, steps)
        u = SampledControl(params.window, grid, np.zeros((steps, 4, K)))
        v = SampledControl(params.window, grid, np.zeros((steps, 4, K))) if config.control_v else None
    traj = run(u, v)
    y_T, z_T = traj.terminal()
    w_T = SpectralState(traj.w[-1]) if traj.w is not None else None
    grid = TimeGrid(T, steps)
    cost = math.hypot(u.l2_norm(grid), v.l2_norm(grid) if v is not None else 0.0)
    return HUMResult(u, v, p, (y_T, z_T, w_T), len(log) - 1, log, _pair_norm(y_T, z_T),
                     _pair_norm(y0, z0), cost, traj, _pair_norm(yT, zT), config.epsilon)


@dataclass
class CostProbe:
    horizons: list[float]
    costs: list[float]
    terminal_norms: list[float]
    iterations: list[int]
    monotone: bool | None
    strictly_increasing: bool | None
    slope: float | None
    intercept: float | None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "horizons": self.horizons,
            "costs": self.costs,
            "terminal_norms": self.terminal_norms,
            "iterations": self.iterations,
            "nondecreasing_as_T_decreases": self.monotone,
            "strictly_increasing_as_T_decreases": self.strictly_increasing,
            "fitted_M_prime": self.slope,
            "fitted_log_M": self.intercept,
            "note": "fitted M' is an empirical surrogate for the cost constant",
            "error": self.error,
        }


def cost_probe(params: SystemParams, y0: SpectralState, z0: SpectralState, T_list, config: HUMConfig) -> CostProbe:
    """Control cost over decreasing horizons with a fit log cost = log M + M'/T."""
    T_list = [float(t) for t in T_list]
    if any(t <= 0 for t in T_list):
        raise ConfigError("horizons must be positive")
    costs, terms, iters = [], [], []
    error = None
    for T in T_list:
        try:
            res = hum_solve(params, y0, z0, T, config)
        except (ConvergenceError, NotSPDError) as exc:
            error = f"T={T}: {exc}"
            break
        costs.append(res.cost)
        terms.append(res.terminal_norm)
        iters.append(res.iterations)
    done = T_list[: len(costs)]
    order = np.argsort(done)[::-1]
    c_sorted = np.asarray(costs)[order]
    mono = strict = slope = intercept = None
    if len(costs) >= 2:
        mono = bool(np.all(np.diff(c_sorted) >= 0))
        strict = bool(np.all(np.diff(c_sorted) > 0))
    if len(costs) >= 2 and all(c > 0 for c in costs):
        slope, intercept = (float(v) for v in np.polyfit(1.0 / np.asarray(done), np.log(costs), 1))
    return CostProbe(done, costs, terms, iters, mono, strict, slope, intercept, error)


def write_json(obj: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
