"""Nonlinear chemotaxis simulation and the source-term fixed-point control loop.

Quadratic terms are projected onto the sine basis exactly: on a midpoint grid
of N = 4K points, products of two K-mode fields are cosine series of degree
at most 2K, recovered without aliasing by a DCT.  The weights rho_0, rho_S
and rho vanish like exp(-c / (T - t)), so every weighted norm is carried as a
natural logarithm.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dct, dst, idst
from scipy.interpolate import CubicSpline
from scipy.linalg import expm
from scipy.special import logsumexp

from .errors import BlowUpError, ConfigError, ConvergenceError, DivergenceError, NotSPDError
from .forward_sim import LinearModel, SystemParams, Trajectory, _forcing
from .hum_controller import HUMConfig, HUMResult, hum_solve
from .signals import GL_OFFSETS, GL_WEIGHTS, ControlSignal, TimeGrid
from .spectral_core import PI, SpectralState, eigenvalues, mean_masses


def nonlinearity_eval(y, z, Y, Z, beta1, beta2):
    """Pointwise f1, f2 with Y, Z the spatial averages of y, z."""
    y, z = np.asarray(y, float), np.asarray(z, float)
    f1 = beta1 * (y * y + y * z + y * Y + y * Z)
    f2 = beta2 * (z * z + y * z + z * Y + z * Z)
    return f1, f2


def _sin_cos_integrals(K: int, N: int) -> np.ndarray:
    """I[k, m] = int_0^1 sin(k pi x) cos(m pi x) dx for k = 1..K, m = 0..N-1."""
    k = np.arange(1, K + 1, dtype=float)[:, None]
    m = np.arange(N, dtype=float)[None, :]
    odd = ((k + m) % 2) == 1
    den = np.where(k == m, 1.0, k * k - m * m)
    return np.where(odd, 2.0 * k / (PI * den), 0.0)


class Collocation:
    """Midpoint grid with exact products of K-mode sine series."""

    def __init__(self, K: int, factor: int = 4):
        self.K = K
        self.N = factor * K
        self.x = (np.arange(self.N) + 0.5) / self.N
        keep = int(2 * self.N / 3)
        self.mask = np.arange(self.N) < keep + 1
        self.I = _sin_cos_integrals(K, self.N)
        self.m = mean_masses(K)
        self._I_sc = _sin_cos_integrals(self.N, K + 1)[:, 1:]

    def to_grid(self, c: np.ndarray) -> np.ndarray:
        """Samples of sum c_k sin(k pi x) on the grid; c has shape (..., K)."""
        X = np.zeros(c.shape[:-1] + (self.N,))
        X[..., : self.K] = c * self.N
        if self.K == self.N:
            X[..., -1] *= 2.0
        return idst(X, type=2, axis=-1)

    def sine_coeffs(self, f: np.ndarray) -> np.ndarray:
        """Sine coefficients of a grid function that is a sine series of degree < N."""
        X = dst(f, type=2, axis=-1) / self.N
        X[..., -1] *= 0.5
        return X * self.mask

    def cosine_coeffs(self, f: np.ndarray) -> np.ndarray:
        X = dct(f, type=2, axis=-1) / self.N
        X[..., 0] *= 0.5
        return X * self.mask

    def project_cosine(self, f: np.ndarray) -> np.ndarray:
        """Exact sine coefficients 2 int f phi_k for a cosine series f sampled on the grid."""
        return 2.0 * self.cosine_coeffs(f) @ self.I.T

    def divergence_flux(self, u: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Sine coefficients of (u w_x)_x for K-mode u, w; shape (..., K)."""
        kpi = PI * np.arange(1, self.K + 1)
        wx = self.cosine_grid(w * kpi)
        p = self.sine_coeffs(self.to_grid(u) * wx)
        # integrate by parts: 2 int (p)_x sin(k pi x) = -2 k pi int p cos(k pi x)
        return -2.0 * kpi * self._sin_against_cos(p)

    def cosine_grid(self, c: np.ndarray) -> np.ndarray:
        """Samples of sum c_k cos(k pi x), k = 1..K."""
        X = np.zeros(c.shape[:-1] + (self.N,))
        X[..., 1 : self.K + 1] = c
        return 0.5 * dct(X, type=3, axis=-1)

    def _sin_against_cos(self, p: np.ndarray) -> np.ndarray:
        """int_0^1 (sum_m p_m sin(m pi x)) cos(k pi x) dx for k = 1..K."""
        return p @ self._I_sc


def nonlinear_terms(params: SystemParams, y: np.ndarray, z: np.ndarray, col: Collocation | None = None):
    """Sine coefficients of -chi1 (y w_x)_x + f1 and -chi2 (z w_x)_x + f2.

    ``y`` and ``z`` have shape (..., K); w follows from the elliptic relation.
    """
    y, z = np.asarray(y, float), np.asarray(z, float)
    K = y.shape[-1]
    col = col or Collocation(K)
    lam = eigenvalues(K)
    w = (params.d1 * y + params.d2 * z) / (lam + params.kappa)
    Y = (y @ col.m)[..., None]
    Z = (z @ col.m)[..., None]
    yg, zg = col.to_grid(y), col.to_grid(z)
    F1 = np.zeros_like(y)
    F2 = np.zeros_like(z)
    if params.beta1:
        F1 += params.beta1 * (col.project_cosine(yg * yg + yg * zg) + (Y + Z) * y)
    if params.beta2:
        F2 += params.beta2 * (col.project_cosine(zg * zg + yg * zg) + (Y + Z) * z)
    if params.chi1 and (params.d1 or params.d2):
        F1 -= params.chi1 * col.divergence_flux(y, w)
    if params.chi2 and (params.d1 or params.d2):
        F2 -= params.chi2 * col.divergence_flux(z, w)
    return F1, F2


def _phi_functions(M: np.ndarray, h: float):
    n = M.shape[0]
    A = np.zeros((3 * n, 3 * n))
    A[:n, :n] = h * M
    A[:n, n : 2 * n] = np.eye(n)
    A[n : 2 * n, 2 * n :] = np.eye(n)
    E = expm(A)
    return E[:n, n : 2 * n], E[:n, 2 * n :]


def simulate_nonlinear(params: SystemParams, y0: SpectralState, z0: SpectralState,
                       u: ControlSignal | None, v: ControlSignal | None, T: float, steps: int,
                       K: int | None = None, sources=None, blowup: float = 1e6) -> Trajectory:
    """ETD-RK2 for the full system; the linear part and the controls are treated as in
    the linear solver, so with the nonlinearity off the result is the linear one."""
    K = K or y0.K
    y0, z0 = y0.resized(K), z0.resized(K)
    grid = TimeGrid(T, steps)
    h = grid.h
    model = LinearModel(params, K)
    E = model.propagator(h)
    Eg = [h * GL_WEIGHTS[g] * model.propagator(h * (1.0 - GL_OFFSETS[g])) for g in range(4)]
    F = _forcing(grid, K, u, v, sources)
    active = bool(params.beta1 or params.beta2 or ((params.chi1 or params.chi2) and (params.d1 or params.d2)))
    if active:
        P1, P2 = _phi_functions(model.generator(), h)
        hP1, hP2 = h * P1, h * P2
        col = Collocation(K)
    X = np.empty((steps + 1, 2 * K))
    X[0] = np.concatenate([y0.coeffs, z0.coeffs])

    def Nvec(x):
        f1, f2 = nonlinear_terms(params, x[:K], x[K:], col)
        return np.concatenate([f1, f2])

    for n in range(steps):
        lin = E @ X[n]
        for g in range(4):
            lin += Eg[g] @ F[n, g]
        if active:
            N0 = Nvec(X[n])
            a = lin + hP1 @ N0
            N1 = Nvec(a)
            nxt = a + hP2 @ (N1 - N0)
        else:
            nxt = lin
        if not np.all(np.isfinite(nxt)):
            raise BlowUpError(f"non-finite state at t={grid.times[n + 1]:.6g}", time=float(grid.times[n + 1]))
        if active:
            peak = max(np.max(np.abs(col.to_grid(nxt[:K]))), np.max(np.abs(col.to_grid(nxt[K:]))))
            if peak > blowup:
                raise BlowUpError(f"sup norm {peak:.3e} exceeds {blowup:.1e} at t={grid.times[n + 1]:.6g}",
                                  time=float(grid.times[n + 1]))
        X[n + 1] = nxt
    y, z = X[:, :K], X[:, K:]
    w = (params.d1 * y + params.d2 * z) / (model.lam + params.kappa)
    return Trajectory(grid, y, z, w)


@dataclass(frozen=True)
class SourceWeights:
    """rho_0, rho_S, rho built on [T (1 - 1/q^2), T] and constant before it."""

    p: float = 3.0
    q: float = 1.2
    gamma: float = 2.9
    M: float = 1.0
    T: float = 1.0

    def __post_init__(self):
        p, q, g = self.p, self.q, self.gamma
        if not 1.0 < q < math.sqrt(2.0):
            raise ConfigError("q must satisfy 1 < q < sqrt(2)")
        if not p > q * q / (2.0 - q * q):
            raise ConfigError(f"p must exceed q^2 / (2 - q^2) = {q * q / (2 - q * q):.6g}")
        if not (1.0 + p) * q * q / 2.0 < g < p:
            raise ConfigError(f"gamma must lie in ((1 + p) q^2 / 2, p) = ({(1 + p) * q * q / 2:.6g}, {p:.6g})")
        if not self.M > 0 or not self.T > 0:
            raise ConfigError("M and T must be positive")

    @property
    def t_star(self) -> float:
        return self.T * (1.0 - 1.0 / self.q**2)

    def _log(self, coef, t):
        t = np.asarray(t, float)
        tt = np.maximum(t, self.t_star)
        with np.errstate(divide="ignore"):
            return np.where(tt >= self.T, -np.inf, -coef * self.M / ((self.q - 1.0) * (self.T - tt)))

    def log_rho0(self, t):
        return self._log(self.p, t)

    def log_rhoS(self, t):
        return self._log((1.0 + self.p) * self.q**2, t)

    def log_rho(self, t):
        return self._log(self.gamma, t)

    def rho0(self, t):
        return np.exp(self.log_rho0(t))

    def rhoS(self, t):
        return np.exp(self.log_rhoS(t))

    def rho(self, t):
        return np.exp(self.log_rho(t))

    def verify(self, n: int = 1024, r: float = 3.0) -> dict:
        t = np.linspace(0.0, self.T, n)
        tin = t[:-1]
        out = {}
        for name in ("rho0", "rhoS", "rho"):
            lg = getattr(self, "log_" + name)(t)
            flat = lg[t <= self.t_star]
            out[name] = {
                "nonincreasing": bool(np.all(np.diff(lg[:-1]) <= 1e-12) and lg[-1] == -np.inf),
                "vanishes_at_T": bool(lg[-1] == -np.inf),
                "constant_before_junction": bool(np.ptp(flat) == 0.0) if flat.size else True,
            }
        l0, lS, lr = self.log_rho0(tin), self.log_rhoS(tin), self.log_rho(tin)
        out["rho^2/rhoS<=1"] = bool(np.all(2 * lr - lS <= 1e-12))
        out[f"rho^{r:g}/rhoS<=1"] = bool(np.all(r * lr - lS <= 1e-12))
        out["rho0<=rho"] = bool(np.all(l0 <= lr + 1e-12))
        out["rhoS<=rho"] = bool(np.all(lS <= lr + 1e-12))
        out["passed"] = all(v if isinstance(v, bool) else all(v.values()) for v in out.values())
        return out

    def to_dict(self) -> dict:
        return {"p": self.p, "q": self.q, "gamma": self.gamma, "M": self.M, "T": self.T}


def source_weights(p: float = 3.0, q: float = 1.2, gamma: float = 2.9, M: float = 1.0, T: float = 1.0) -> SourceWeights:
    return SourceWeights(p, q, gamma, M, T)


def log_weighted_norm(grid: TimeGrid, node_coeffs: np.ndarray, log_weight) -> float:
    """log of (int_0^T ||c(t)||^2_{L^2} / weight(t)^2 dt)^(1/2) from node samples (steps, 4, K)."""
    w = grid.node_weights
    sq = 0.5 * np.sum(node_coeffs**2, axis=-1)
    lw = log_weight(grid.node_times)
    with np.errstate(divide="ignore"):
        terms = np.log(w) + np.log(sq) - 2.0 * lw
    if np.all(terms == -np.inf):
        return -math.inf
    return 0.5 * float(logsumexp(terms))


def _log_add(*logs) -> float:
    logs = [l for l in logs if l != -math.inf]
    return float(logsumexp(logs)) if logs else -math.inf


@dataclass
class SourcePair:
    """Sources sampled at the step times of ``grid``; shapes (steps + 1, K)."""

    grid: TimeGrid
    S1: np.ndarray
    S2: np.ndarray
    _nodes: tuple | None = field(default=None, repr=False)

    @classmethod
    def zeros(cls, grid: TimeGrid, K: int) -> "SourcePair":
        z = np.zeros((grid.steps + 1, K))
        return cls(grid, z, z.copy())

    @classmethod
    def from_function(cls, grid: TimeGrid, f1, f2) -> "SourcePair":
        t = grid.times
        return cls(grid, np.asarray(f1(t), float), np.asarray(f2(t), float))

    @property
    def K(self) -> int:
        return self.S1.shape[1]

    def is_zero(self) -> bool:
        return not (np.any(self.S1) or np.any(self.S2))

    def node_values(self):
        if self._nodes is None:
            nt = self.grid.node_times.ravel()
            shp = (self.grid.steps, 4, self.K)
            vals = []
            for S in (self.S1, self.S2):
                vals.append(CubicSpline(self.grid.times, S, axis=0)(nt).reshape(shp) if np.any(S) else np.zeros(shp))
            self._nodes = tuple(vals)
        return self._nodes

    def node_forcing(self, grid: TimeGrid, K: int):
        if grid != self.grid:
            raise ConfigError("source pair lives on a different grid")
        n1, n2 = self.node_values()
        out = []
        for n in (n1, n2):
            f = np.zeros((grid.steps, 4, K))
            kk = min(K, n.shape[-1])
            f[..., :kk] = n[..., :kk]
            out.append(f)
        return tuple(out)

    def log_norm(self, weights: SourceWeights) -> float:
        """log ||(S1, S2)||_{S x S}."""
        n1, n2 = self.node_values()
        a = log_weighted_norm(self.grid, n1, weights.log_rhoS)
        b = log_weighted_norm(self.grid, n2, weights.log_rhoS)
        return 0.5 * _log_add(2 * a, 2 * b)

    def l2_norm(self) -> float:
        """Unweighted ||(S1, S2)||_{L^2(Q_T)}."""
        n1, n2 = self.node_values()
        sq = 0.5 * (np.sum(n1**2, axis=-1) + np.sum(n2**2, axis=-1))
        return math.sqrt(float(np.sum(sq * self.grid.node_weights)))

    def __sub__(self, other: "SourcePair") -> "SourcePair":
        return SourcePair(self.grid, self.S1 - other.S1, self.S2 - other.S2)

    def scaled(self, s: float) -> "SourcePair":
        return SourcePair(self.grid, s * self.S1, s * self.S2)


@dataclass
class SourceControlResult:
    hum: HUMResult
    trajectory: Trajectory
    log_norms: dict

    @property
    def terminal_norm(self) -> float:
        return self.hum.terminal_norm

    def to_dict(self) -> dict:
        d = self.hum.to_dict()
        d["log_weighted_norms"] = self.log_norms
        return d


def trajectory_log_norm(traj: Trajectory, log_weight) -> float:
    """log sup_{t < T} ||(y, z)(t)||_{L^2} / weight(t)."""
    t = traj.times[:-1]
    sq = 0.5 * (np.sum(traj.y[:-1] ** 2, axis=1) + np.sum(traj.z[:-1] ** 2, axis=1))
    with np.errstate(divide="ignore"):
        vals = 0.5 * np.log(sq) - log_weight(t)
    return float(np.max(vals))


def controlled_linear_with_sources(params: SystemParams, y0: SpectralState, z0: SpectralState,
                                   sources: SourcePair | None, weights: SourceWeights, T: float,
                                   hum_config: HUMConfig) -> SourceControlResult:
    """HUM control of the linear system driven by the given sources."""
    if sources is not None and sources.is_zero():
        sources = None
    res = hum_solve(params, y0, z0, T, hum_config, sources=sources)
    grid = TimeGrid(T, hum_config.steps)
    lu = log_weighted_norm(grid, res.u.node_coefficients(grid), weights.log_rho0)
    lv = log_weighted_norm(grid, res.v.node_coefficients(grid), weights.log_rho0) if res.v is not None else -math.inf
    norms = {
        "controls_V": 0.5 * _log_add(2 * lu, 2 * lv),
        "state_Y_sup": trajectory_log_norm(res.trajectory, weights.log_rho0),
        "state_rho_sup": trajectory_log_norm(res.trajectory, weights.log_rho),
        "sources_S": sources.log_norm(weights) if sources is not None else -math.inf,
    }
    return SourceControlResult(res, res.trajectory, norms)


@dataclass
class FixedPointContext:
    params: SystemParams
    y0: SpectralState
    z0: SpectralState
    weights: SourceWeights
    T: float
    hum_config: HUMConfig


def nonlinear_source_terms(params: SystemParams, traj: Trajectory) -> SourcePair:
    F1, F2 = nonlinear_terms(params, traj.y, traj.z)
    return SourcePair(traj.grid, F1, F2)


def source_map_N(sources: SourcePair | None, ctx: FixedPointContext, return_result: bool = False):
    """N(S): nonlinear terms evaluated along the controlled linear trajectory with sources S."""
    res = controlled_linear_with_sources(ctx.params, ctx.y0, ctx.z0, sources, ctx.weights, ctx.T, ctx.hum_config)
    out = nonlinear_source_terms(ctx.params, res.trajectory)
    return (out, res) if return_result else out


@dataclass
class FixedPointResult:
    u: ControlSignal | None
    v: ControlSignal | None
    trajectory: Trajectory | None
    log: list
    converged: bool
    iterations: int
    certification: dict

    def to_dict(self) -> dict:
        return {"converged": self.converged, "iterations": self.iterations,
                "certification": self.certification, "log": self.log}


def _pair_norm(y: SpectralState, z: SpectralState) -> float:
    return math.hypot(y.l2_norm(), z.l2_norm())


def fixed_point_control(params: SystemParams, y0: SpectralState, z0: SpectralState, delta: float,
                        weights: SourceWeights, maxiter: int = 15, tol: float = 1e-8,
                        hum_config: HUMConfig | None = None, cert_tol: float = 1e-4,
                        log_path=None) -> FixedPointResult:
    """Picard iteration S <- N(S) from S = 0, then certification on the nonlinear simulator.

    Distances are measured in the weighted source norm (in log form).  Two
    consecutive ratios >= 1 raise ``DivergenceError``.
    """
    hum_config = hum_config or HUMConfig()
    K = hum_config.K
    y0, z0 = y0.resized(K), z0.resized(K)
    size = math.hypot(y0.h1_proxy(), z0.h1_proxy())
    if size > delta * (1.0 + 1e-12):
        raise ConfigError(f"initial data H1 proxy {size:.3e} exceeds delta = {delta:.3e}")
    grid = TimeGrid(weights.T, hum_config.steps)
    ctx = FixedPointContext(params, y0, z0, weights, weights.T, hum_config)
    records: list[dict] = []
    fh = open(log_path, "w") if log_path else None

    def emit(rec):
        records.append(rec)
        if fh:
            fh.write(json.dumps(rec) + "\n")

    try:
        if size == 0.0:
            emit({"iteration": 0, "log_source_norm": -math.inf, "source_l2": 0.0, "ratio": None,
                  "control_cost": 0.0, "terminal_norm": 0.0})
            zero_traj = simulate_nonlinear(params, y0, z0, None, None, weights.T, hum_config.steps, K)
            return FixedPointResult(None, None, zero_traj, records, True, 0,
                                    {"terminal_norm": 0.0, "certified": True, "tol": cert_tol})
        S = SourcePair.zeros(grid, K)
        prev_log_dist = None
        bad = 0
        converged = False
        res = None
        for it in range(1, maxiter + 1):
            try:
                S_new, res = source_map_N(S, ctx, return_result=True)
            except (ConvergenceError, NotSPDError) as exc:
                raise DivergenceError(f"linear solve failed at iteration {it}: {exc}", records) from exc
            if not (np.all(np.isfinite(S_new.S1)) and np.all(np.isfinite(S_new.S2))):
                raise DivergenceError(f"non-finite sources at iteration {it}", records)
            log_dist = (S_new - S).log_norm(weights)
            log_new = S_new.log_norm(weights)
            ratio = None if prev_log_dist in (None, -math.inf) or log_dist == -math.inf else math.exp(log_dist - prev_log_dist)
            rel = math.exp(log_dist - log_new) if log_new > -math.inf else 0.0
            emit({"iteration": it, "log_source_norm": log_new, "source_l2": S_new.l2_norm(),
                  "log_distance": log_dist, "relative_distance": rel, "ratio": ratio,
                  "control_cost": res.hum.cost, "terminal_norm": res.terminal_norm})
            S = S_new
            if rel <= tol:
                converged = True
                break
            if ratio is not None and ratio >= 1.0:
                bad += 1
                if bad >= 2:
                    raise DivergenceError(f"contraction lost at iteration {it} (ratio {ratio:.3g})", records)
            else:
                bad = 0
            prev_log_dist = log_dist
        if not converged:
            raise ConvergenceError(f"no convergence in {maxiter} iterations", records)
        final = controlled_linear_with_sources(params, y0, z0, S, weights, weights.T, hum_config)
        u, v = final.hum.u, final.hum.v
        traj = simulate_nonlinear(params, y0, z0, u, v, weights.T, hum_config.steps, K)
        yT, zT = traj.terminal()
        term = _pair_norm(yT, zT)
        cert = {"terminal_norm": term, "relative_terminal_norm": term / _pair_norm(y0, z0),
                "linear_terminal_norm": final.terminal_norm, "certified": bool(term <= cert_tol), "tol": cert_tol,
                "note": "minimal-norm controls realized only approximately by penalized HUM"}
        if not cert["certified"]:
            raise ConvergenceError(f"certification failed: terminal norm {term:.3e} > {cert_tol:.1e}", records)
        return FixedPointResult(u, v, traj, records, True, len(records), cert)
    finally:
        if fh:
            fh.close()
