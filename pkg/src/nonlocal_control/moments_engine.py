"""Moments-method null controls for the simplified system.

The exponential family is ``e_{k,j}(t) = (T - t)^j exp(-lambda_k (T - t))``.
Its Gram matrix is assembled from the exact moments

    int_0^T s^n exp(-mu s) ds = gammainc(n + 1, 0, mu T) / mu^(n + 1)

and inverted in mpmath; the biorthogonal functions are the rows of the
inverse applied to the family.  Everything that touches these coefficients
stays in extended precision until the final float conversion, because the
Gram matrices are condition ~1e20 already at K = 8.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import mpmath
import numpy as np

from .errors import ConfigError, IllConditionedError, ZeroCouplingError
from .signals import ControlSignal, TimeGrid
from .spectral_analysis import GeneralizedEigenpair, generalized_eigenpairs, observation_norm
from .spectral_core import PI, SpectralState, Window, cospi, eigenvalues, mean_masses, overlap_matrix, sinpi

DPS = 60


def _mp(x):
    return mpmath.mpf(float(x)) if not isinstance(x, mpmath.mpf) else x


def exp_moment(n: int, mu, T):
    """int_0^T s^n exp(-mu s) ds in mpmath."""
    mu, T = _mp(mu), _mp(T)
    if mu == 0:
        return T ** (n + 1) / (n + 1)
    return mpmath.gammainc(n + 1, 0, mu * T) / mu ** (n + 1)


def _labels(K: int, jmax: int):
    return [(k, j) for k in range(K) for j in range(jmax + 1)]


def _gram_mp(lambdas, T, jmax, lambdas_right=None, jmax_right=None):
    left = [_mp(l) for l in lambdas]
    right = left if lambdas_right is None else [_mp(l) for l in lambdas_right]
    jr = jmax if jmax_right is None else jmax_right
    rows, cols = _labels(len(left), jmax), _labels(len(right), jr)
    G = mpmath.matrix(len(rows), len(cols))
    for a, (k, i) in enumerate(rows):
        for b, (l, j) in enumerate(cols):
            G[a, b] = exp_moment(i + j, left[k] + right[l], T)
    return G


def gram_matrix(lambdas, T: float, jmax: int = 0, as_float: bool = True):
    """Gram matrix of the exponential family; ordering is (k, j) with j fastest."""
    lambdas = np.asarray(lambdas, float)
    if jmax not in (0, 1):
        raise ConfigError("jmax must be 0 or 1")
    if not T > 0:
        raise ConfigError("T must be positive")
    if np.any(lambdas <= 0):
        raise ConfigError("eigenvalues must be positive")
    if np.unique(lambdas).size != lambdas.size:
        raise ConfigError("duplicate eigenvalues in the exponential family")
    with mpmath.workdps(DPS):
        G = _gram_mp(lambdas, T, jmax)
        if not as_float:
            return G
        return np.array(G.tolist(), dtype=float)


@dataclass
class BiorthogonalFamily:
    """q_{k,j} = sum_{l,i} X[(k,j), (l,i)] e_{l,i}, with X stored in mpmath."""

    T: float
    lambdas: np.ndarray
    jmax: int
    X: mpmath.matrix = field(repr=False)
    condition_number: float
    residual: float
    regularization: float = 0.0
    norms: np.ndarray = field(default=None, repr=False)

    @property
    def K(self) -> int:
        return len(self.lambdas)

    def index(self, k: int, j: int) -> int:
        """Row of q_{k,j} (k is 1-based within the family)."""
        return (k - 1) * (self.jmax + 1) + j

    def norm(self, k: int, j: int) -> float:
        return float(self.norms[k - 1, j])

    def pairings(self, lambdas=None, jmax=None) -> np.ndarray:
        """<q_{k,j}, e_{l,i}> against another exponential family (default: itself)."""
        lam = self.lambdas if lambdas is None else np.asarray(lambdas, float)
        jm = self.jmax if jmax is None else jmax
        with mpmath.workdps(DPS):
            G = _gram_mp(self.lambdas, self.T, self.jmax, lam, jm)
            P = self.X * G
            return np.array(P.tolist(), dtype=float)

    def evaluate(self, coeffs: mpmath.matrix, times) -> np.ndarray:
        """Evaluate sum_r coeffs[r, c] e_c(t) for each row r at ``times``; returns (n, rows)."""
        times = np.atleast_1d(np.asarray(times, float))
        rows = coeffs.rows
        out = np.empty((times.size, rows))
        with mpmath.workdps(DPS):
            lam = [_mp(l) for l in self.lambdas]
            T = _mp(self.T)
            J = self.jmax + 1
            for n, t in enumerate(times):
                s = T - _mp(t)
                basis = []
                for l in lam:
                    e = mpmath.exp(-l * s)
                    p = e
                    for _ in range(J):
                        basis.append(p)
                        p = p * s
                for r in range(rows):
                    acc = mpmath.mpf(0)
                    for c, bv in enumerate(basis):
                        acc += coeffs[r, c] * bv
                    out[n, r] = float(acc)
        return out

    def q_values(self, k: int, j: int, times) -> np.ndarray:
        with mpmath.workdps(DPS):
            row = self.X[self.index(k, j), :]
        return self.evaluate(row, times)[:, 0]

    def growth_fit(self, j: int = 0) -> dict:
        """Least-squares slope of log ||q_{k,j}|| against lambda_k."""
        y = np.log(self.norms[:, j])
        slope, intercept = np.polyfit(self.lambdas, y, 1) if self.K > 1 else (0.0, float(y[0]))
        return {"j": j, "slope": float(slope), "intercept": float(intercept),
                "norms": self.norms[:, j].tolist(), "bound": self.T / 2 + 0.1,
                "within_bound": bool(slope <= self.T / 2 + 0.1)}

    def metadata(self) -> dict:
        return {"T": self.T, "K": self.K, "jmax": self.jmax, "lambdas": self.lambdas.tolist(),
                "condition_number": self.condition_number, "residual": self.residual,
                "regularization": self.regularization, "norms": self.norms.tolist()}


def biorthogonal_family(lambdas, T: float, jmax: int = 0, regularization: float = 0.0,
                        max_condition: float | None = None) -> BiorthogonalFamily:
    """Solve G X = I in extended precision.

    Raises ``IllConditionedError`` if the condition number leaves fewer than
    about 15 correct digits at the working precision.
    """
    lambdas = np.asarray(lambdas, float)
    if regularization < 0:
        raise ConfigError("regularization must be >= 0")
    G = gram_matrix(lambdas, T, jmax, as_float=False)
    limit = max_condition if max_condition is not None else 10.0 ** (DPS - 15)
    with mpmath.workdps(DPS):
        n = G.rows
        Greg = G + mpmath.eye(n) * regularization if regularization else G
        X = mpmath.inverse(Greg)
        cond = mpmath.mnorm(G, 1) * mpmath.mnorm(X, 1)
        if not mpmath.isfinite(cond) or cond > limit:
            raise IllConditionedError(f"Gram condition number {mpmath.nstr(cond, 5)} exceeds {limit:.1e}")
        R = X * G - mpmath.eye(n)
        residual = max(abs(R[i, j]) for i in range(n) for j in range(n))
        Q = X * G * X.T
        norms = np.array([math.sqrt(max(float(Q[i, i]), 0.0)) for i in range(n)]).reshape(len(lambdas), jmax + 1)
    return BiorthogonalFamily(float(T), lambdas, jmax, X, float(cond), float(residual), float(regularization), norms)


def moments_rhs(y0: SpectralState, z0: SpectralState, pairs: list[GeneralizedEigenpair], T: float) -> np.ndarray:
    """(K, 2) targets: column 0 pairs with Phi_k, column 1 with tilde Phi_k."""
    if any(p.degenerate for p in pairs):
        raise ConfigError("degenerate generalized eigenpair in the list")
    K0 = max(y0.K, z0.K)
    y = y0.resized(K0).coeffs
    z = z0.resized(K0).coeffs
    out = np.zeros((len(pairs), 2))
    for r, p in enumerate(pairs):
        decay = math.exp(-T * p.eigenvalue)
        yk = y[p.k - 1] if p.k <= K0 else 0.0
        zk = z[p.k - 1] if p.k <= K0 else 0.0
        y_zeta = 0.5 * float(y @ p.zeta_coefficients(K0))
        out[r, 0] = -decay * 0.5 * yk
        out[r, 1] = -decay * (y_zeta - T * 0.5 * yk + p.A * 0.5 * zk)
    return out


class MomentsControl(ControlSignal):
    """u = 1_omega sum_k g_k(t) sin(k pi x), g_k = sum c_{k,(l,i)} e_{l,i}."""

    def __init__(self, window: Window, family: BiorthogonalFamily, coeffs: mpmath.matrix,
                 rhs: np.ndarray, pairs: list[GeneralizedEigenpair]):
        self.window = window
        self.family = family
        self.coeffs = coeffs
        self.rhs = rhs
        self.pairs = pairs
        self.L = coeffs.rows
        self._cache: dict = {}

    @property
    def T(self):
        return self.family.T

    def coefficients(self, times):
        return self.family.evaluate(self.coeffs, times)

    def node_coefficients(self, grid: TimeGrid):
        if grid not in self._cache:
            self._cache[grid] = super().node_coefficients(grid)
        return self._cache[grid]

    def is_zero(self):
        return not np.any(self.rhs)

    def exact_l2_norm(self) -> float:
        """||u||_{L^2((0,T) x omega)} from the closed-form Gram matrix."""
        fam = self.family
        O = overlap_matrix(self.L, self.window)
        with mpmath.workdps(DPS):
            G = _gram_mp(fam.lambdas, fam.T, fam.jmax)
            H = self.coeffs * G * self.coeffs.T
            total = mpmath.fsum(O[k, l] * H[k, l] for k in range(self.L) for l in range(self.L))
        return math.sqrt(max(float(total), 0.0))

    def write_csv(self, path, times) -> None:
        vals = self.coefficients(times)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "mode", "g"])
            for n, t in enumerate(np.atleast_1d(times)):
                for k in range(self.L):
                    wr.writerow([f"{t:.17g}", k + 1, f"{vals[n, k]:.17g}"])

    def metadata(self) -> dict:
        return {"K": self.L, "T": self.T, "window": self.window.to_list(),
                "family": self.family.metadata(), "rhs": self.rhs.tolist(),
                "eigenpairs": [p.to_dict() for p in self.pairs]}


def synthesize_control(y0: SpectralState, z0: SpectralState, params, K: int, T: float,
                       family: BiorthogonalFamily | None = None, tol: float = 1e-6) -> MomentsControl:
    """g_k = (r1_k q_{k,0} - r2_k q_{k,1}) / ||1_omega phi_k||^2 on modes 1..K."""
    if params.a == 0.0:
        raise ZeroCouplingError("moments synthesis requires a != 0")
    window = params.window
    pairs = generalized_eigenpairs(K, params.a, params.b, window)
    lam = eigenvalues(K)
    if family is None:
        family = biorthogonal_family(lam, T, jmax=1)
    if family.K != K or family.jmax != 1 or not np.allclose(family.lambdas, lam) or family.T != T:
        raise ConfigError("family does not match (K, T, jmax=1)")
    if family.residual > tol:
        raise IllConditionedError(f"family residual {family.residual:.2e} exceeds {tol:.1e}")
    rhs = moments_rhs(y0, z0, pairs, T)
    with mpmath.workdps(DPS):
        C = mpmath.matrix(K, family.X.cols)
        for k in range(1, K + 1):
            obs = _mp(observation_norm(k, window))
            r1, r2 = _mp(rhs[k - 1, 0]), _mp(rhs[k - 1, 1])
            i0, i1 = family.index(k, 0), family.index(k, 1)
            for c in range(family.X.cols):
                C[k - 1, c] = (r1 * family.X[i0, c] - r2 * family.X[i1, c]) / obs
    return MomentsControl(window, family, C, rhs, pairs)


def window_zeta_integrals(L: int, pair: GeneralizedEigenpair, window: Window) -> np.ndarray:
    """W_l = int_omega sin(l pi x) zeta_k(x) dx for l = 1..L, in closed form."""
    k = pair.k
    out = pair.B * overlap_matrix(L, window)[:, k - 1] if k <= L else pair.B * overlap_matrix(max(L, k), window)[:L, k - 1]
    if pair.C == 0.0:
        return out

    def lin_sin(w, x):
        # antiderivative of (2x - 1) sin(w pi x)
        if w == 0:
            return 0.0 * x
        om = w * PI
        return 2.0 * (sinpi(w * x) / om**2 - x * cospi(w * x) / om) + cospi(w * x) / om

    extra = np.zeros(L)
    for l in range(1, L + 1):
        for r1, r2 in window.intervals:
            # sin(l pi x) cos(k pi x) = (sin((l + k) pi x) + sin((l - k) pi x)) / 2
            part = 0.5 * (lin_sin(l + k, r2) - lin_sin(l + k, r1) + lin_sin(l - k, r2) - lin_sin(l - k, r1))
            part += -(cospi(l * r2) - cospi(l * r1)) / (l * PI)
            extra[l - 1] += float(part)
    return out + pair.C * extra


def verify_moments(control: MomentsControl | None, lambdas, pairs: list[GeneralizedEigenpair],
                   rhs: np.ndarray, T: float, tol: float = 1e-8, window: Window | None = None) -> dict:
    """Residuals of both moment identities using closed-form time integrals.

    For each targeted pair k the identities are
        sum_l O[l,k] <g_l, e_{k,0}> = r1_k
        sum_l (W[l,k] <g_l, e_{k,0}> - O[l,k] <g_l, e_{k,1}>) = r2_k.
    Pairs beyond the control's modes (untargeted) are reported as well.
    """
    lambdas = np.asarray(lambdas, float)
    K = len(pairs)
    res = np.zeros((K, 2))
    if control is None:
        res = np.abs(np.asarray(rhs, float))
        return {"max_residual": float(res.max(initial=0.0)), "residuals": res.tolist(),
                "tol": tol, "passed": bool(res.max(initial=0.0) <= tol)}
    window = control.window if window is None else window
    fam = control.family
    L = control.L
    Lmax = max(L, max(p.k for p in pairs))
    O = overlap_matrix(Lmax, window)[:L]
    with mpmath.workdps(DPS):
        E = _gram_mp(fam.lambdas, T, fam.jmax, lambdas, 1)
        P = control.coeffs * E  # P[l, (k, i)] = <g_l, e_{k,i}>
        for r, p in enumerate(pairs):
            idx = np.where(np.isclose(lambdas, p.eigenvalue, rtol=1e-14))[0]
            if idx.size == 0:
                raise ConfigError(f"mode {p.k} missing from lambdas")
            c0, c1 = 2 * idx[0], 2 * idx[0] + 1
            W = window_zeta_integrals(L, p, window)
            s1 = mpmath.fsum(_mp(O[l, p.k - 1]) * P[l, c0] for l in range(L))
            s2 = mpmath.fsum(_mp(W[l]) * P[l, c0] - _mp(O[l, p.k - 1]) * P[l, c1] for l in range(L))
            res[r, 0] = abs(float(s1 - _mp(rhs[r, 0])))
            res[r, 1] = abs(float(s2 - _mp(rhs[r, 1])))
    mx = float(res.max(initial=0.0))
    return {"max_residual": mx, "residuals": res.tolist(), "modes": [p.k for p in pairs],
            "tol": tol, "passed": bool(mx <= tol)}


def pair_with_family(family: BiorthogonalFamily, grid: TimeGrid, node_values: np.ndarray) -> np.ndarray:
    """int_0^T q_{k,0}(t) f(t) dt for every k, with f sampled at the grid nodes."""
    with mpmath.workdps(DPS):
        rows = mpmath.matrix([[family.X[family.index(k, 0), c] for c in range(family.X.cols)]
                              for k in range(1, family.K + 1)])
    q = family.evaluate(rows, grid.node_times.ravel()).reshape(grid.steps, 4, family.K)
    return grid.integrate(q * np.asarray(node_values)[:, :, None])


def write_metadata(control: MomentsControl, path, extra: dict | None = None) -> None:
    data = control.metadata()
    if extra:
        data.update(extra)
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
