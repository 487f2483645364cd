"""Operator theory of the simplified adjoint operator in the sine basis.

The truncated adjoint is the 2K x 2K block matrix

    A* = [[diag(lambda), -(a I + 2 b m m^T)],
          [0,            diag(lambda)]]

acting on (zeta, eta).  Every lambda_k is a double eigenvalue; when the
coupling at mode k is nonzero it carries a Jordan chain (Phi_k, tilde Phi_k)
with (A* - lambda_k) tilde Phi_k = Phi_k.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateModeError, ZeroCouplingError
from .spectral_core import PI, SpectralState, Window, cospi, eigenvalue, eigenvalues, mean_mass, mean_masses, overlap_matrix, sinpi

DEGENERACY_RTOL = 1e-9


def assemble_adjoint_operator(params, K: int) -> np.ndarray:
    """Galerkin matrix of A* on (zeta_1..zeta_K, eta_1..eta_K)."""
    if K < 1:
        raise ConfigError("K must be >= 1")
    lam = eigenvalues(K)
    m = mean_masses(K)
    A = np.zeros((2 * K, 2 * K))
    A[:K, :K] = np.diag(lam)
    A[K:, K:] = np.diag(lam)
    A[:K, K:] = -(params.a * np.eye(K) + 2.0 * params.b * np.outer(m, m))
    return A


def observation_norm(k: int, window: Window | None) -> float:
    """||1_omega sin(k pi .)||^2 = sum over intervals of int sin^2(k pi x)."""
    ivs = ((0.0, 1.0),) if window is None else window.intervals
    total = 0.0
    for r1, r2 in ivs:
        total += 0.5 * (r2 - r1) - (sinpi(2 * k * r2) - sinpi(2 * k * r1)) / (4.0 * k * PI)
    return float(total)


def odd_denominator(k: int, a: float, b: float) -> float:
    return a * eigenvalue(k) + 8.0 * b


def is_degenerate(k: int, a: float, b: float, rtol: float = DEGENERACY_RTOL) -> bool:
    if k % 2 == 0:
        return a == 0.0
    lam = eigenvalue(k)
    return abs(a * lam + 8.0 * b) <= rtol * (abs(a) * lam + 8.0 * abs(b))


def _window_moment_template(k: int, window: Window) -> float:
    """int_omega [(2x - 1) cos(k pi x) + 1] sin(k pi x) dx."""
    w = 2.0 * k * PI

    def prim(x):
        # antiderivative of (2x - 1) sin(w x) / 2, plus that of sin(k pi x)
        p = 2.0 * (sinpi(2 * k * x) / w**2 - x * cospi(2 * k * x) / w) + cospi(2 * k * x) / w
        return 0.5 * p - cospi(k * x) / (k * PI)

    return float(sum(prim(r2) - prim(r1) for r1, r2 in window.intervals))


@dataclass
class GeneralizedEigenpair:
    """Jordan pair at mode k.

    ``tilde_phi`` evaluates (zeta, eta); for odd k,
    zeta(x) = C (2x - 1) cos(k pi x) + B sin(k pi x) + C with C = 2b / (k pi D),
    D = a k^2 pi^2 + 8 b, and eta = A sin(k pi x).
    """

    k: int
    a: float
    b: float
    A: float
    B: float
    window: Window | None
    degenerate: bool = False
    eigenvalue: float = field(init=False)

    def __post_init__(self):
        self.eigenvalue = eigenvalue(self.k)

    @property
    def C(self) -> float:
        if self.k % 2 == 0:
            return 0.0
        return 2.0 * self.b / (self.k * PI * odd_denominator(self.k, self.a, self.b))

    def phi(self, x):
        x = np.asarray(x, float)
        return np.sin(self.k * PI * x), np.zeros_like(x)

    def zeta(self, x):
        x = np.asarray(x, float)
        s, c = np.sin(self.k * PI * x), np.cos(self.k * PI * x)
        return self.C * ((2 * x - 1) * c + 1.0) + self.B * s

    def eta(self, x):
        return self.A * np.sin(self.k * PI * np.asarray(x, float))

    def tilde_phi(self, x):
        return self.zeta(x), self.eta(x)

    def zeta_coefficients(self, K: int) -> np.ndarray:
        """Exact sine coefficients of zeta on modes 1..K."""
        out = np.zeros(K)
        if self.k % 2 == 0:
            if self.k <= K:
                out[self.k - 1] = self.B
            return out
        lam = eigenvalues(K)
        m = mean_masses(K)
        mk = mean_mass(self.k)
        lk = self.eigenvalue
        with np.errstate(divide="ignore", invalid="ignore"):
            out = 2.0 * self.b * self.A * mk * m / (lam - lk)
        if self.k <= K:
            out[self.k - 1] = 6.0 * self.b / (lk * odd_denominator(self.k, self.a, self.b)) + self.B
        return out

    def eta_coefficients(self, K: int) -> np.ndarray:
        out = np.zeros(K)
        if self.k <= K:
            out[self.k - 1] = self.A
        return out

    def tilde_coefficients(self, K: int) -> np.ndarray:
        return np.concatenate([self.zeta_coefficients(K), self.eta_coefficients(K)])

    def residual(self, x=None) -> float:
        """Max collocation residual of -zeta'' - lambda zeta - a eta - b int eta - phi_k."""
        if x is None:
            x = np.linspace(0.0, 1.0, 257)
        x = np.asarray(x, float)
        k, lam = self.k, self.eigenvalue
        s, c = np.sin(k * PI * x), np.cos(k * PI * x)
        zpp = self.C * (-4 * k * PI * s - (2 * x - 1) * lam * c) - self.B * lam * s
        z = self.zeta(x)
        r = -zpp - lam * z - self.a * self.eta(x) - self.b * self.A * mean_mass(k) - s
        return float(np.max(np.abs(r)))

    def to_dict(self) -> dict:
        return {"k": self.k, "eigenvalue": self.eigenvalue, "A": self.A, "B": self.B,
                "C": self.C, "degenerate": self.degenerate}


def generalized_eigenpair(k: int, a: float, b: float, window: Window | None,
                          tol: float = DEGENERACY_RTOL) -> GeneralizedEigenpair:
    if k < 1:
        raise ConfigError("mode index must be >= 1")
    if a == 0.0:
        raise ZeroCouplingError("a = 0: the generalized eigenvector construction does not apply")
    if is_degenerate(k, a, b, tol):
        raise DegenerateModeError(f"degenerate mode k={k}: a k^2 pi^2 + 8b = 0", modes=[k])
    lam = eigenvalue(k)
    if k % 2 == 0:
        return GeneralizedEigenpair(k, a, b, -1.0 / a, 0.0, window)
    A = -1.0 / (a + 8.0 * b / lam)
    C = 2.0 * b / (k * PI * odd_denominator(k, a, b))
    win = window if window is not None else Window.of(0.0, 1.0)
    B = -C * _window_moment_template(k, win) / observation_norm(k, win)
    return GeneralizedEigenpair(k, a, b, A, B, window)


def generalized_eigenpairs(K: int, a: float, b: float, window: Window | None) -> list[GeneralizedEigenpair]:
    bad = check_assumption(a, b, K)
    if not bad["holds"]:
        raise DegenerateModeError(bad["verdict"], modes=bad["offending_modes"])
    return [generalized_eigenpair(k, a, b, window) for k in range(1, K + 1)]


def check_assumption(a: float, b: float, Kmax: int, tol: float = DEGENERACY_RTOL) -> dict:
    """Is any odd-mode denominator a k^2 pi^2 + 8b zero for k <= Kmax?"""
    if a == 0.0:
        raise ZeroCouplingError("check_assumption requires a != 0")
    bad = [k for k in range(1, Kmax + 1, 2) if is_degenerate(k, a, b, tol)]
    verdict = "holds" if not bad else "violated at " + ", ".join(f"k={k}" for k in bad)
    return {"a": a, "b": b, "Kmax": Kmax, "ratio": -8.0 * b / (a * PI**2),
            "holds": not bad, "offending_modes": bad, "verdict": verdict}


@dataclass
class HautusEntry:
    mode: int
    eigenvalue: float
    multiplicity: int
    kernel_dim: int
    min_observation: float
    verdict: str

    def to_dict(self):
        return dict(self.__dict__)


def hautus_check(params, K: int, window: Window | None = None, tol: float = 1e-8,
                 rank_rtol: float = 1e-8) -> list[HautusEntry]:
    """Per-eigenvalue minimum of ||1_omega zeta|| over unit kernel vectors of A* - mu.

    This is a finite-section necessary check, not a proof of approximate
    controllability.
    """
    window = params.window if window is None else window
    A = assemble_adjoint_operator(params, K)
    try:
        ev = np.linalg.eigvals(A).real
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise ConfigError(f"eigen-decomposition failed: {exc}") from exc
    ev.sort()
    scale = max(1.0, float(np.linalg.norm(A, 2)))
    clusters: list[list[float]] = []
    for e in ev:
        if clusters and abs(e - clusters[-1][-1]) <= 1e-6 * scale:
            clusters[-1].append(e)
        else:
            clusters.append([e])
    O = overlap_matrix(K, window)
    out = []
    for cl in clusters:
        mu = float(np.mean(cl))
        _, s, Vh = np.linalg.svd(A - mu * np.eye(2 * K))
        null = Vh[s <= rank_rtol * scale].T
        # unit L^2 norm means coefficient norm sqrt(2)
        V = null * math.sqrt(2.0)
        Vz = V[:K]
        G = Vz.T @ O @ Vz
        min_obs = float(np.sqrt(max(np.linalg.eigvalsh(0.5 * (G + G.T)).min(), 0.0))) if null.size else math.inf
        mode = int(round(math.sqrt(mu) / PI))
        out.append(HautusEntry(mode, mu, len(cl), null.shape[1], min_obs,
                               "pass" if min_obs > tol else "fail"))
    return out


def hautus_report(entries: list[HautusEntry]) -> dict:
    return {
        "entries": [e.to_dict() for e in entries],
        "failed_modes": [e.mode for e in entries if e.verdict == "fail"],
        "disclaimer": "finite-dimensional necessary check on the truncated operator, not a proof",
    }


def spectral_gap(K: int, odd_only: bool = False) -> dict:
    """min |lambda_k - lambda_n| / |k^2 - n^2| over distinct k, n <= K."""
    if K < 2:
        raise ConfigError("spectral_gap needs K >= 2")
    ks = np.arange(1, K + 1, 2 if odd_only else 1)
    if ks.size < 2:
        raise ConfigError("need at least two modes")
    lam = (ks * PI) ** 2
    i, j = np.triu_indices(ks.size, 1)
    ratios = np.abs(lam[i] - lam[j]) / np.abs(ks[i] ** 2 - ks[j] ** 2)
    gap = float(ratios.min())
    return {"K": K, "odd_only": odd_only, "gap": gap, "equals_pi2": bool(np.isclose(gap, PI**2, rtol=1e-14, atol=0))}


def change_of_basis(pairs: list[GeneralizedEigenpair], K: int) -> np.ndarray:
    """Columns (Phi_1, tilde Phi_1, ..., Phi_K, tilde Phi_K) in coefficients."""
    cols = []
    for p in pairs:
        phi = np.zeros(2 * K)
        phi[p.k - 1] = 1.0
        cols += [phi, p.tilde_coefficients(K)]
    return np.array(cols).T


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
