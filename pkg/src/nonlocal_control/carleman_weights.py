"""Carleman weight family on (0, T) x [0, 1] and sampled checks of its algebra.

Exponentials like exp(-s alpha) underflow long before the inequalities become
interesting, so every comparison between them is made on the exponents.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .spectral_core import Window

LAMBDA_MIN = 2.0 * math.log(2.0)


class QuinticBump:
    """nu(x) = P(x / r_c) left of r_c and P((1 - x) / (1 - r_c)) right of it, P(s) = 1 - (1 - s)^5."""

    def __init__(self, window: Window):
        if len(window.intervals) != 1:
            raise ConfigError("the explicit weight construction needs a single-interval window")
        (r1, r2), = window.intervals
        if r1 <= 0.0 or r2 >= 1.0:
            raise ConfigError("window must lie strictly inside (0, 1)")
        self.window = window
        self.rc = 0.5 * (r1 + r2)

    def __call__(self, x):
        x = np.asarray(x, float)
        rc = self.rc
        s = np.where(x <= rc, x / rc, (1.0 - x) / (1.0 - rc))
        return 1.0 - (1.0 - np.clip(s, 0.0, 1.0)) ** 5

    def derivative(self, x):
        x = np.asarray(x, float)
        rc = self.rc
        left = 5.0 * (1.0 - x / rc) ** 4 / rc
        right = -5.0 * (1.0 - (1.0 - x) / (1.0 - rc)) ** 4 / (1.0 - rc)
        return np.where(x <= rc, left, right)

    def c_hat(self, n: int = 1024) -> float:
        """min |nu'| over the sampled complement of omega."""
        x = np.linspace(0.0, 1.0, n)
        out = self.window.indicator(x) == 0
        return float(np.min(np.abs(self.derivative(x[out]))))


def weight_nu(x, window: Window):
    return QuinticBump(window)(x)


@dataclass
class WeightParams:
    lam: float
    s: float
    T: float
    window: Window

    def __post_init__(self):
        if self.lam < LAMBDA_MIN - 1e-15:
            raise ConfigError(f"lambda must be >= 2 ln 2, got {self.lam}")
        if not self.s > 0 or not self.T > 0:
            raise ConfigError("s and T must be positive")
        self.nu = QuinticBump(self.window)


def _g(t, T):
    t = np.asarray(t, float)
    if np.any((t <= 0) | (t >= T)):
        raise ConfigError("weights are only defined for t in (0, T)")
    return 1.0 / (t * (T - t))


def weights_eval(t, x, wp: WeightParams) -> dict:
    """All six weights at (t, x); arrays broadcast."""
    g = _g(t, wp.T)
    lam = wp.lam
    e_nu = np.exp(lam * (2.0 + wp.nu(x)))
    e2, e3, e4 = math.exp(2 * lam), math.exp(3 * lam), math.exp(4 * lam)
    return {
        "alpha": (e4 - e_nu) * g,
        "xi": e_nu * g,
        "alpha_star": (e4 - e3) * g,
        "alpha_hat": (e4 - e2) * g,
        "xi_hat": e2 * g,
        "xi_star": e3 * g,
    }


def hat_time_derivatives(t, wp: WeightParams) -> dict:
    """Closed-form first and second time derivatives of xi_hat and alpha_hat."""
    g = _g(t, wp.T)
    T = wp.T
    d = T - 2.0 * np.asarray(t, float)
    g1 = -d * g**2
    g2 = 2.0 * g**2 + 2.0 * d**2 * g**3
    e2, e4 = math.exp(2 * wp.lam), math.exp(4 * wp.lam)
    return {"xi_hat_1": e2 * g1, "xi_hat_2": e2 * g2,
            "alpha_hat_1": (e4 - e2) * g1, "alpha_hat_2": (e4 - e2) * g2}


def max_min_constant(lam: float, r: float) -> float:
    """c0 with r alpha* - (r - 1) alpha_hat = c0 / (t (T - t)); independent of t."""
    return math.exp(3 * lam) * (math.exp(lam) - r) + (r - 1.0) * math.exp(2 * lam)


def check_weight_inequalities(wp: WeightParams, nt: int = 64, nx: int = 64, r: float = 2.0,
                              rtol: float = 1e-12) -> dict:
    """Sampled checks of the weight relations on an interior time grid times [0, 1]."""
    if r <= 1:
        raise ConfigError("r must be > 1")
    T = wp.T
    t = (np.arange(nt) + 0.5) * T / nt
    x = np.linspace(0.0, 1.0, nx)
    tt, xx = np.meshgrid(t, x, indexing="ij")
    W = weights_eval(tt, xx, wp)
    checks = []

    def add(name, viol, constant=None, extra=None):
        bad = viol > 0
        entry = {"id": name, "grid": [nt, nx], "passed": not bool(np.any(bad)), "fitted_constant": constant}
        if np.any(bad):
            i = np.unravel_index(int(np.argmax(viol)), viol.shape)
            entry["worst_point"] = {"t": float(tt[i]), "x": float(xx[i]), "violation": float(viol[i])}
        if extra:
            entry.update(extra)
        checks.append(entry)

    tolf = lambda ref: rtol * np.abs(ref)
    add("xi_hat<=xi", W["xi_hat"] - W["xi"] - tolf(W["xi"]))
    add("xi<=xi_star", W["xi"] - W["xi_star"] - tolf(W["xi"]))
    # exp(-s alpha_hat) <= exp(-s alpha) <= exp(-s alpha_star), compared on exponents
    s = wp.s
    add("exp(-s alpha_hat)<=exp(-s alpha)", s * W["alpha"] - s * W["alpha_hat"] - tolf(s * W["alpha"]))
    add("exp(-s alpha)<=exp(-s alpha_star)", s * W["alpha_star"] - s * W["alpha"] - tolf(s * W["alpha"]))
    add("positivity", -np.minimum.reduce([W[k] for k in W]))

    D = hat_time_derivatives(t, wp)
    xh = W["xi_hat"][:, 0]
    ratios = {
        "|xi_hat'|<=C T xi_hat^2": np.abs(D["xi_hat_1"]) / (T * xh**2),
        "|alpha_hat'|<=C T xi_hat^2": np.abs(D["alpha_hat_1"]) / (T * xh**2),
        "|xi_hat''|<=C T^2 xi_hat^3": np.abs(D["xi_hat_2"]) / (T**2 * xh**3),
        "|alpha_hat''|<=C T^2 xi_hat^3": np.abs(D["alpha_hat_2"]) / (T**2 * xh**3),
    }
    for name, rat in ratios.items():
        C = float(np.max(rat))
        checks.append({"id": name, "grid": [nt, 1], "passed": bool(np.isfinite(C)), "fitted_constant": C})

    g = 1.0 / (t * (T - t))
    lhs = r * s * W["alpha_star"][:, 0] - (r - 1.0) * s * W["alpha_hat"][:, 0]
    c0 = float(np.min(lhs / (s * g)))
    checks.append({"id": "max-min", "grid": [nt, 1], "passed": bool(c0 > 0), "fitted_constant": c0,
                   "r": r, "closed_form_c0": max_min_constant(wp.lam, r)})
    return {"lambda": wp.lam, "s": s, "T": T, "nu_c_hat": wp.nu.c_hat(), "checks": checks,
            "passed": all(c["passed"] for c in checks)}


def max_min_threshold(r: float, lambdas) -> float | None:
    """Smallest sampled lambda with positive c0 (analytically lambda > ln(r - 1))."""
    for lam in sorted(lambdas):
        if max_min_constant(lam, r) > 0:
            return float(lam)
    return None


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
