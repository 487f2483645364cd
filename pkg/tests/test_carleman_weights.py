import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nonlocal_control.carleman_weights import (LAMBDA_MIN, QuinticBump, WeightParams, check_weight_inequalities,
                                               hat_time_derivatives, max_min_constant, max_min_threshold,
                                               weight_nu, weights_eval)
from nonlocal_control.errors import ConfigError
from nonlocal_control.spectral_core import Window

W = Window.of(0.3, 0.8)
RC = 0.55


def test_nu_shape():
    nu = QuinticBump(W)
    assert weight_nu(0.0, W) == 0.0 and weight_nu(1.0, W) == 0.0
    assert nu(RC) == 1.0
    x = np.linspace(0, 1, 2001)
    v = nu(x)
    assert v.max() == 1.0 and np.all(v[1:-1] > 0)
    assert np.all(np.diff(v[x <= RC]) >= 0) and np.all(np.diff(v[x >= RC]) <= 0)
    assert nu.c_hat() > 0.3


def test_nu_derivative_matches_finite_difference():
    nu = QuinticBump(W)
    x = np.linspace(0.01, 0.99, 50)
    x = x[np.abs(x - RC) > 1e-3]
    h = 1e-6
    fd = (nu(x + h) - nu(x - h)) / (2 * h)
    np.testing.assert_allclose(nu.derivative(x), fd, rtol=1e-6, atol=1e-8)


def test_nu_refusals():
    with pytest.raises(ConfigError):
        QuinticBump(Window.of((0.1, 0.2), (0.5, 0.6)))
    with pytest.raises(ConfigError):
        QuinticBump(Window.of(0.0, 0.5))
    with pytest.raises(ConfigError):
        WeightParams(1.0, 1.0, 1.0, W)
    with pytest.raises(ConfigError):
        weights_eval(0.0, 0.5, WeightParams(LAMBDA_MIN, 1.0, 1.0, W))


def test_weight_examples():
    wp = WeightParams(LAMBDA_MIN, 1.0, 1.0, W)
    at_peak = weights_eval(0.3, RC, wp)
    assert at_peak["xi"] == pytest.approx(at_peak["xi_star"], rel=1e-15)
    at_edge = weights_eval(0.3, 0.0, wp)
    assert at_edge["xi"] == pytest.approx(at_edge["xi_hat"], rel=1e-15)
    assert weights_eval(0.5, 0.2, wp)["xi_hat"] == pytest.approx(64.0, rel=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.001, 0.999), st.floats(0, 1), st.floats(LAMBDA_MIN, 8.0), st.floats(0.1, 4.0))
def test_pointwise_ordering(tfrac, x, lam, T):
    wp = WeightParams(lam, 1.0, T, W)
    w = weights_eval(tfrac * T, x, wp)
    assert all(v > 0 for v in w.values())
    assert w["alpha_star"] <= w["alpha"] * (1 + 1e-12)
    assert w["alpha"] <= w["alpha_hat"] * (1 + 1e-12)
    assert w["xi_hat"] <= w["xi"] * (1 + 1e-12) <= w["xi_star"] * (1 + 1e-11)


def test_symmetry_in_time():
    wp = WeightParams(3.0, 2.0, 1.0, W)
    a, b = weights_eval(0.2, 0.4, wp), weights_eval(0.8, 0.4, wp)
    for key in ("xi_hat", "xi_star", "alpha_hat", "alpha_star"):
        assert a[key] == pytest.approx(b[key], rel=1e-14)


def test_time_derivatives_against_finite_differences():
    wp = WeightParams(4.0, 1.0, 1.5, W)
    t = np.linspace(0.1, 1.4, 9)
    D = hat_time_derivatives(t, wp)
    h = 1e-5
    f = lambda s: weights_eval(s, 0.0, wp)
    d1 = (f(t + h)["xi_hat"] - f(t - h)["xi_hat"]) / (2 * h)
    d2 = (f(t + h)["alpha_hat"] - 2 * f(t)["alpha_hat"] + f(t - h)["alpha_hat"]) / h**2
    np.testing.assert_allclose(D["xi_hat_1"], d1, rtol=1e-6, atol=1e-6)
    np.testing.assert_allclose(D["alpha_hat_2"], d2, rtol=1e-4)


def test_example_small_grid():
    rep = check_weight_inequalities(WeightParams(LAMBDA_MIN, 1.0, 1.0, W), 64, 64)
    chain = [c for c in rep["checks"] if c["id"] in ("xi_hat<=xi", "xi<=xi_star",
                                                     "exp(-s alpha_hat)<=exp(-s alpha)",
                                                     "exp(-s alpha)<=exp(-s alpha_star)")]
    assert len(chain) == 4 and all(c["passed"] for c in chain)


def test_fitted_constants_stable_under_refinement():
    wp = WeightParams(4.0, 4.0, 1.0, W)
    coarse = {c["id"]: c["fitted_constant"] for c in check_weight_inequalities(wp, 64, 16)["checks"]}
    fine = {c["id"]: c["fitted_constant"] for c in check_weight_inequalities(wp, 1024, 16)["checks"]}
    for key in coarse:
        if key.startswith("|"):
            assert math.isfinite(fine[key])
            assert fine[key] == pytest.approx(coarse[key], rel=0.1)


def test_refinement_creates_no_violations():
    for lam in (LAMBDA_MIN, 4.0, 6.0):
        wp = WeightParams(lam, 4.0, 1.0, W)
        assert check_weight_inequalities(wp, 64, 64)["passed"]
        assert check_weight_inequalities(wp, 256, 256)["passed"]


def test_max_min_threshold():
    # r alpha* - (r - 1) alpha_hat > 0 iff e^{lambda} > r - 1 (after dividing out e^{2 lambda})
    r = 6.0
    lams = np.linspace(LAMBDA_MIN, 4.0, 200)
    thr = max_min_threshold(r, lams)
    assert thr is not None and thr >= math.log(r - 1.0) - 1e-12
    assert max_min_constant(thr, r) > 0
    assert max_min_constant(math.log(r - 1.0) - 0.01, r) < 0
    assert max_min_threshold(1e6, [1.0, 2.0]) is None
    rep = check_weight_inequalities(WeightParams(thr, 2.0, 1.0, W), 32, 8, r=r)
    mm = next(c for c in rep["checks"] if c["id"] == "max-min")
    assert mm["fitted_constant"] == pytest.approx(mm["closed_form_c0"], rel=1e-10)


def test_max_min_failure_is_reported():
    rep = check_weight_inequalities(WeightParams(LAMBDA_MIN, 1.0, 1.0, W), 16, 16, r=20.0)
    mm = next(c for c in rep["checks"] if c["id"] == "max-min")
    assert not mm["passed"] and not rep["passed"]
