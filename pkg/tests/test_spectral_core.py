import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from nonlocal_control.errors import ConfigError
from nonlocal_control.spectral_core import (SpectralState, Window, analyze, eigenfunction_eval, eigenvalue,
                                            eigenvalues, mean_mass, mean_masses, overlap_matrix,
                                            overlap_on_window, synthesize)


def test_eigenvalues():
    assert eigenvalue(1) == pytest.approx(9.8696044, rel=1e-8)
    assert eigenvalue(3) == pytest.approx(9 * math.pi**2, rel=1e-15)
    assert eigenvalue(2) == pytest.approx(4 * eigenvalue(1), rel=1e-15)
    np.testing.assert_allclose(eigenvalues(5), [eigenvalue(k) for k in range(1, 6)])
    with pytest.raises(ConfigError):
        eigenvalue(0)


def test_eigenfunction_values():
    assert eigenfunction_eval(1, 0.5) == pytest.approx(1.0)
    assert abs(eigenfunction_eval(2, 0.5)) < 1e-15
    assert abs(eigenfunction_eval(3, 1.0)) < 1e-15


def test_mean_mass():
    assert mean_mass(1) == pytest.approx(0.63662, abs=1e-5)
    assert mean_mass(2) == 0.0
    assert mean_mass(3) == pytest.approx(2 / (3 * math.pi), rel=1e-15)
    assert all(mean_mass(2 * k) == 0.0 for k in range(1, 40))
    for k in range(1, 8):
        assert mean_masses(7)[k - 1] == pytest.approx(quad(lambda x: math.sin(k * math.pi * x), 0, 1)[0], abs=1e-13)


def test_overlap_examples():
    assert overlap_on_window(3, 3, None) == pytest.approx(0.5, abs=1e-15)
    assert abs(overlap_on_window(1, 2, Window.of(0.0, 1.0))) < 1e-15
    assert overlap_on_window(2, 2, Window.of(0.25, 0.75)) == pytest.approx(0.25, abs=1e-15)


def test_overlap_full_interval_is_half_identity():
    np.testing.assert_allclose(overlap_matrix(64, None), 0.5 * np.eye(64), atol=1e-15)


def test_overlap_matches_quadrature():
    w = Window.of((0.1, 0.25), (0.3, 0.8))
    O = overlap_matrix(6, w)
    for k in range(1, 7):
        for l in range(1, 7):
            ref = sum(quad(lambda x: math.sin(k * math.pi * x) * math.sin(l * math.pi * x), r1, r2)[0]
                      for r1, r2 in w.intervals)
            assert O[k - 1, l - 1] == pytest.approx(ref, abs=1e-13)
    np.testing.assert_allclose(O, O.T, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.01, 0.99), min_size=1, max_size=4, unique=True))
def test_overlap_partition_adds_up(cuts):
    pts = [0.0] + sorted(cuts) + [1.0]
    total = sum(overlap_matrix(16, Window.of(a, b)) for a, b in zip(pts[:-1], pts[1:]) if b > a)
    np.testing.assert_allclose(total, overlap_matrix(16, None), atol=1e-12)


def test_window_validation():
    with pytest.raises(ConfigError):
        Window(())
    with pytest.raises(ConfigError):
        Window.of((0.2, 0.5), (0.4, 0.7))
    with pytest.raises(ConfigError):
        Window.of(0.6, 0.3)
    w = Window.of((0.1, 0.2), (0.5, 0.9))
    assert w.measure == pytest.approx(0.5)
    np.testing.assert_array_equal(w.indicator([0.15, 0.3, 0.6]), [1.0, 0.0, 1.0])


def test_synthesize_examples():
    assert synthesize(SpectralState([1.0]), 0.5) == pytest.approx(1.0)
    assert np.all(synthesize(SpectralState.zeros(5), np.linspace(0, 1, 7)) == 0.0)
    assert synthesize(SpectralState([1.0, 1.0]), 0.25) == pytest.approx(1.70711, abs=1e-5)


def test_analyze_examples():
    np.testing.assert_allclose(analyze(lambda x: np.sin(2 * np.pi * x), 4).coeffs, [0, 1, 0, 0], atol=1e-12)
    assert np.all(analyze(lambda x: 0 * x, 5).coeffs == 0.0)
    c = analyze(lambda x: x * (1 - x), 3).coeffs
    assert c[0] == pytest.approx(8 / math.pi**3, rel=1e-12)
    assert c[0] == pytest.approx(0.25801, abs=1e-5)
    assert abs(c[1]) < 1e-14
    with pytest.raises(ConfigError):
        analyze(lambda x: x, 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 64), st.integers(0, 2**32 - 1))
def test_analyze_inverts_synthesize(K, seed):
    c = np.random.default_rng(seed).standard_normal(K)
    back = analyze(lambda x: synthesize(SpectralState(c), x), K)
    np.testing.assert_allclose(back.coeffs, c, atol=1e-10)


def test_state_norms():
    s = SpectralState([3.0, 4.0])
    assert s.l2_norm() == pytest.approx(math.sqrt(25 / 2))
    ref = quad(lambda x: synthesize(s, x) ** 2, 0, 1, limit=200)[0]
    assert s.l2_norm() ** 2 == pytest.approx(ref, rel=1e-12)
    lam = eigenvalues(2)
    assert s.h1_proxy() == pytest.approx(math.sqrt(((1 + lam) * s.coeffs**2).sum()))
    assert s.mean() == pytest.approx(3 * 2 / math.pi)
    with pytest.raises(ConfigError):
        SpectralState([1.0, np.nan])
    np.testing.assert_array_equal(s.resized(4).coeffs, [3, 4, 0, 0])
    np.testing.assert_array_equal(s.resized(1).coeffs, [3])
