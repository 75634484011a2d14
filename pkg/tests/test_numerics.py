import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scout.numerics import (
    NotPositiveDefiniteError, logistic, make_rng, min_eigenvalue, reg_inc_beta, solve_spd,
    unit_ball_volume,
)

from conftest import random_spd

# frozen with mpmath at 50 digits
MU_ONE = 0.7310585786300049
I_QUARTER = 0.608997781044229


def test_logistic_values():
    assert logistic(0.0) == 0.5
    assert logistic(1.0) == pytest.approx(MU_ONE, abs=1e-15)
    assert logistic(800.0) == 1.0
    assert logistic(-800.0) == pytest.approx(0.0, abs=1e-300)


@given(st.floats(-700, 700))
def test_logistic_symmetry(z):
    assert logistic(z) + logistic(-z) == pytest.approx(1.0, abs=1e-15)


def test_logistic_vectorized():
    z = np.array([-2.0, 0.0, 2.0])
    out = logistic(z)
    assert out.shape == (3,)
    assert out[1] == 0.5


def test_reg_inc_beta_endpoints():
    assert reg_inc_beta(0.0, 2.0, 3.0) == 0.0
    assert reg_inc_beta(1.0, 2.0, 3.0) == 1.0


def test_reg_inc_beta_arcsine_form():
    assert reg_inc_beta(0.25, 0.5, 1.5) == pytest.approx(I_QUARTER, abs=1e-12)


def test_reg_inc_beta_against_mpmath():
    mpmath = pytest.importorskip("mpmath")
    rng = np.random.default_rng(3)
    for _ in range(60):
        x = float(rng.uniform(0, 1))
        a = float(rng.uniform(0.3, 12))
        b = float(rng.uniform(0.3, 12))
        ref = float(mpmath.betainc(a, b, 0, x, regularized=True))
        assert reg_inc_beta(x, a, b) == pytest.approx(ref, abs=1e-11)


@settings(max_examples=80)
@given(st.floats(0.001, 0.999), st.floats(0.2, 20), st.floats(0.2, 20))
def test_reg_inc_beta_reflection(x, a, b):
    assert reg_inc_beta(x, a, b) + reg_inc_beta(1 - x, b, a) == pytest.approx(1.0, abs=1e-10)


@settings(max_examples=40)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.3, 8), st.floats(0.3, 8))
def test_reg_inc_beta_monotone_in_x(x1, x2, a, b):
    lo, hi = sorted((x1, x2))
    assert reg_inc_beta(lo, a, b) <= reg_inc_beta(hi, a, b) + 1e-13


@pytest.mark.parametrize("args", [(-0.1, 1, 1), (1.1, 1, 1), (0.5, 0, 1), (0.5, 1, -2), (math.nan, 1, 1)])
def test_reg_inc_beta_domain(args):
    with pytest.raises(ValueError):
        reg_inc_beta(*args)


def test_unit_ball_volume():
    assert unit_ball_volume(1) == pytest.approx(2.0)
    assert unit_ball_volume(2) == pytest.approx(math.pi)
    assert unit_ball_volume(3) == pytest.approx(4.18879020478639, abs=1e-12)
    with pytest.raises(ValueError):
        unit_ball_volume(0)


def _charpoly_min_root(m):
    """Smallest eigenvalue by bisection on det(m - l I), independent of LAPACK eigensolvers."""
    d = len(m)
    f = lambda lam: np.linalg.det(m - lam * np.eye(d))
    # Gershgorin lower bound; det(m - lam I) has sign (+1)^d below the spectrum
    lo = min(m[i, i] - np.sum(np.abs(m[i])) + abs(m[i, i]) for i in range(d)) - 1.0
    step = 1e-3
    x = lo
    while np.sign(f(x)) == np.sign(f(lo)):
        x += step
    a, b = x - step, x
    for _ in range(200):
        mid = 0.5 * (a + b)
        if np.sign(f(mid)) == np.sign(f(a)):
            a = mid
        else:
            b = mid
    return 0.5 * (a + b)


def test_min_eigenvalue_examples(rng):
    assert min_eigenvalue(np.eye(3)) == pytest.approx(1.0)
    assert min_eigenvalue(np.diag([2.0, 5.0])) == pytest.approx(2.0)
    for _ in range(5):
        m = random_spd(rng, 4)
        assert min_eigenvalue(m) == pytest.approx(_charpoly_min_root(m), abs=1e-8)


def test_min_eigenvalue_rejects_bad_input():
    with pytest.raises(ValueError):
        min_eigenvalue(np.array([[1.0, np.nan], [np.nan, 1.0]]))
    with pytest.raises(ValueError):
        min_eigenvalue(np.ones((2, 3)))


def test_solve_spd(rng):
    r = np.array([0.3, -1.0, 2.0])
    np.testing.assert_allclose(solve_spd(np.eye(3), r), r)
    np.testing.assert_allclose(solve_spd(np.diag([2.0, 4.0]), np.array([2.0, 4.0])), [1.0, 1.0])
    for _ in range(10):
        m = random_spd(rng, 5)
        b = rng.normal(size=5)
        x = solve_spd(m, b)
        assert np.linalg.norm(m @ x - b) <= 1e-10 * max(1.0, np.linalg.norm(b))


def test_solve_spd_rejects_indefinite():
    with pytest.raises(NotPositiveDefiniteError):
        solve_spd(np.diag([1.0, -1.0]), np.ones(2))


def test_make_rng_streams_are_reproducible_and_distinct():
    a = make_rng(7, 0).random(5)
    np.testing.assert_array_equal(a, make_rng(7, 0).random(5))
    assert not np.array_equal(a, make_rng(7, 1).random(5))
    assert not np.array_equal(a, make_rng(8, 0).random(5))
