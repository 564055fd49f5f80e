import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sgubu.errors import ParameterError
from sgubu.model import (
    LogisticRegressionPotential,
    QuadraticMixturePotential,
    QuadraticSumPotential,
    diagonal_quadratic,
    find_mode,
    largest_eigenvalue,
    standard_gaussian,
    toy_target_moments,
)


def test_toy_moments_complete_the_square():
    toy = QuadraticMixturePotential.toy()
    mean, var = toy_target_moments(toy)
    # precisions 2/0.25 + 2/4 = 8.5, mean (4 * -1 + 0.25 * 1) / 4.25
    assert mean == pytest.approx(-3.75 / 4.25, rel=1e-14)
    assert var == pytest.approx(1 / 8.5, rel=1e-14)
    assert toy.m == toy.L == pytest.approx(8.5)
    assert toy.mean[0] == pytest.approx(mean)


def test_toy_gradient_matches_finite_difference():
    toy = QuadraticMixturePotential.toy()
    x = np.linspace(-3, 3, 13)[:, None]
    eps = 1e-6
    fd = (toy.value(x + eps) - toy.value(x - eps)) / (2 * eps)
    np.testing.assert_allclose(toy.gradient(x)[:, 0], fd, rtol=1e-7, atol=1e-7)


@given(st.lists(st.floats(0.1, 10.0), min_size=1, max_size=6))
def test_diagonal_quadratic_constants(prec):
    pot = diagonal_quadratic(prec)
    assert pot.m == pytest.approx(min(prec))
    assert pot.L == pytest.approx(max(prec))
    assert pot.kappa >= 1.0


def test_standard_gaussian_value():
    pot = standard_gaussian(3)
    assert pot.value(np.array([1.0, 2.0, 2.0])) == pytest.approx(4.5)


def test_rejects_bad_shapes_and_widths():
    with pytest.raises(ParameterError):
        QuadraticSumPotential(np.ones((2, 3)), np.ones((2, 2)))
    with pytest.raises(ParameterError):
        QuadraticMixturePotential([0.0, 1.0], [1.0, 0.0])
    with pytest.raises(ParameterError):
        QuadraticSumPotential(np.zeros((1, 2)), np.zeros((1, 2)))


def _logistic(seed=0, n=200, d=5):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = (rng.random(n) < 0.5).astype(float)
    return LogisticRegressionPotential(X, y, prior_var=0.5)


def test_logistic_gradient_and_hessian():
    pot = _logistic()
    q = np.random.default_rng(1).normal(size=5) * 0.3
    eps = 1e-6
    fd = np.array([(pot.value(q + eps * e) - pot.value(q - eps * e)) / (2 * eps) for e in np.eye(5)])
    np.testing.assert_allclose(pot.gradient(q), fd, rtol=1e-6, atol=1e-6)
    H = pot.hessian(q)
    fdH = np.array([(pot.gradient(q + eps * e) - pot.gradient(q - eps * e)) / (2 * eps) for e in np.eye(5)])
    np.testing.assert_allclose(H, fdH, rtol=1e-5, atol=1e-5)


def test_logistic_curvature_bounds_hold():
    pot = _logistic()
    q = np.zeros(5)
    # prior alone gives m = 1/prior_var; the data term is at most X^T X / 4
    assert pot.m == pytest.approx(2.0)
    assert largest_eigenvalue(pot.hessian(q)) <= pot.L * (1 + 1e-9)


def test_find_mode_reaches_stationarity():
    pot = _logistic()
    q = find_mode(pot, np.zeros(5))
    assert np.linalg.norm(pot.gradient(q)) < 1e-6


def test_largest_eigenvalue():
    A = np.diag([1.0, 3.0, 2.0])
    assert largest_eigenvalue(A) == pytest.approx(3.0)


def test_single_and_symmetric_components():
    assert toy_target_moments(QuadraticMixturePotential([0.0], [1.0])) == pytest.approx((0.0, 0.5))
    assert toy_target_moments(QuadraticMixturePotential([-1.0, 1.0], [1.0, 1.0]))[0] == pytest.approx(0.0)
    assert toy_target_moments(QuadraticMixturePotential.toy())[0] == pytest.approx(-15 / 17)


def test_find_mode_quadratics():
    pot = QuadraticMixturePotential([2.5], [1.0])
    assert find_mode(pot, np.array([-7.0]))[0] == pytest.approx(2.5, abs=1e-8)
    assert find_mode(QuadraticMixturePotential.toy(), np.array([3.0]))[0] == pytest.approx(-15 / 17, abs=1e-8)


def test_find_mode_small_logistic():
    pot = _logistic(seed=2, n=50, d=2)
    q = find_mode(pot, np.ones(2))
    assert np.linalg.norm(pot.gradient(q)) <= 1e-8
