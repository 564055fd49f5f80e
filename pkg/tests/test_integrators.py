import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import solve_discrete_lyapunov

from sgubu import kernels
from sgubu.errors import DivergenceError, ParameterError
from sgubu.gradients import MinibatchGradient
from sgubu.integrators import (
    KineticState,
    StepCoefficients,
    block_gaussian_covariance,
    em_kinetic_step,
    run_chain,
    sgld_step,
    u_half_step,
    ubu_closed_form,
    ubu_integrals_from_noise,
    ubu_step,
)
from sgubu.model import QuadraticMixturePotential, standard_gaussian


def test_block_covariance_closed_form():
    c = StepCoefficients(0.5, 2.0)
    F = (1 - math.exp(-1)) / 2
    assert c.F(0.5) == pytest.approx(0.316060, abs=1e-6)
    assert c.cov_x2 == pytest.approx(0.5 * math.exp(-1), rel=1e-14)
    assert c.cov_x2 == pytest.approx(0.183940, abs=1e-6)
    assert c.sigma2 == pytest.approx(c.cov_x2 - F**2, rel=1e-12)
    np.testing.assert_allclose(block_gaussian_covariance(c), [[1, F], [F, 0.5 * math.exp(-1)]], rtol=1e-13)


@given(st.floats(1e-6, 3.0), st.floats(0.1, 10.0))
def test_sigma2_is_nonnegative_and_matches_integral(h, gamma):
    c = StepCoefficients(h, gamma)
    assert c.sigma2 >= 0
    # sigma^2(h) = 2 gamma int_0^h F(u)^2 du, by a fine midpoint rule
    u = (np.arange(4000) + 0.5) * h / 4000
    F = -np.expm1(-gamma * u) / gamma
    assert c.sigma2 == pytest.approx(2 * gamma * np.sum(F**2) * h / 4000, rel=1e-5, abs=1e-300)


def test_sigma2_series_branch_is_continuous():
    gamma = 1.0
    vals = [StepCoefficients(x, gamma).sigma2 / x**3 for x in (0.0099, 0.0101, 0.05, 0.2)]
    # leading term 2 gamma^2 h^3 / 3 divided by gamma^2 ... gives 2/3 as x -> 0
    assert vals[0] == pytest.approx(2 / 3, rel=2e-2)
    assert abs(vals[0] - vals[1]) < 1e-3


@given(st.floats(1e-4, 2.0), st.floats(0.1, 20.0))
def test_u_half_step_noise_covariance(h, gamma):
    c = StepCoefficients(h, gamma)
    eta, F, nx1, nx2, nv1, nv2 = c.u_coefficients
    assert eta == pytest.approx(math.exp(-gamma * h / 2))
    assert nx1**2 + nx2**2 == pytest.approx(c.sigma2_at(h / 2), rel=1e-8, abs=1e-18)
    assert nv1**2 + nv2**2 == pytest.approx(1 - eta**2, rel=1e-9, abs=1e-18)
    assert nx1 * nv1 + nx2 * nv2 == pytest.approx((1 - eta) ** 2 / gamma, rel=1e-8, abs=1e-18)


def test_two_half_steps_compose_to_full_flow():
    h, gamma = 0.3, 2.0
    s = KineticState(np.array([1.0]), np.array([-0.5]))
    two = u_half_step(u_half_step(s, h, gamma), h, gamma)
    full = StepCoefficients(2 * h, gamma)
    assert two.x[0] == pytest.approx(1.0 + full.F(h) * -0.5)
    assert two.v[0] == pytest.approx(full.E(h) * -0.5)


def test_closed_form_matches_splitting():
    rng = np.random.default_rng(3)
    c = StepCoefficients(0.2, 1.5)
    pot = standard_gaussian(3)
    s = KineticState(rng.normal(size=3), rng.normal(size=3))
    noise = tuple(rng.normal(size=3) for _ in range(4))
    a = ubu_step(s, c, pot.gradient, noise=noise)
    b = ubu_closed_form(s, c, pot.gradient, ubu_integrals_from_noise(c, noise))
    np.testing.assert_allclose(a.x, b.x, rtol=1e-13)
    np.testing.assert_allclose(a.v, b.v, rtol=1e-13)


def _ubu_stationary_var(h, gamma=1.0):
    # linear map of one step on V = x^2/2, plus the noise loading
    c = StepCoefficients(h, gamma)
    grad = lambda y: y  # noqa: E731
    zero = (np.zeros(1),) * 4
    A = np.column_stack([np.concatenate([(r := ubu_step(KineticState(e[:1], e[1:]), c, grad, noise=zero)).x, r.v])
                         for e in np.eye(2)])
    B = []
    for k in range(4):
        noise = tuple(np.array([float(k == j)]) for j in range(4))
        r = ubu_step(KineticState(np.zeros(1), np.zeros(1)), c, grad, noise=noise)
        B.append([r.x[0], r.v[0]])
    B = np.array(B).T
    return solve_discrete_lyapunov(A, B @ B.T)[0, 0]


def test_ubu_stationary_bias_is_second_order():
    errs = [abs(_ubu_stationary_var(h) - 1.0) for h in (0.2, 0.1, 0.05)]
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.1)


def test_em_and_sgld_steps():
    s = KineticState(np.array([1.0]), np.array([2.0]))
    out = em_kinetic_step(s, 0.1, 2.0, lambda x: 3 * x, noise=np.array([0.5]))
    x = 1.0 + 0.1 * 2.0
    assert out.x[0] == pytest.approx(x)
    assert out.v[0] == pytest.approx(2.0 - 0.1 * 3 * x - 0.2 * 2.0 + math.sqrt(0.4) * 0.5)
    assert sgld_step(np.array([1.0]), 0.1, lambda x: x, noise=np.array([1.0]))[0] == pytest.approx(0.9 + math.sqrt(0.2))


def test_run_chain_is_deterministic_and_shapes():
    toy = QuadraticMixturePotential.toy()
    est = MinibatchGradient(toy, 1)
    a = run_chain("ubu", est, 0.05, 5.0, n_steps=300, burn_in=100, thin=4, seed=7, n_chains=3)
    b = run_chain("ubu", est, 0.05, 5.0, n_steps=300, burn_in=100, thin=4, seed=7, n_chains=3)
    assert a.positions.shape == (50, 3, 1)
    np.testing.assert_array_equal(a.positions, b.positions)


@pytest.mark.skipif(not kernels.compiled_available(), reason="compiled kernels not built")
@pytest.mark.parametrize("kind", ["ubu", "em", "sgld"])
def test_backends_agree(kind):
    toy = QuadraticMixturePotential.toy()
    est = MinibatchGradient(toy, 1)
    out = [run_chain(kind, est, 0.05, 5.0, n_steps=500, seed=1, n_chains=2, backend=b).positions for b in ("cython", "python")]
    np.testing.assert_array_equal(out[0], out[1])


def test_exact_gaussian_chain_matches_target():
    pot = standard_gaussian(1)
    r = run_chain("ubu", pot, 0.1, 2.0, n_steps=40000, burn_in=1000, seed=2, n_chains=16)
    assert r.positions.var() == pytest.approx(1.0, abs=0.03)


def test_divergence_and_bad_arguments():
    toy = QuadraticMixturePotential.toy()
    with pytest.raises(DivergenceError):
        run_chain("em", toy, 1.0, 0.1, n_steps=2000, seed=0)
    with pytest.raises(ParameterError):
        run_chain("leapfrog", toy, 0.1, 1.0)
    with pytest.raises(ParameterError):
        run_chain("ubu", toy, 0.1, None)
    with pytest.raises(ParameterError):
        StepCoefficients(-1.0, 1.0)


def test_u_step_edge_cases():
    s = KineticState(np.array([1.0, 2.0]), np.zeros(2))
    assert np.array_equal(u_half_step(s, 0.3, 2.0).x, s.x)
    # almost no friction: ballistic motion over h/2
    s = KineticState(np.array([1.0]), np.array([3.0]))
    out = u_half_step(s, 0.2, 1e-6)
    assert out.x[0] == pytest.approx(1.0 + 0.1 * 3.0, abs=1e-6)
    assert out.v[0] == pytest.approx(3.0, abs=1e-6)


def test_u_step_covariance_monte_carlo():
    h, gamma = 0.4, 1.5
    rng = np.random.default_rng(21)
    n = 1_000_000
    out = u_half_step(KineticState(np.zeros(n), np.zeros(n)), h, gamma, rng)
    c = StepCoefficients(h, gamma)
    eta = c.eta
    expected = np.array([[c.sigma2_at(h / 2), (1 - eta) ** 2 / gamma], [(1 - eta) ** 2 / gamma, 1 - eta**2]])
    np.testing.assert_allclose(np.cov(np.vstack([out.x, out.v])), expected, atol=3e-3)


def test_b_step_and_free_flight():
    from sgubu.integrators import b_step

    s = KineticState(np.array([1.0, 2.0]), np.array([0.5, 0.5]))
    assert np.array_equal(b_step(s, 0.1, np.zeros(2)).v, s.v)
    np.testing.assert_allclose(b_step(s, 0.1, np.ones(2)).v, [0.4, 0.4])
    c = StepCoefficients(0.3, 2.0)
    zero = (np.zeros(2),) * 4
    out = ubu_step(s, c, lambda y: np.zeros_like(y), noise=zero)
    np.testing.assert_allclose(out.x, s.x + c.F(0.3) * s.v, rtol=1e-14)
    np.testing.assert_allclose(out.v, c.E(0.3) * s.v, rtol=1e-14)


def test_ubu_long_run_variance():
    gamma, h = math.sqrt(8.0), 0.05
    r = run_chain("ubu", standard_gaussian(1), h, gamma, n_steps=200_000, burn_in=2000, seed=4, n_chains=50)
    x = r.positions[:, :, 0]
    per_chain = x.var(axis=0)
    se = per_chain.std(ddof=1) / math.sqrt(per_chain.size)
    exact = _ubu_stationary_var(h, gamma)
    assert abs(exact - 1.0) < 2 * h**2
    assert abs(per_chain.mean() - exact) < 4 * se


def test_em_single_step_velocity_variance():
    gamma, h = 2.0, 0.1
    rng = np.random.default_rng(8)
    n = 400_000
    out = em_kinetic_step(KineticState(np.zeros(n), np.zeros(n)), h, gamma, lambda x: x, rng)
    assert out.v.var() == pytest.approx(2 * gamma * h, rel=0.01)


def test_sgld_diffusion_and_ar1():
    rng = np.random.default_rng(9)
    x = sgld_step(np.zeros(400_000), 0.2, lambda x: np.zeros_like(x), rng)
    assert x.var() == pytest.approx(0.4, rel=0.01)
    h = 0.1
    r = run_chain("sgld", standard_gaussian(1), h, None, n_steps=50_000, burn_in=500, seed=3, n_chains=40)
    per_chain = r.positions[:, :, 0].var(axis=0)
    se = per_chain.std(ddof=1) / math.sqrt(per_chain.size)
    assert abs(per_chain.mean() - 2 * h / (1 - (1 - h) ** 2)) < 4 * se


def test_run_chain_empty_after_burn_in():
    r = run_chain("ubu", standard_gaussian(2), 0.1, 2.0, n_steps=50, burn_in=50, seed=0, n_chains=2)
    assert r.positions.shape == (0, 2, 2)
    assert r.n_kept == 0


def test_run_chain_sink_receives_blocks():
    seen = []
    r = run_chain("em", standard_gaussian(2), 0.05, 2.0, n_steps=5000, burn_in=1000, thin=10, seed=0, n_chains=3,
                  sink=lambda x, v: seen.append(x.shape))
    assert r.positions is None
    assert sum(s[0] for s in seen) == r.n_kept == 400
