import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sgubu import bounds
from sgubu.errors import ParameterError, RegimeError


def test_gaussian_moment_constants():
    assert bounds.gaussian_abs_moment_constant(1) == pytest.approx(math.sqrt(2 / math.pi))
    assert bounds.gaussian_abs_moment_constant(2) == pytest.approx(1.0)
    assert bounds.gaussian_abs_moment_constant(4) == pytest.approx(3.0**0.25)
    assert bounds.K_p(1) == 1.0
    assert bounds.K_p(2) == 1.0


def test_prefactors():
    assert bounds.convolution_prefactor(1) == pytest.approx(4.0)
    assert bounds.convolution_prefactor(2) == pytest.approx(1 / (1 - math.sqrt(15 / 16)))
    assert bounds.convolution_prefactor(2) == pytest.approx(31.4919, abs=1e-4)
    assert bounds.contraction_rate(1) == 0.75


def test_c4_and_corollary_constant():
    assert bounds.C4 == pytest.approx((math.e**4 - 5) / 16)
    assert bounds.MOMENT_COROLLARY_CONSTANT == pytest.approx(4.48993, abs=1e-5)
    assert bounds.moment_corollary_bound(1, 2.0) == pytest.approx(2 * bounds.MOMENT_COROLLARY_CONSTANT)
    assert bounds.moment_corollary_bound(2, 0.0, 9.0) == pytest.approx(3 * bounds.MOMENT_COROLLARY_CONSTANT)
    with pytest.raises(ParameterError):
        bounds.moment_corollary_bound(2, 1.0)


def test_refined_bounds():
    tail = math.sqrt(2 * math.log(1 + bounds.C4 * 0.25))
    assert bounds.refined_bound(0.2, 0.5) == pytest.approx(0.4 + tail)
    assert bounds.refined_bound(0.2, 0.5) == pytest.approx(1.47125, abs=1e-5)
    assert bounds.refined_bound(3.0, 0.0) == pytest.approx(4.0)
    assert bounds.crude_refined_bound(3.0, 0.0) == pytest.approx(6.0)


@given(st.floats(0, 10), st.floats(0, 5))
def test_refined_is_never_above_crude(tau, frob):
    assert bounds.refined_bound(tau, frob) <= bounds.crude_refined_bound(tau, frob) + 1e-12


def test_poincare_and_kl():
    assert bounds.poincare_bound(2.0, 8.0) == pytest.approx(4.0)
    assert bounds.poincare_dimension_bound(0.5, 16) == pytest.approx(2.0)
    assert bounds.kl_w2_bound(math.e - 1) == pytest.approx(math.sqrt(2))


def test_chi2_of_symmetric_pair():
    chi2, bound = bounds.chi2_convolution([1.0, -1.0])
    assert chi2 == pytest.approx(math.cosh(1.0) - 1.0)
    assert bound == pytest.approx(bounds.C4)


def test_chi2_rejects_uncentred_or_wide():
    with pytest.raises(ParameterError):
        bounds.chi2_convolution([1.0, 0.0])
    with pytest.raises(ParameterError):
        bounds.chi2_convolution([3.0, -3.0])


def test_tail_and_truncated_cov():
    st_ = bounds.tail_and_truncated_cov([2.0, -2.0, 0.5, -0.5])
    assert st_.tau1 == pytest.approx(1.0)
    assert st_.tau2 == pytest.approx(math.sqrt(2))
    assert st_.frobenius == pytest.approx(0.125)


def test_tau_monte_carlo_unit_shell(rng):
    Y = 2.0 * np.ones(1000)
    assert bounds.tau_p_monte_carlo(Y, 1)[0] == pytest.approx(2.0)
    assert bounds.tau_p_monte_carlo(Y, 2)[0] == pytest.approx(2.0)
    assert bounds.tau_p_monte_carlo(0.5 * Y, 1)[0] == 0.0


def test_spike_lower_bound_clean_regime():
    d = 1024
    s = 4 * math.sqrt(2 * math.log(d))
    assert bounds.spike_clean_regime(s, d)
    assert bounds.spike_lower_bound(s, d) == pytest.approx(s / 4)
    assert s / 4 == pytest.approx(3.7233, abs=1e-4)
    assert bounds.spike_covariance_frobenius(2.0, 4) == pytest.approx(2.0)


def test_bias_bound_full_gradient():
    # C_G = 0, m = L = 1: prefactor gamma h / m, noise terms vanish
    inp = bounds.BiasBoundInputs(h=0.1, gamma=3.0, m=1.0, L=1.0, d=1, C_G=0.0, sigma_p=0.0, T=0.0)
    assert bounds.sg_ubu_bias_bound(inp) == pytest.approx(0.3 * 33 * 4)


def test_bias_bound_monotone_in_h():
    vals = [bounds.sg_ubu_bias_bound(bounds.BiasBoundInputs(h, 9.0, 8.5, 8.5, 1, 56.25, 3.2, 700.0))
            for h in (0.001, 0.003, 0.005)]
    assert vals[0] < vals[1] < vals[2]


def test_regime_guards():
    assert bounds.regime_violations(0.005, 9.0, 8.5, 8.5, 56.25) == []
    # h >= mL/(20 C_G gamma) = 0.00714
    with pytest.raises(RegimeError):
        bounds.BiasBoundInputs(0.008, 9.0, 8.5, 8.5, 1, 56.25, 1.0, 1.0)
    with pytest.raises(RegimeError):
        bounds.check_regime(0.01, 2.0, 1.0, 1.0)
    assert len(bounds.regime_violations(1.0, 1.0, 1.0, 1.0)) == 2


def test_contraction_factor():
    assert bounds.contraction_factor(0.1, 4.0, 1.0, 2.0, n=10) == pytest.approx((1 - 0.1 / 16) ** 5)


def test_plug_in_terms():
    assert bounds.plug_in_term("i", L=4.0, sigma_2p=1.0) == pytest.approx(63.0)
    assert bounds.plug_in_term("ii", L=4.0, poincare_trace_integral=4.0) == pytest.approx(4.0)
    with pytest.raises(ParameterError):
        bounds.plug_in_term("iii", L=1.0)
    with pytest.raises(ParameterError):
        bounds.plug_in_term("iv", L=1.0)


def test_zero_inputs():
    assert bounds.general_convolution_bound(2, 0.0) == 0.0
    assert bounds.refined_bound(0.0, 0.0) == 0.0
    assert bounds.poincare_bound(1.0, 0.0) == 0.0
    assert bounds.kl_w2_bound(0.0) == 0.0
    assert bounds.moment_corollary_bound(1, 0.0) == 0.0
    assert bounds.moment_corollary_bound(1, 1.0) == pytest.approx(4.4900, abs=1e-4)
    assert bounds.plug_in_term("i", L=4.0, sigma_2p=0.0) == 0.0
    assert bounds.spike_lower_bound(1.0, 100) == 0.0
    assert bounds.contraction_factor(0.05, math.sqrt(32), 1.0, 4.0, n=0) == 1.0


def test_tail_examples():
    inside = bounds.tail_and_truncated_cov([0.5, -0.5])
    assert inside.tau1 == inside.tau2 == 0.0
    assert inside.frobenius == pytest.approx(0.25)
    far = bounds.tail_and_truncated_cov(np.array([[2.0, 0.0], [-2.0, 0.0]]))
    assert far.tau1 == pytest.approx(2.0) and far.tau2 == pytest.approx(2.0) and far.frobenius == 0.0
    d, s = 4, 0.8
    atoms = np.vstack([s * np.eye(d), -s * np.eye(d)])
    spike = bounds.tail_and_truncated_cov(atoms)
    assert spike.tau1 == 0.0
    assert spike.frobenius == pytest.approx(s**2 / d * math.sqrt(d))


def test_gaussian_poincare_bound():
    c, d = 0.7, 9
    assert bounds.poincare_bound(c * c, c * c * d) == pytest.approx(bounds.poincare_dimension_bound(c * c, d))


def test_bias_bound_reduction_and_reference_point():
    g, L, h, d = math.sqrt(32.0), 4.0, 0.01, 10
    det = bounds.sg_ubu_bias_bound(bounds.BiasBoundInputs(h, g, 1.0, L, d, 0.0, 0.0, 0.0))
    assert det == pytest.approx(g * L * h / L * 33 * math.sqrt(d) * (2 + g), rel=1e-12)
    val = bounds.sg_ubu_bias_bound(bounds.BiasBoundInputs(h, g, 1.0, L, d, 1.0, 2.0, 1.0))
    pre = g * L * h / (L - 20 * h * g)
    ref = pre * (33 * math.sqrt(10) * (2 + g) + 5 * (3 * math.sqrt(10) / 2 + 6 + 1))
    assert val == pytest.approx(ref, rel=1e-12)


def test_plug_in_iii_bounded_noise():
    # bounded residuals keep |Y| <= 1, so only the eigenvalue term remains
    out = bounds.plug_in_term("iii", L=4.0, tau_p_Y=0.0, lambda_max_sq_mean=4.0, h=0.1, gamma=2.0, d=9)
    assert out == pytest.approx(10 * math.exp(-0.2) * 3 * 2 / 2)


def test_contraction_factor_examples():
    g = math.sqrt(32)
    assert bounds.contraction_factor(0.05, g, 1.0, 4.0, n=2) == pytest.approx(1 - 0.05 / (4 * g))
    assert bounds.contraction_factor(0.01, g, 1.0, 4.0, 1.0, n=1) >= bounds.contraction_factor(0.01, g, 1.0, 4.0, n=1)
