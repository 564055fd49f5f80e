"""Closed-form evaluators for the convolution and bias bounds.

Every function here is arithmetic on supplied statistics.  The statistics
themselves (tail quantities, truncated covariances, ``tau_p``) have separate
estimators at the bottom of the module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import InvariantError, ParameterError, RegimeError
from .tolerances import TOL

C4 = (math.exp(4.0) - 5.0) / 16.0
MOMENT_COROLLARY_CONSTANT = 2.0 + math.sqrt(2.0 * C4)


def gaussian_abs_moment_constant(p: float) -> float:
    """``C_p = (E|xi|^p)^(1/p)`` for ``xi ~ N(0, 1)``: ``(2^{p/2} Gamma((p+1)/2) / sqrt(pi))^(1/p)``."""
    if p <= 0:
        raise ParameterError(f"need p > 0, got {p}")
    log_moment = 0.5 * p * math.log(2.0) + gammaln(0.5 * (p + 1.0)) - 0.5 * math.log(math.pi)
    return math.exp(log_moment / p)


def K_p(p: float) -> float:
    """``max{1, C_p/2 + 1/3}``."""
    return max(1.0, gaussian_abs_moment_constant(p) / 2.0 + 1.0 / 3.0)


def contraction_rate(p: float) -> float:
    """Per-level moment contraction ``1 - 2^{-2p}`` of midpoint replacement."""
    return 1.0 - 2.0 ** (-2.0 * p)


def convolution_prefactor(p: float) -> float:
    """``K_p / (1 - (1 - 2^{-2p})^{1/p})``."""
    if p < 1:
        raise ParameterError(f"need p >= 1, got {p}")
    return K_p(p) / (1.0 - contraction_rate(p) ** (1.0 / p))


def general_convolution_bound(p: float, moment_2p: float, s: float = 1.0) -> float:
    """Upper bound on ``W_p(mu * N(0, sI), N(0, sI))`` from ``E|X|^{2p}``."""
    if p < 1:
        raise ParameterError(f"need p >= 1, got {p}")
    if moment_2p < 0 or s <= 0:
        raise ParameterError("need moment_2p >= 0 and s > 0")
    return convolution_prefactor(p) * moment_2p ** (1.0 / p) / math.sqrt(s)


def refined_bound(tau_p: float, frobenius_truncated: float) -> float:
    """``(tau + min(1, tau)) + sqrt(2 log(1 + c4 |Sigma~|_F^2))`` for ``p`` in ``{1, 2}``."""
    if tau_p < 0 or frobenius_truncated < 0:
        raise ParameterError("tail and covariance inputs must be nonnegative")
    return tau_p + min(1.0, tau_p) + math.sqrt(2.0 * math.log1p(C4 * frobenius_truncated**2))


def crude_refined_bound(tau_p: float, frobenius_truncated: float) -> float:
    """The simpler form ``2 tau + sqrt(2 log(1 + c4 |Sigma~|_F^2))``."""
    if tau_p < 0 or frobenius_truncated < 0:
        raise ParameterError("tail and covariance inputs must be nonnegative")
    return 2.0 * tau_p + math.sqrt(2.0 * math.log1p(C4 * frobenius_truncated**2))


def poincare_bound(C_P: float, trace_sigma: float) -> float:
    """``sqrt(C_P tr(Sigma))``, valid for ``W_1`` and ``W_2``."""
    if C_P < 0 or trace_sigma < 0:
        raise ParameterError("Poincare constant and trace must be nonnegative")
    return math.sqrt(C_P * trace_sigma)


def poincare_dimension_bound(C_P: float, d: int) -> float:
    """``C_P sqrt(d)``, using ``tr(Sigma) <= C_P d``."""
    if C_P < 0 or d < 1:
        raise ParameterError("need C_P >= 0 and d >= 1")
    return C_P * math.sqrt(d)


def moment_corollary_bound(p: int, second_moment: float, fourth_moment: float | None = None) -> float:
    """``(2 + sqrt(2 c4)) E|X|^2`` for ``p = 1``, ``(2 + sqrt(2 c4)) (E|X|^4)^{1/2}`` for ``p = 2``."""
    if p == 1:
        if second_moment < 0:
            raise ParameterError("moments must be nonnegative")
        return MOMENT_COROLLARY_CONSTANT * second_moment
    if p == 2:
        if fourth_moment is None or fourth_moment < 0:
            raise ParameterError("p = 2 needs a nonnegative fourth moment")
        return MOMENT_COROLLARY_CONSTANT * math.sqrt(fourth_moment)
    raise ParameterError("moment corollary holds for p in {1, 2}")


def kl_w2_bound(chi2: float) -> float:
    """``sqrt(2 log(1 + chi^2))``, an upper bound on ``W_2`` through KL and Talagrand."""
    if chi2 < 0:
        raise ParameterError("chi-square divergence is nonnegative")
    return math.sqrt(2.0 * math.log1p(chi2))


# ---------------------------------------------------------------- bias bound


def regime_violations(h: float, gamma: float, m: float, L: float, C_G: float = 0.0) -> list[str]:
    """Names of the violated step-size / friction constraints (empty when in regime)."""
    out = []
    if gamma < math.sqrt(8.0 * L):
        out.append(f"gamma >= sqrt(8L) ({gamma:g} < {math.sqrt(8.0 * L):g})")
    if not h < 1.0 / (2.0 * gamma):
        out.append(f"h < 1/(2 gamma) ({h:g} >= {1.0 / (2.0 * gamma):g})")
    if C_G > 0 and not h < m * L / (20.0 * C_G * gamma):
        out.append(f"h < mL/(20 C_G gamma) ({h:g} >= {m * L / (20.0 * C_G * gamma):g})")
    return out


def check_regime(h: float, gamma: float, m: float, L: float, C_G: float = 0.0) -> None:
    bad = regime_violations(h, gamma, m, L, C_G)
    if bad:
        raise RegimeError(bad[0], "regime violated: " + "; ".join(bad))


@dataclass(frozen=True)
class BiasBoundInputs:
    h: float
    gamma: float
    m: float
    L: float
    d: int
    C_G: float
    sigma_p: float
    T: float
    p: int = 2

    def __post_init__(self):
        if self.p not in (1, 2):
            raise ParameterError("the bias bound is stated for p in {1, 2}")
        if min(self.h, self.gamma, self.m, self.L) <= 0 or self.d < 1:
            raise ParameterError("h, gamma, m, L must be positive and d >= 1")
        if min(self.C_G, self.sigma_p, self.T) < 0:
            raise ParameterError("C_G, sigma_p and T must be nonnegative")
        check_regime(self.h, self.gamma, self.m, self.L, self.C_G)


def sg_ubu_bias_bound(inputs: BiasBoundInputs) -> float:
    """Asymptotic ``W_p`` bias bound of stochastic-gradient UBU."""
    h, g, m, L, d = inputs.h, inputs.gamma, inputs.m, inputs.L, inputs.d
    sd, sL = math.sqrt(d), math.sqrt(L)
    prefactor = g * L * h / (m * L - 20.0 * h * inputs.C_G * g)
    disc = 33.0 * sd * (sL + g)
    noise = 5.0 * (3.0 * math.sqrt(inputs.C_G) * sd / sL + 3.0 * inputs.sigma_p + inputs.T)
    return prefactor * (disc + noise)


def plug_in_term(variant: str, *, L: float, sigma_2p: float | None = None, poincare_trace_integral: float | None = None,
                 tau_p_Y: float | None = None, lambda_max_sq_mean: float | None = None, h: float | None = None,
                 gamma: float | None = None, d: int | None = None) -> float:
    """Upper bounds on the convolution term ``T`` of the bias bound.

    ``"i"``: ``126 sigma_{2p}^2 / sqrt(L)``.
    ``"ii"``: ``4 sqrt(int C_P tr Cov dpi) / sqrt(L)``.
    ``"iii"``: ``8 tau_p(Y)/(h^2 sqrt(L)) + 10 e^{-h gamma} sqrt(d) (E lambda_max^2)^{1/2} / sqrt(L)``.
    """
    if L <= 0:
        raise ParameterError("L must be positive")
    sL = math.sqrt(L)

    def need(name, value):
        if value is None:
            raise ParameterError(f"plug-in ({variant}) needs {name}")
        if value < 0:
            raise ParameterError(f"{name} must be nonnegative")
        return value

    if variant == "i":
        return 126.0 * need("sigma_2p", sigma_2p) ** 2 / sL
    if variant == "ii":
        return 4.0 * math.sqrt(need("poincare_trace_integral", poincare_trace_integral)) / sL
    if variant == "iii":
        tau = need("tau_p_Y", tau_p_Y)
        lam = need("lambda_max_sq_mean", lambda_max_sq_mean)
        hh = need("h", h)
        gg = need("gamma", gamma)
        dd = need("d", d)
        if hh <= 0:
            raise ParameterError("h must be positive")
        return 8.0 * tau / (hh**2 * sL) + 10.0 * math.exp(-hh * gg) * math.sqrt(dd) * math.sqrt(lam) / sL
    raise ParameterError(f"unknown plug-in variant {variant!r}; expected 'i', 'ii' or 'iii'")


def contraction_factor(h: float, gamma: float, m: float, L: float, C_G: float = 0.0, n: int = 1) -> float:
    """``(1 - mh/(4 gamma) + 5 h^2 C_G / L)^{n/2}`` (the full-gradient factor when ``C_G = 0``)."""
    if n < 0:
        raise ParameterError("n must be nonnegative")
    check_regime(h, gamma, m, L, C_G)
    base = 1.0 - m * h / (4.0 * gamma) + 5.0 * h**2 * C_G / L
    if base > 1.0:
        raise ParameterError(f"contraction base {base} exceeds 1")
    return base ** (n / 2.0)


# ---------------------------------------------------------------- spike example


def spike_lower_bound(s: float, d: int) -> float:
    """``max(0, s/2 - sqrt(2 log d))``, a lower bound on ``W_1`` for the spike law convolved with ``N(0, I)``."""
    if d < 2 or s <= 0:
        raise ParameterError("need d >= 2 and s > 0")
    return max(0.0, s / 2.0 - math.sqrt(2.0 * math.log(d)))


def spike_clean_regime(s: float, d: int) -> bool:
    """Whether ``s >= 4 sqrt(2 log d)``, where the lower bound is at least ``s/4``."""
    return s >= 4.0 * math.sqrt(2.0 * math.log(d))


def spike_covariance_frobenius(s: float, d: int, p: float = 1.0) -> float:
    """``|Cov|_F`` of the spike law: ``(p s^2/d) sqrt(d)``."""
    return p * s**2 / d * math.sqrt(d)


# ---------------------------------------------------------------- statistics


@dataclass(frozen=True)
class TailStats:
    tau1: float
    tau2: float
    sigma_tilde: np.ndarray
    frobenius: float


def tail_and_truncated_cov(points, weights=None, *, sample: bool = False) -> TailStats:
    """Tail terms at threshold 1 and the centred truncated covariance.

    ``points`` are atoms of a discrete measure (with ``weights``, uniform by
    default) or, with ``sample=True``, i.i.d. draws, whose mean must be zero
    within three standard errors.
    """
    X = np.asarray(points, dtype=float)
    X = X[:, None] if X.ndim == 1 else X
    n = X.shape[0]
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (n,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ParameterError("weights must be a probability vector matching the points")
    mean = w @ X
    if sample:
        se = X.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(X.shape[1])
        if np.any(np.abs(mean) > 3.0 * se + TOL.centering_atol):
            raise ParameterError("sample mean differs from zero by more than 3 standard errors")
    elif np.any(np.abs(mean) > TOL.centering_atol):
        raise ParameterError(f"measure is not centred (mean {mean})")
    norms = np.linalg.norm(X, axis=1)
    outside = norms > 1.0
    tau1 = float(w @ (norms * outside))
    tau2 = float(math.sqrt(w @ (norms**2 * outside)))
    trunc = X * (~outside)[:, None]
    tmean = w @ trunc
    centred = trunc - tmean
    sigma = (centred * w[:, None]).T @ centred
    return TailStats(tau1, tau2, sigma, float(np.linalg.norm(sigma)))


def chi2_convolution(atoms, weights=None) -> tuple[float, float]:
    """``chi^2(mu * N(0,I) || N(0,I)) = sum_ij w_i w_j e^{<x_i, x_j>} - 1`` for centred ``mu`` in the radius-2 ball.

    Returns ``(chi2, c4 |Sigma|_F^2)`` and checks that the second dominates.
    """
    X = np.asarray(atoms, dtype=float)
    X = X[:, None] if X.ndim == 1 else X
    n = X.shape[0]
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    if np.any(np.linalg.norm(X, axis=1) > 2.0 + 1e-12):
        raise ParameterError("atoms must lie in the ball of radius 2")
    mean = w @ X
    if np.any(np.abs(mean) > TOL.centering_atol):
        raise ParameterError(f"measure is not centred (mean {mean})")
    gram = X @ X.T
    chi2 = float(w @ np.expm1(gram) @ w)
    cov = (X * w[:, None]).T @ X
    bound = C4 * float(np.sum(cov**2))
    if chi2 > bound * (1.0 + 1e-12) + 1e-15:
        raise InvariantError(f"chi-square {chi2} exceeds c4 |Sigma|_F^2 = {bound}")
    return chi2, bound


def tau_p_monte_carlo(Y, p: int) -> tuple[float, float]:
    """Estimate ``tau_p(Y)`` from samples; returns ``(estimate, standard_error)``.

    ``tau_1 = E|Y| 1{|Y|>1}``, ``tau_2 = (E|Y|^2 1{|Y|>1})^{1/2}``.  The
    estimator is unbiased for ``tau_1`` and delta-method for ``tau_2``; its
    variance is driven by the rare event ``|Y| > 1``.
    """
    Y = np.asarray(Y, dtype=float)
    Y = Y[:, None] if Y.ndim == 1 else Y
    r = np.linalg.norm(Y, axis=1)
    n = r.size
    if n < 2:
        raise ParameterError("need at least two samples")
    if p == 1:
        vals = r * (r > 1.0)
        return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n))
    if p == 2:
        vals = r**2 * (r > 1.0)
        mean = float(vals.mean())
        se = float(vals.std(ddof=1) / math.sqrt(n))
        est = math.sqrt(mean)
        return est, (0.5 * se / est if est > 0 else se**0.5)
    raise ParameterError("tau_p is defined for p in {1, 2}")


def estimate_tau_p_y(estimator, target_sampler, h: float, gamma: float, p: int, n_samples: int, rng) -> tuple[float, float]:
    """``tau_p`` of ``Y = h e^{-h gamma/2} (grad V(X) - G(X, w))`` with ``X`` drawn from the target."""
    X = np.asarray(target_sampler(rng, n_samples), dtype=float).reshape(n_samples, -1)
    R = estimator.potential.gradient(X) - estimator(X, rng)
    return tau_p_monte_carlo(h * math.exp(-h * gamma / 2.0) * R, p)
