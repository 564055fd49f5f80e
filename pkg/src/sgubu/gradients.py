"""Unbiased stochastic gradient estimators and gradient-noise laws.

An estimator is called as ``est(x, rng)`` with ``x`` of shape ``(..., d)`` and
returns one independent draw of ``G(x, omega)`` per leading index.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .errors import ParameterError
from .model import LogisticRegressionPotential, Potential, QuadraticSumPotential
from .tolerances import TOL


def _size(size) -> tuple:
    if size is None:
        return ()
    return (int(size),) if isinstance(size, (int, np.integer)) else tuple(size)


# ---------------------------------------------------------------- noise laws


class NoiseLaw:
    """A centred law on R^d, sampled independently of the position."""

    dim: int

    def sample(self, rng, size=()):
        raise NotImplementedError

    def covariance(self):
        raise NotImplementedError

    def second_moment(self) -> float:
        """``E|xi|^2``."""
        return float(np.trace(self.covariance()))


class ZeroNoise(NoiseLaw):
    def __init__(self, dim: int):
        self.dim = int(dim)

    def sample(self, rng, size=()):
        return np.zeros(_size(size) + (self.dim,))

    def covariance(self):
        return np.zeros((self.dim, self.dim))


class GaussianNoise(NoiseLaw):
    """``N(0, scale^2 I_d)``."""

    def __init__(self, scale: float, dim: int):
        if scale < 0:
            raise ParameterError("noise scale must be nonnegative")
        self.scale = float(scale)
        self.dim = int(dim)

    def sample(self, rng, size=()):
        return self.scale * rng.standard_normal(_size(size) + (self.dim,))

    def covariance(self):
        return self.scale**2 * np.eye(self.dim)

    def poincare_constant(self) -> float:
        return self.scale**2


class SpikeNoise(NoiseLaw):
    """``(1 - p) delta_0 + p * uniform{+-s e_i}``; covariance ``(p s^2 / d) I``."""

    def __init__(self, s: float, dim: int, p: float = 1.0):
        if dim < 2:
            raise ParameterError("spike noise needs d >= 2")
        if s <= 0:
            raise ParameterError("spike size s must be positive")
        if not 0.0 <= p <= 1.0:
            raise ParameterError("mixture probability must lie in [0, 1]")
        self.s = float(s)
        self.dim = int(dim)
        self.p = float(p)

    def sample(self, rng, size=()):
        return sample_spike(self.s, self.dim, self.p, rng, size)

    def covariance(self):
        return (self.p * self.s**2 / self.dim) * np.eye(self.dim)

    def second_moment(self) -> float:
        return self.p * self.s**2


def sample_spike(s: float, d: int, p: float, rng, size=()):
    """Draws from the spike mixture: 0 w.p. ``1-p``, else ``+-s e_I`` with ``I`` uniform."""
    if d < 2:
        raise ParameterError("spike noise needs d >= 2")
    if s <= 0 or not 0.0 <= p <= 1.0:
        raise ParameterError("need s > 0 and 0 <= p <= 1")
    size = _size(size)
    on = rng.random(size) < p
    idx = rng.integers(0, d, size)
    sign = 2.0 * rng.integers(0, 2, size) - 1.0
    out = np.zeros(size + (d,))
    np.put_along_axis(out, np.asarray(idx)[..., None], np.asarray(on * sign * s)[..., None], axis=-1)
    return out


# ---------------------------------------------------------------- estimators


class GradientEstimator:
    """Unbiased estimator ``G(x, omega)`` of ``grad V``.

    ``C_G`` is the bound on ``E|D_x G - Hess V|_op^2`` when it is known
    (``None`` otherwise).
    """

    potential: Potential
    C_G: float | None = None
    name = "gradient"

    def __call__(self, x, rng):
        raise NotImplementedError

    def noise_covariance(self, x):
        """``Cov(G(x, .))`` when available in closed form, else ``None``."""
        return None

    @property
    def dim(self) -> int:
        return self.potential.dim


class ExactGradient(GradientEstimator):
    name = "exact"
    C_G = 0.0

    def __init__(self, potential: Potential):
        self.potential = potential

    def __call__(self, x, rng=None):
        return self.potential.gradient(x)

    def noise_covariance(self, x):
        return np.zeros((self.dim, self.dim))


def _fixed_gradient(potential, x):
    if isinstance(potential, LogisticRegressionPotential):
        return np.asarray(x, dtype=float) / potential.prior_var
    return 0.0


def _component_gradients(potential, x, idx):
    """``grad U_i(x)`` for each index in ``idx`` (shape ``(..., b)``)."""
    if isinstance(potential, QuadraticSumPotential):
        x = np.asarray(x, dtype=float)
        return potential.precisions[idx] * (x[..., None, :] - potential.centers[idx])
    return potential.component_gradients(x, idx)


class MinibatchGradient(GradientEstimator):
    """With-replacement minibatch estimator ``fixed(x) + (K/b) sum_{i in B} grad U_i(x)``.

    ``fixed`` is the non-subsampled part of the gradient (the prior term for
    logistic regression, zero for quadratic sums).
    """

    name = "minibatch"

    def __init__(self, potential: Potential, batch_size: int):
        K = potential.n_components
        if not 1 <= batch_size <= K:
            raise ParameterError(f"batch size must be in [1, {K}], got {batch_size}")
        self.potential = potential
        self.batch_size = int(batch_size)
        self.n_components = K
        self.scale = K / batch_size
        self._cg = None

    def draw_batch(self, rng, size=()):
        return rng.integers(0, self.n_components, _size(size) + (self.batch_size,))

    def evaluate(self, x, batch):
        """The estimator for a fixed batch (shape ``(..., b)``)."""
        comps = _component_gradients(self.potential, x, batch)
        return _fixed_gradient(self.potential, x) + self.scale * comps.sum(axis=-2)

    def __call__(self, x, rng):
        x = np.asarray(x, dtype=float)
        return self.evaluate(x, self.draw_batch(rng, x.shape[:-1]))

    @property
    def C_G(self):
        if self._cg is None and isinstance(self.potential, QuadraticSumPotential):
            self._cg = quadratic_minibatch_cg(self.potential, self.batch_size)
        return self._cg

    def set_cg(self, value: float):
        self._cg = float(value)

    def noise_covariance(self, x):
        if not isinstance(self.potential, QuadraticSumPotential):
            return None
        K = self.n_components
        g = np.stack([self.potential.component_gradient(x, i) for i in range(K)])
        gbar = g.mean(axis=0)
        cov_one = (g[:, :, None] * g[:, None, :]).mean(axis=0) - np.outer(gbar, gbar)
        return (K**2 / self.batch_size) * cov_one


def quadratic_minibatch_cg(potential: QuadraticSumPotential, batch_size: int, rng=None) -> float:
    """``E|D G - Hess V|_op^2`` for a diagonal quadratic sum.

    Exact enumeration over all ordered batches when there are at most 10^5 of
    them; Monte Carlo with ``TOL.cg_mc_samples`` batches otherwise.
    """
    K = potential.n_components
    scale = K / batch_size
    P = potential.precisions
    H = potential.hessian_diag
    if K**batch_size <= 100_000:
        total = 0.0
        count = 0
        for batch in itertools.product(range(K), repeat=batch_size):
            D = scale * P[list(batch)].sum(axis=0)
            total += float(np.max(np.abs(D - H))) ** 2
            count += 1
        return total / count
    rng = np.random.default_rng(0) if rng is None else rng
    idx = rng.integers(0, K, (TOL.cg_mc_samples, batch_size))
    D = scale * P[idx].sum(axis=1)
    return float(np.mean(np.max(np.abs(D - H), axis=1) ** 2))


def logistic_minibatch_cg(potential: LogisticRegressionPotential, batch_size: int, x_samples, rng) -> float:
    """Monte Carlo estimate of ``E|D G - Hess U|_op^2`` over ``(x, batch)`` pairs.

    One batch is drawn per supplied position; the control-variate and plain
    minibatch estimators share this constant.
    """
    x_samples = np.atleast_2d(x_samples)
    N = potential.n_obs
    scale = N / batch_size
    vals = np.empty(len(x_samples))
    for k, q in enumerate(x_samples):
        t = potential.X @ q
        s = 1.0 / (1.0 + np.exp(-t))
        w = s * (1.0 - s)
        full = (potential.X * w[:, None]).T @ potential.X
        idx = rng.integers(0, N, batch_size)
        Xb = potential.X[idx]
        sub = scale * (Xb * w[idx][:, None]).T @ Xb
        vals[k] = np.max(np.abs(np.linalg.eigvalsh(sub - full))) ** 2
    return float(vals.mean())


class ControlVariateGradient(GradientEstimator):
    """Minibatch estimator recentred at the mode ``q_min``.

    ``q/s2 + grad l(q_min) + (N/b) sum_{i in B} (grad l_i(q) - grad l_i(q_min))``,
    with ``grad l(q_min)`` the full data gradient, computed once.
    """

    name = "control_variate"

    def __init__(self, potential: LogisticRegressionPotential, q_min, batch_size: int, full_grad_at_min=None):
        N = potential.n_obs
        if not 1 <= batch_size <= N:
            raise ParameterError(f"batch size must be in [1, {N}], got {batch_size}")
        self.potential = potential
        self.q_min = np.asarray(q_min, dtype=float)
        self.batch_size = int(batch_size)
        self.full_grad_at_min = (
            potential.data_gradient(self.q_min) if full_grad_at_min is None else np.asarray(full_grad_at_min, dtype=float)
        )
        self.C_G = None

    def draw_batch(self, rng, size=()):
        return rng.integers(0, self.potential.n_obs, _size(size) + (self.batch_size,))

    def evaluate(self, q, batch):
        return control_variate_gradient(self.potential, q, self.q_min, self.full_grad_at_min, batch)

    def __call__(self, q, rng):
        q = np.asarray(q, dtype=float)
        return self.evaluate(q, self.draw_batch(rng, q.shape[:-1]))


class NoiseInjectedGradient(GradientEstimator):
    """``grad V(x) + xi`` with ``xi`` drawn from a centred noise law.

    The map ``x -> G(x, omega)`` has the same Jacobian as ``grad V`` for every
    ``omega``, so ``C_G = 0``.
    """

    name = "noise_injected"
    C_G = 0.0

    def __init__(self, potential: Potential, law: NoiseLaw):
        if law.dim != potential.dim:
            raise ParameterError("noise law dimension does not match the potential")
        self.potential = potential
        self.law = law

    def __call__(self, x, rng):
        x = np.asarray(x, dtype=float)
        return noise_injected_gradient(self.potential, self.law, x, rng)

    def noise_covariance(self, x=None):
        return self.law.covariance()


# ---------------------------------------------------------------- functional forms


def minibatch_gradient(potential, x, batch_size: int, rng):
    """One with-replacement minibatch draw; see :class:`MinibatchGradient`."""
    return MinibatchGradient(potential, batch_size)(x, rng)


def control_variate_gradient(blr: LogisticRegressionPotential, q, q_min, full_grad_at_min, batch, rng=None):
    """The control-variate estimator for an explicit batch of indices."""
    batch = np.asarray(batch)
    if batch.size == 0 or batch.shape[-1] == 0:
        raise ParameterError("control-variate estimator needs a non-empty batch")
    q = np.asarray(q, dtype=float)
    b = batch.shape[-1]
    diff = blr.component_gradients(q, batch) - blr.component_gradients(np.broadcast_to(q_min, q.shape), batch)
    return q / blr.prior_var + full_grad_at_min + (blr.n_obs / b) * diff.sum(axis=-2)


def noise_injected_gradient(potential, noise_law: NoiseLaw, x, rng):
    x = np.asarray(x, dtype=float)
    return potential.gradient(x) + noise_law.sample(rng, x.shape[:-1])


def estimate_sigma_p(estimator: GradientEstimator, target_sampler, p: float, n_samples: int, rng):
    """Monte Carlo ``sigma_p = (E |G(X, w) - grad V(X)|^p)^(1/p)`` with ``X ~ pi``.

    ``target_sampler(rng, n)`` returns ``n`` target draws.  Returns
    ``(estimate, standard_error)``, the error by the delta method.
    """
    if n_samples < TOL.min_sigma_samples:
        raise ParameterError(f"need at least {TOL.min_sigma_samples} samples, got {n_samples}")
    X = np.asarray(target_sampler(rng, n_samples), dtype=float).reshape(n_samples, -1)
    R = estimator(X, rng) - estimator.potential.gradient(X)
    r = np.linalg.norm(R, axis=-1) ** p
    mean = float(r.mean())
    se_mean = float(r.std(ddof=1) / math.sqrt(n_samples))
    if mean == 0.0:
        return 0.0, 0.0
    est = mean ** (1.0 / p)
    return est, (1.0 / p) * mean ** (1.0 / p - 1.0) * se_mean


def unbiasedness_zscores(estimator: GradientEstimator, x, n_samples: int, rng):
    """Per-coordinate z-scores of the Monte Carlo mean of ``G(x, .) - grad V(x)``.

    Coordinates whose sample variance is exactly zero report a z-score of 0
    when the mean error is exactly 0 and ``inf`` otherwise.
    """
    x = np.asarray(x, dtype=float)
    X = np.broadcast_to(x, (n_samples,) + x.shape)
    R = estimator(X, rng) - estimator.potential.gradient(x)
    mean = R.mean(axis=0)
    se = R.std(axis=0, ddof=1) / math.sqrt(n_samples)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, mean / np.where(se > 0, se, 1.0), np.where(np.abs(mean) < 1e-12 * (1 + np.abs(x).max()), 0.0, np.inf))
    return z
