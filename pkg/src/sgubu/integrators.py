"""Kinetic Langevin integrators: UBU, Euler-Maruyama kinetic, and SGLD.

The UBU step is ``U(h/2) o B(h) o U(h/2)``: ``U`` solves the
Ornstein-Uhlenbeck part ``dx = v dt, dv = -gamma v dt + sqrt(2 gamma) dW``
exactly over half a step, ``B`` is the gradient kick ``v <- v - h G(x)``.
Each half-step consumes two independent standard normal vectors.

States are arrays of shape ``(..., d)``; every step function is vectorised
over the leading axes so an ensemble of chains advances together.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from . import kernels as _kernels
from .errors import DivergenceError, NumericError, ParameterError
from .gradients import ExactGradient, GradientEstimator, MinibatchGradient, NoiseInjectedGradient
from .model import Potential, QuadraticSumPotential
from .rng import ChainStreams
from .tolerances import TOL

KINDS = ("ubu", "em", "sgld")
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_KIND_CODE = {"ubu": 0, "em": 1, "sgld": 2}


@dataclass(frozen=True)
class KineticState:
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        if self.x.shape != self.v.shape:
            raise ParameterError(f"position shape {self.x.shape} != velocity shape {self.v.shape}")

    def check_finite(self):
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.v))):
            raise NumericError("state has non-finite entries")
        return self


def _sigma2_series(x: float) -> float:
    """``2x - 3 + 4e^-x - e^-2x`` summed as a power series (small ``x``)."""
    total = 0.0
    term_fact = 1.0
    xn = 1.0
    for n in range(1, 40):
        term_fact *= n
        xn *= x
        if n < 3:
            continue
        coef = (4.0 * (-1) ** n - (-2.0) ** n) / term_fact
        total += coef * xn
        if abs(coef * xn) < 1e-18 * abs(total):
            break
    return total


def _one_minus_tanhc(u: float) -> float:
    """``1 - tanh(u)/u`` without cancellation."""
    if u < 1e-2:
        u2 = u * u
        return u2 / 3.0 - 2.0 * u2 * u2 / 15.0 + 17.0 * u2**3 / 315.0 - 62.0 * u2**4 / 2835.0
    return 1.0 - math.tanh(u) / u


@dataclass(frozen=True)
class StepCoefficients:
    """Deterministic coefficients of one kinetic step of size ``h`` with friction ``gamma``."""

    h: float
    gamma: float

    def __post_init__(self):
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ParameterError(f"stepsize must be positive, got {self.h}")
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ParameterError(f"friction must be positive, got {self.gamma}")

    @property
    def eta(self) -> float:
        return math.exp(-self.gamma * self.h / 2.0)

    def E(self, t: float) -> float:
        return math.exp(-self.gamma * t)

    def F(self, t: float) -> float:
        return -math.expm1(-self.gamma * t) / self.gamma

    def sigma2_at(self, t: float) -> float:
        """``2 gamma int_0^t F(u)^2 du``."""
        g = self.gamma
        x = g * t
        if x < TOL.taylor_threshold:
            return _sigma2_series(x) / g**2
        return 2.0 * t / g - 3.0 / g**2 + 4.0 * math.exp(-x) / g**2 - math.exp(-2.0 * x) / g**2

    @property
    def sigma2(self) -> float:
        return self.sigma2_at(self.h)

    @property
    def cov_x2(self) -> float:
        """``2h/gamma - 2(1 - e^{-gamma h})/gamma^2``, the variance of the position block."""
        g = self.gamma
        x = g * self.h
        if x < TOL.taylor_threshold:
            return 2.0 * _x_plus_expm1(x) / g**2
        return 2.0 * self.h / g - 2.0 * (1.0 - math.exp(-x)) / g**2

    @cached_property
    def u_coefficients(self) -> tuple[float, float, float, float, float, float]:
        """``(eta, F(h/2), nx1, nx2, nv1, nv2)`` for one exact OU half-step.

        The half-step is ``x' = x + F(h/2) v + nx1 xi1 + nx2 xi2``,
        ``v' = eta v + nv1 xi1 + nv2 xi2`` with the noise built from the two
        correlated Gaussians ``Z1 = sqrt(h/2) xi1`` and
        ``Z2 = sqrt((1-eta^2)/(2 gamma)) (sqrt(r) xi1 + sqrt(1-r) xi2)``,
        ``r = (1-eta)/(1+eta) * 4/(gamma h)``.
        """
        g, h = self.gamma, self.h
        eta = self.eta
        u = g * h / 4.0
        r = math.tanh(u) / u if u >= 1e-2 else 1.0 - _one_minus_tanhc(u)
        one_minus_r = _one_minus_tanhc(u)
        if r < -TOL.sqrt_clamp or one_minus_r < -TOL.sqrt_clamp:
            raise NumericError(f"negative value under square root in the OU half-step (gamma*h = {g * h:g})")
        r = max(r, 0.0)
        one_minus_r = max(one_minus_r, 0.0)
        s2 = math.sqrt(-math.expm1(-g * h) / (2.0 * g))
        z1 = math.sqrt(h / 2.0)
        sq_r = math.sqrt(r)
        sq_1r = math.sqrt(one_minus_r)
        a = math.sqrt(2.0 / g)
        b = math.sqrt(2.0 * g)
        nx1 = a * (z1 - s2 * sq_r)
        nx2 = -a * s2 * sq_1r
        nv1 = b * s2 * sq_r
        nv2 = b * s2 * sq_1r
        return (eta, self.F(h / 2.0), nx1, nx2, nv1, nv2)


def _x_plus_expm1(x: float) -> float:
    """``x + e^{-x} - 1``, summed as a series for small ``x``."""
    total, term = 0.0, 1.0
    for n in range(1, 40):
        term *= -x / n
        if n >= 2:
            total += term
        if n >= 2 and abs(term) < 1e-18 * abs(total):
            break
    return total


def _coeffs(h, gamma) -> StepCoefficients:
    return h if isinstance(h, StepCoefficients) else StepCoefficients(float(h), float(gamma))


def _draw_pair(rng, shape, noise):
    if noise is not None:
        return noise
    if rng is None:
        z = np.zeros(shape)
        return z, z
    return rng.standard_normal(shape), rng.standard_normal(shape)


def _u_apply(x, v, uc, xi1, xi2):
    eta, F, nx1, nx2, nv1, nv2 = uc
    x_new = x + F * v + nx1 * xi1 + nx2 * xi2
    v_new = eta * v + nv1 * xi1 + nv2 * xi2
    return x_new, v_new


def u_half_step(state: KineticState, h, gamma=None, rng=None, *, noise=None) -> KineticState:
    """Exact OU flow over time ``h/2``.

    ``noise=(xi1, xi2)`` fixes the Gaussian draws; with neither ``noise`` nor
    ``rng`` the noise-free flow is applied.
    """
    c = _coeffs(h, gamma)
    xi1, xi2 = _draw_pair(rng, state.x.shape, noise)
    return KineticState(*_u_apply(state.x, state.v, c.u_coefficients, xi1, xi2))


def b_step(state: KineticState, h: float, grad) -> KineticState:
    """Gradient kick ``(x, v) -> (x, v - h grad)``."""
    return KineticState(state.x, state.v - h * np.asarray(grad, dtype=float))


def ubu_step(state: KineticState, coeffs: StepCoefficients, gradient_fn: Callable, rng=None, *, noise=None) -> KineticState:
    """One UBU step; ``gradient_fn(y)`` is evaluated once, at the midpoint position.

    ``noise`` may fix the four normal draws ``(xi1_a, xi2_a, xi1_b, xi2_b)``.
    """
    shape = state.x.shape
    if noise is None:
        first = _draw_pair(rng, shape, None)
        second = _draw_pair(rng, shape, None)
    else:
        first, second = (noise[0], noise[1]), (noise[2], noise[3])
    uc = coeffs.u_coefficients
    y, v = _u_apply(state.x, state.v, uc, *first)
    v = v - coeffs.h * gradient_fn(y)
    return KineticState(*_u_apply(y, v, uc, *second))


def em_kinetic_step(state: KineticState, h: float, gamma: float, gradient_fn: Callable, rng=None, *, noise=None) -> KineticState:
    """Euler-Maruyama kinetic (SG-HMC) step, position first:

    ``x' = x + h v``; ``v' = v - h G(x') - h gamma v + sqrt(2 gamma h) xi``.
    """
    if noise is None:
        noise = np.zeros(state.x.shape) if rng is None else rng.standard_normal(state.x.shape)
    x = state.x + h * state.v
    g = gradient_fn(x)
    v = state.v - h * g - (h * gamma) * state.v + math.sqrt(2.0 * gamma * h) * noise
    return KineticState(x, v)


def sgld_step(x, h: float, gradient_fn: Callable, rng=None, *, noise=None):
    """``x - h G(x) + sqrt(2h) xi``."""
    x = np.asarray(x, dtype=float)
    if noise is None:
        noise = np.zeros(x.shape) if rng is None else rng.standard_normal(x.shape)
    return x - h * gradient_fn(x) + math.sqrt(2.0 * h) * noise


def block_gaussian_sample(coeffs: StepCoefficients, rng, dim: int = 1, size=()):
    """Draw ``(X1, X2) = Sigma(h, gamma) Z`` with the lower-triangular factor
    ``[[I, 0], [F(h) I, sigma(h, gamma) I]]``.
    """
    s2 = coeffs.sigma2
    if s2 < -TOL.sqrt_clamp:
        raise NumericError(f"sigma^2 = {s2} is negative")
    size = (size,) if isinstance(size, int) else tuple(size)
    z1 = rng.standard_normal(size + (dim,))
    z2 = rng.standard_normal(size + (dim,))
    return z1, coeffs.F(coeffs.h) * z1 + math.sqrt(max(s2, 0.0)) * z2


def block_gaussian_covariance(coeffs: StepCoefficients):
    """The 2x2 per-coordinate covariance of ``(X1, X2)``."""
    F = coeffs.F(coeffs.h)
    return np.array([[1.0, F], [F, coeffs.cov_x2]])


# ---------------------------------------------------------------- closed-form representation


def ubu_integrals_from_noise(coeffs: StepCoefficients, noise):
    """Map the four half-step normals to the three stochastic integrals of one step.

    Returns ``(I_y, I_v, I_x)``: the noise in the midpoint position, the final
    velocity and the final position, so that
    ``v' = E(h) v - h E(h/2) G(y) + I_v``, ``y = x + F(h/2) v + I_y`` and
    ``x' = x + F(h) v - h F(h/2) G(y) + I_x``.
    """
    _, F, nx1, nx2, nv1, nv2 = coeffs.u_coefficients
    eta = coeffs.eta
    a1, a2, b1, b2 = noise
    nxa = nx1 * a1 + nx2 * a2
    nva = nv1 * a1 + nv2 * a2
    nxb = nx1 * b1 + nx2 * b2
    nvb = nv1 * b1 + nv2 * b2
    return nxa, eta * nva + nvb, nxa + F * nva + nxb


def ubu_closed_form(state: KineticState, coeffs: StepCoefficients, gradient_fn: Callable, integrals) -> KineticState:
    """Evaluate the variation-of-constants update for given stochastic integrals."""
    I_y, I_v, I_x = integrals
    h = coeffs.h
    y = state.x + coeffs.F(h / 2) * state.v + I_y
    g = gradient_fn(y)
    v = coeffs.E(h) * state.v - h * coeffs.E(h / 2) * g + I_v
    x = state.x + coeffs.F(h) * state.v - h * coeffs.F(h / 2) * g + I_x
    return KineticState(x, v)


# ---------------------------------------------------------------- chains


@dataclass
class ChainResult:
    positions: np.ndarray | None
    velocities: np.ndarray | None
    final_state: KineticState
    n_steps: int
    n_kept: int
    backend: str


def _as_estimator(target) -> GradientEstimator:
    if isinstance(target, GradientEstimator):
        return target
    if isinstance(target, Potential):
        return ExactGradient(target)
    raise ParameterError("target must be a Potential or a GradientEstimator")


def kernel_eligible(est: GradientEstimator) -> bool:
    """Whether the compiled kernels can advance chains driven by ``est``."""
    if not isinstance(est.potential, QuadraticSumPotential):
        return False
    return type(est) in (ExactGradient, MinibatchGradient, NoiseInjectedGradient)


def block_size(n_chains: int, dim: int) -> int:
    """Steps per random-number block; a function of the ensemble shape only."""
    return int(min(8192, max(1, (1 << 20) // max(1, n_chains * dim))))


def _draw_block(kind, est, streams, S, C, d):
    xi1 = streams.xi1.standard_normal((S, 2, C, d))
    xi2 = streams.xi2.standard_normal((S, 2, C, d)) if kind == "ubu" else None
    batch = None
    noise = None
    if hasattr(est, "draw_batch"):
        batch = est.draw_batch(streams.batch, (S, C))
    if isinstance(est, NoiseInjectedGradient):
        noise = est.law.sample(streams.noise, (S, C))
    return xi1, xi2, batch, noise


def _generic_block(kind, est, x, v, c, xi1, xi2, batch, noise, streams, out_x, out_v):
    """Advance with numpy step functions; same draws and update order as the kernels."""
    h = c.h
    for s in range(xi1.shape[0]):
        if batch is not None:
            grad = lambda y, b=batch[s]: est.evaluate(y, b)  # noqa: E731
        elif noise is not None:
            grad = lambda y, e=noise[s]: est.potential.gradient(y) + e  # noqa: E731
        elif isinstance(est, ExactGradient):
            grad = est.potential.gradient
        else:
            grad = lambda y: est(y, streams.batch)  # noqa: E731
        if kind == "ubu":
            st = ubu_step(KineticState(x, v), c, grad, noise=(xi1[s, 0], xi2[s, 0], xi1[s, 1], xi2[s, 1]))
            x, v = st.x, st.v
        elif kind == "em":
            st = em_kinetic_step(KineticState(x, v), h, c.gamma, grad, noise=(xi1[s, 0] + xi1[s, 1]) * _INV_SQRT2)
            x, v = st.x, st.v
        else:
            x = sgld_step(x, h, grad, noise=(xi1[s, 0] + xi1[s, 1]) * _INV_SQRT2)
        if out_x is not None:
            out_x[s] = x
            if out_v is not None:
                out_v[s] = v
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            return x, v, s
    return x, v, -1


def run_chain(
    kind: str,
    target,
    h: float,
    gamma: float | None = None,
    n_steps: int = 1000,
    burn_in: int = 0,
    thin: int = 1,
    seed=0,
    *,
    n_chains: int = 1,
    x0=None,
    v0=None,
    record_velocity: bool = False,
    sink: Callable | None = None,
    backend: str | None = None,
    batch_seed=None,
    streams: ChainStreams | None = None,
) -> ChainResult:
    """Run ``n_chains`` independent chains of ``kind`` in ``{"ubu", "em", "sgld"}``.

    Positions after ``burn_in`` are kept every ``thin`` steps.  They are either
    handed to ``sink(positions, velocities)`` block by block (shapes
    ``(m, n_chains, d)``) or, when no sink is given, returned stacked in the
    result.  Quadratic-sum targets run through the compiled kernels (or their
    pure-Python twin, per ``backend``); other targets use the numpy step
    functions.  Output is a deterministic function of ``seed``.

    Every kind consumes the same Brownian path: per step two half-step normals
    ``xi1[0], xi1[1]`` (plus ``xi2`` for the UBU inner integrals), and the Euler
    schemes use the full-step increment ``(xi1[0] + xi1[1]) / sqrt(2)``.  Runs
    of different kinds from one seed are therefore driven by common noise and
    common minibatches.
    """
    if kind not in KINDS:
        raise ParameterError(f"unknown integrator {kind!r}; expected one of {KINDS}")
    if not (n_steps >= 0 and 0 <= burn_in <= n_steps):
        raise ParameterError("need 0 <= burn_in <= n_steps")
    if thin < 1:
        raise ParameterError("thin must be >= 1")
    est = _as_estimator(target)
    if kind != "sgld":
        if gamma is None:
            raise ParameterError(f"{kind} needs a friction gamma")
        c = StepCoefficients(float(h), float(gamma))
    else:
        c = StepCoefficients(float(h), 1.0 if gamma is None else float(gamma))
    streams = streams or ChainStreams(seed, batch_seed=batch_seed)
    d = est.dim
    C = int(n_chains)
    if x0 is None:
        pot = est.potential
        x0 = pot.mean if isinstance(pot, QuadraticSumPotential) else np.zeros(d)
    x = np.ascontiguousarray(np.broadcast_to(np.asarray(x0, dtype=float), (C, d)).copy())
    if v0 is None:
        v0 = streams.init.standard_normal((C, d)) if kind != "sgld" else np.zeros((C, d))
    v = np.ascontiguousarray(np.broadcast_to(np.asarray(v0, dtype=float), (C, d)).copy())

    use_kernel = kernel_eligible(est)
    impl = _kernels.get(backend) if use_kernel else None
    if use_kernel:
        pot = est.potential
        P, Cn = pot.precisions, pot.centers
        scale = getattr(est, "scale", 1.0)
        sq = math.sqrt(2.0 * c.gamma * c.h) if kind == "em" else math.sqrt(2.0 * c.h)
        uc = c.u_coefficients if kind == "ubu" else (0.0,) * 6

    collected_x, collected_v = [], []
    S = block_size(C, d)
    done = 0
    n_kept = 0
    while done < n_steps:
        m = min(S, n_steps - done)
        xi1, xi2, batch, noise = _draw_block(kind, est, streams, m, C, d)
        first, last = done + 1, done + m
        record = last > burn_in
        out_x = np.empty((m, C, d)) if record else None
        out_v = np.empty((m, C, d)) if (record and record_velocity) else None
        if use_kernel:
            bad = impl.advance(
                _KIND_CODE[kind], x, v, c.h, c.h * c.gamma, sq, uc, P, Cn, float(scale),
                None if batch is None else np.ascontiguousarray(batch, dtype=np.int64),
                xi1, xi2, noise, out_x, out_v,
            )
        else:
            # a diverging chain overflows before the finiteness check reports it
            with np.errstate(over="ignore", invalid="ignore"):
                x, v, bad = _generic_block(kind, est, x, v, c, xi1, xi2, batch, noise, streams, out_x, out_v)
        if bad >= 0:
            raise DivergenceError(done + bad + 1)
        if record:
            steps = np.arange(first, last + 1)
            keep = (steps > burn_in) & ((steps - burn_in) % thin == 0)
            if keep.any():
                kx = out_x[keep]
                kv = out_v[keep] if out_v is not None else None
                n_kept += kx.shape[0]
                if sink is not None:
                    sink(kx, kv)
                else:
                    collected_x.append(kx)
                    if kv is not None:
                        collected_v.append(kv)
        done = last

    positions = velocities = None
    if sink is None:
        positions = np.concatenate(collected_x) if collected_x else np.empty((0, C, d))
        if record_velocity:
            velocities = np.concatenate(collected_v) if collected_v else np.empty((0, C, d))
    return ChainResult(
        positions=positions,
        velocities=velocities,
        final_state=KineticState(x, v),
        n_steps=n_steps,
        n_kept=n_kept,
        backend=impl.NAME if use_kernel else "numpy",
    )
