"""Wasserstein distances, the twisted norm, and Lipschitz test functions.

One-dimensional distances come from quantile functions: for empirical
measures of equal size this is the sorted-sample formula, for smooth laws a
midpoint quadrature of ``|F_P^-1(u) - F_Q^-1(u)|^p`` over ``(0, 1)``.  Exact
optimal transport is only used for small weighted atom sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.special import ndtr, ndtri

from .errors import NumericError, ParameterError
from .tolerances import TOL


@dataclass(frozen=True)
class SortedSample:
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        if vals.size < 1:
            raise ParameterError("a sample needs at least one value")
        if np.any(np.diff(vals) < 0):
            raise ParameterError("values must be nondecreasing; use SortedSample.of")
        object.__setattr__(self, "values", vals)

    @classmethod
    def of(cls, data) -> "SortedSample":
        return cls(np.sort(np.asarray(data, dtype=float).reshape(-1)))

    @property
    def n(self) -> int:
        return self.values.size

    def quantile(self, u):
        """Left-continuous inverse CDF of the empirical measure."""
        u = np.asarray(u, dtype=float)
        idx = np.clip(np.ceil(u * self.n).astype(int) - 1, 0, self.n - 1)
        return self.values[idx]


def _sorted(xs) -> np.ndarray:
    return xs.values if isinstance(xs, SortedSample) else SortedSample.of(xs).values


def w1_sorted(xs, ys, p: int = 1) -> float:
    """``W_p`` between two equal-size empirical measures via order statistics (p = 1 or 2)."""
    a, b = _sorted(xs), _sorted(ys)
    if a.size != b.size:
        raise ParameterError(f"sample sizes differ: {a.size} != {b.size}")
    diff = np.abs(a - b)
    if p == 1:
        return float(diff.mean())
    if p == 2:
        return float(math.sqrt(np.mean(diff**2)))
    raise ParameterError("w1_sorted supports p = 1 or 2")


def w2_sorted(xs, ys) -> float:
    return w1_sorted(xs, ys, p=2)


def quadrature_nodes(n: int) -> np.ndarray:
    return (np.arange(n) + 0.5) / n


def wp_quantile_1d(quantile_p: Callable, quantile_q: Callable, p: float = 1.0, n_quadrature: int = TOL.quadrature_nodes) -> float:
    """``(int_0^1 |F_P^-1(u) - F_Q^-1(u)|^p du)^(1/p)`` by the midpoint rule."""
    if p < 1:
        raise ParameterError(f"need p >= 1, got {p}")
    u = quadrature_nodes(int(n_quadrature))
    qp = np.asarray(quantile_p(u), dtype=float)
    qq = np.asarray(quantile_q(u), dtype=float)
    if not (np.all(np.isfinite(qp)) and np.all(np.isfinite(qq))):
        raise NumericError("non-finite quantile at an interior quadrature node")
    return float(np.mean(np.abs(qp - qq) ** p) ** (1.0 / p))


def normal_quantile(mean: float = 0.0, stdev: float = 1.0) -> Callable:
    return lambda u: mean + stdev * ndtri(u)


# ---------------------------------------------------------------- Gaussian mixtures


def _components(components):
    comp = np.asarray(components, dtype=float).reshape(-1, 3)
    w, mu, sd = comp[:, 0], comp[:, 1], comp[:, 2]
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ParameterError("mixture weights must be nonnegative and sum to 1")
    if np.any(sd <= 0):
        raise ParameterError("component standard deviations must be positive")
    return w, mu, sd


def mixture_cdf(components, q):
    """CDF of ``sum_k w_k N(mu_k, sd_k^2)`` at ``q``; ``components`` rows are ``(w, mu, sd)``."""
    w, mu, sd = _components(components)
    q = np.asarray(q, dtype=float)
    return np.sum(w * ndtr((q[..., None] - mu) / sd), axis=-1)


def mixture_pdf(components, q):
    w, mu, sd = _components(components)
    q = np.asarray(q, dtype=float)
    z = (q[..., None] - mu) / sd
    return np.sum(w * np.exp(-0.5 * z * z) / (sd * math.sqrt(2.0 * math.pi)), axis=-1)


def mixture_quantile(components, u, atol: float = TOL.bisection_atol):
    """Inverse CDF of a Gaussian mixture.

    Bisection on the CDF, accelerated by Newton steps on the log CDF (log
    survival function above the median) whenever they land inside the current
    bracket, to absolute tolerance ``atol``.  The bracket starts at the
    mixture mean plus or minus ten times the largest standard deviation (and
    the spread of the means) and is expanded geometrically.
    """
    w, mu, sd = _components(components)
    comps = np.column_stack([w, mu, sd])
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise ParameterError("quantile levels must lie in (0, 1)")
    center = float(w @ mu)
    width = 10.0 * float(sd.max()) + float(np.abs(mu - center).max())
    lo = np.full(u.shape, center - width)
    hi = np.full(u.shape, center + width)
    for _ in range(TOL.bracket_expansions):
        bad_lo = mixture_cdf(comps, lo) > u
        bad_hi = mixture_cdf(comps, hi) < u
        if not (bad_lo.any() or bad_hi.any()):
            break
        span = hi - lo
        lo = np.where(bad_lo, lo - span, lo)
        hi = np.where(bad_hi, hi + span, hi)
    else:
        raise NumericError("could not bracket the mixture quantile")
    upper = u > 0.5
    tail = np.where(upper, 1.0 - u, u)
    sign = np.where(upper, -1.0, 1.0)
    norm = 1.0 / (sd * math.sqrt(2.0 * math.pi))
    log_tail = np.log(tail)

    def log_excess(q, up, lt, sg):
        # sign * (log T(q) - log T(x*)) with T the CDF below the median and the
        # survival function above it; increasing in q, slope pdf/T
        z = (q[:, None] - mu) / sd
        dens = np.exp(-0.5 * z * z) @ (w * norm)
        z = np.where(up[:, None], -z, z)
        T = ndtr(z) @ w
        with np.errstate(divide="ignore"):
            return sg * (np.log(T) - lt), dens, T

    # start from the moment-matched Gaussian quantile
    spread = math.sqrt(float(w @ (sd**2 + (mu - center) ** 2)))
    x = np.clip(center + spread * ndtri(u), lo, hi).reshape(-1)
    lo, hi = lo.reshape(-1), hi.reshape(-1)
    up, lt, sg = upper.reshape(-1), log_tail.reshape(-1), sign.reshape(-1)
    active = np.arange(x.size)
    max_iter = int(math.ceil(math.log2(max(float(np.max(hi - lo)), atol) / atol))) + 2
    for _ in range(max_iter):
        xa, la, ha = x[active], lo[active], hi[active]
        f, dens, T = log_excess(xa, up[active], lt[active], sg[active])
        la = np.where(f < 0, xa, la)
        ha = np.where(f < 0, ha, xa)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = xa - f * T / dens
        inside = np.isfinite(newton) & (newton >= la) & (newton <= ha)
        x_new = np.where(inside, newton, 0.5 * (la + ha))
        done = (np.abs(x_new - xa) <= 0.5 * atol) | (ha - la <= atol)
        x[active], lo[active], hi[active] = x_new, la, ha
        active = active[~done]
        if active.size == 0:
            break
    return x.reshape(u.shape)


def _mixture_components(atoms, weights):
    atoms = np.asarray(atoms, dtype=float).reshape(-1)
    if weights is None:
        weights = np.full(atoms.size, 1.0 / atoms.size)
    return atoms, np.column_stack([np.asarray(weights, dtype=float), atoms, np.ones(atoms.size)])


GAUSS_SPAN = 10.0


def convolved_wp_1d(atoms, weights=None, p: float = 2.0, n_quadrature: int = TOL.quadrature_nodes) -> float:
    """``W_p(mu * N(0,1), N(0,1))`` for a discrete 1-D ``mu``; see :func:`convolved_wp_orders`."""
    return convolved_wp_orders(atoms, weights, (p,), n_quadrature)[p]


def convolved_wp_orders(atoms, weights=None, orders=(1.0, 2.0), n_quadrature: int = TOL.quadrature_nodes) -> dict:
    """``{p: W_p(mu * N(0,1), N(0,1))}`` for several orders from one quantile evaluation.

    The quantile integral is taken in the Gaussian variable ``z = Phi^-1(u)``:
    ``int |Q(Phi(z)) - z|^p phi(z) dz`` by the trapezoid rule on
    ``[-10, 10]`` with ``n_quadrature`` intervals.  The integrand is smooth
    with Gaussian decay there, whereas in ``u`` its derivative is singular at
    both ends and the midpoint rule converges only like ``1/n``.  Upper-half
    quantiles come from the reflected mixture, so no level is rounded to 1.
    """
    atoms, comps = _mixture_components(atoms, weights)
    if any(p < 1 for p in orders):
        raise ParameterError("need every order p >= 1")
    if np.all(atoms == 0.0):
        return {p: 0.0 for p in orders}
    n = int(n_quadrature)
    z = np.linspace(-GAUSS_SPAN, GAUSS_SPAN, n + 1)
    lower = z <= 0.0
    q = np.empty_like(z)
    q[lower] = mixture_quantile(comps, ndtr(z[lower]))
    reflected = comps * np.array([1.0, -1.0, 1.0])
    q[~lower] = -mixture_quantile(reflected, ndtr(-z[~lower]))
    diff = np.abs(q - z)
    if not np.all(np.isfinite(diff)):
        raise NumericError("non-finite quantile at a quadrature node")
    w = np.exp(-0.5 * z * z) * (z[1] - z[0]) / math.sqrt(2.0 * math.pi)
    w[[0, -1]] *= 0.5
    return {p: float((w @ diff**p) ** (1.0 / p)) for p in orders}


# ---------------------------------------------------------------- twisted norm


@dataclass(frozen=True)
class WeightedNorm:
    """``|z|_{a,b}^2 = |x|^2 + 2b<x, v> + a|v|^2``, positive definite when ``b^2 < a``."""

    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b >= 0 and self.b**2 < self.a):
            raise ParameterError(f"need a > 0, b >= 0 and b^2 < a; got a={self.a}, b={self.b}")

    @classmethod
    def for_target(cls, L: float, gamma: float) -> "WeightedNorm":
        """The default pair ``a = 1/L``, ``b = 1/gamma``."""
        return cls(1.0 / L, 1.0 / gamma)

    def squared(self, x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        return (x * x).sum(axis=-1) + 2.0 * self.b * (x * v).sum(axis=-1) + self.a * (v * v).sum(axis=-1)

    def __call__(self, x, v):
        return np.sqrt(self.squared(x, v))

    def equivalence_constants(self) -> tuple[float, float]:
        """``(c, C)`` with ``c |z|^2 <= |z|_{a,b}^2 <= C |z|^2``; needs ``b^2 < a/4``."""
        if not self.b**2 < self.a / 4.0:
            raise ParameterError("norm equivalence constants need b^2 < a/4")
        return 0.5 * min(self.a, 1.0), 1.5 * max(self.a, 1.0)


def weighted_norm_sq(x, v, a: float, b: float):
    """The quadratic form ``|x|^2 + 2b<x,v> + a|v|^2``."""
    return WeightedNorm(a, b).squared(x, v)


def weighted_norm(x, v, a: float, b: float):
    return np.sqrt(weighted_norm_sq(x, v, a, b))


# ---------------------------------------------------------------- test functions


def f_k(x, k: int):
    """Euclidean norm of the ``k`` largest-magnitude coordinates."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    if not 1 <= k <= d:
        raise ParameterError(f"need 1 <= k <= {d}, got {k}")
    sq = x * x
    top = np.partition(sq, d - k, axis=-1)[..., d - k :]
    return np.sqrt(top.sum(axis=-1))


def max_coordinate(x):
    """``max_i x_i`` (signed)."""
    return np.asarray(x, dtype=float).max(axis=-1)


# ---------------------------------------------------------------- exact OT


def _atoms(points):
    pts = np.asarray(points, dtype=float)
    return pts[:, None] if pts.ndim == 1 else pts


def exact_wp_small(x_atoms, y_atoms, p: float = 1.0, x_weights=None, y_weights=None) -> float:
    """Exact ``W_p`` between two weighted atom sets (at most 64 atoms each)."""
    X, Y = _atoms(x_atoms), _atoms(y_atoms)
    if X.shape[1] != Y.shape[1]:
        raise ParameterError("atom dimensions differ")
    n, m = len(X), len(Y)
    if max(n, m) > TOL.max_exact_atoms:
        raise ParameterError(f"exact OT is limited to {TOL.max_exact_atoms} atoms")
    a = np.full(n, 1.0 / n) if x_weights is None else np.asarray(x_weights, dtype=float)
    b = np.full(m, 1.0 / m) if y_weights is None else np.asarray(y_weights, dtype=float)
    if np.any(a < 0) or np.any(b < 0) or abs(a.sum() - b.sum()) > 1e-12 * max(1.0, a.sum()):
        raise ParameterError("atom weights must be nonnegative with equal total mass")
    cost = np.linalg.norm(X[:, None, :] - Y[None, :, :], axis=-1) ** p
    if n == m and np.allclose(a, a[0], rtol=0, atol=1e-15) and np.allclose(b, a[0], rtol=0, atol=1e-15):
        rows, cols = linear_sum_assignment(cost)
        total = float(cost[rows, cols].sum() * a[0])
    else:
        A_eq = np.zeros((n + m, n * m))
        for i in range(n):
            A_eq[i, i * m : (i + 1) * m] = 1.0
        for j in range(m):
            A_eq[n + j, j::m] = 1.0
        res = linprog(cost.reshape(-1), A_eq=A_eq, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
        if not res.success:
            raise ParameterError(f"transport problem infeasible: {res.message}")
        total = float(res.fun)
    return max(total, 0.0) ** (1.0 / p)


def sample_std_error(values) -> float:
    """Standard error of the mean of a 1-D array."""
    values = np.asarray(values, dtype=float)
    return float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else float("nan")


def paired_difference(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Mean and standard error of ``a - b`` for paired replicas."""
    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return float(diff.mean()), sample_std_error(diff)
