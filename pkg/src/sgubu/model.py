"""Target potentials with curvature metadata.

All potentials are vectorised over leading axes: ``x`` may have shape
``(..., d)`` and ``value`` returns shape ``(...)``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import expit

from .errors import NonConvergenceError, ParameterError
from .tolerances import TOL


class Potential:
    """Base class: ``V(x)``, ``grad V(x)`` and the constants ``m <= L``."""

    dim: int
    m: float
    L: float

    @property
    def kappa(self) -> float:
        return self.L / self.m

    def value(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def _check_constants(self):
        if not (self.m > 0 and self.L >= self.m):
            raise ParameterError(f"need 0 < m <= L, got m={self.m}, L={self.L}")


class QuadraticSumPotential(Potential):
    """Sum of separable quadratics ``V(x) = sum_i 1/2 sum_j P_ij (x_j - c_ij)^2``.

    Each row of ``precisions``/``centers`` is one component; minibatch
    estimators subsample components.  The Hessian is the constant diagonal
    ``sum_i P_i``, so ``m`` and ``L`` are exact.
    """

    def __init__(self, precisions, centers):
        P = np.atleast_2d(np.asarray(precisions, dtype=float))
        C = np.atleast_2d(np.asarray(centers, dtype=float))
        if C.shape[0] == 1 and P.shape[0] > 1:
            C = np.repeat(C, P.shape[0], axis=0)
        if P.shape != C.shape:
            raise ParameterError(f"precision shape {P.shape} != center shape {C.shape}")
        if np.any(P < 0):
            raise ParameterError("component precisions must be nonnegative")
        self.precisions = np.ascontiguousarray(P)
        self.centers = np.ascontiguousarray(C)
        self.precisions.setflags(write=False)
        self.centers.setflags(write=False)
        self.dim = P.shape[1]
        self.hessian_diag = P.sum(axis=0)
        self.m = float(self.hessian_diag.min())
        self.L = float(self.hessian_diag.max())
        self._check_constants()

    @property
    def n_components(self) -> int:
        return self.precisions.shape[0]

    @property
    def mean(self):
        return (self.precisions * self.centers).sum(axis=0) / self.hessian_diag

    @property
    def variance(self):
        """Marginal variances of the Gaussian target ``exp(-V)``."""
        return 1.0 / self.hessian_diag

    def value(self, x):
        x = np.asarray(x, dtype=float)
        out = 0.0
        for i in range(self.n_components):
            out = out + 0.5 * (self.precisions[i] * (x - self.centers[i]) ** 2).sum(axis=-1)
        return out

    def component_gradient(self, x, i):
        return self.precisions[i] * (np.asarray(x, dtype=float) - self.centers[i])

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        g = np.zeros(np.broadcast_shapes(x.shape, (self.dim,)))
        for i in range(self.n_components):
            g += self.precisions[i] * (x - self.centers[i])
        return g

    def hessian(self, x=None):
        return np.diag(self.hessian_diag)

    def sample(self, rng, size=()):
        """Exact draws from the Gaussian target."""
        size = (size,) if isinstance(size, int) else tuple(size)
        z = rng.standard_normal(size + (self.dim,))
        return self.mean + z * np.sqrt(self.variance)


def standard_gaussian(dim: int) -> QuadraticSumPotential:
    """``V(x) = |x|^2 / 2``."""
    return QuadraticSumPotential(np.ones((1, dim)), np.zeros((1, dim)))


def diagonal_quadratic(precision, center=None) -> QuadraticSumPotential:
    precision = np.asarray(precision, dtype=float)
    center = np.zeros_like(precision) if center is None else np.asarray(center, dtype=float)
    return QuadraticSumPotential(precision[None, :], center[None, :])


class QuadraticMixturePotential(QuadraticSumPotential):
    """One-dimensional sum ``U(x) = sum_i (x - x_i)^2 / sigma_i^2``.

    Note there is no factor 1/2: component ``i`` has precision ``2/sigma_i^2``.
    """

    def __init__(self, centers, widths):
        centers = np.asarray(centers, dtype=float).reshape(-1)
        widths = np.asarray(widths, dtype=float).reshape(-1)
        if centers.shape != widths.shape:
            raise ParameterError("centers and widths must have the same length")
        if np.any(widths <= 0):
            raise ParameterError("widths must be positive")
        self.component_centers = centers
        self.widths = widths
        super().__init__((2.0 / widths**2)[:, None], centers[:, None])

    @classmethod
    def toy(cls) -> "QuadraticMixturePotential":
        """The two-term toy target: centers (-1, 1), widths (0.5, 2)."""
        return cls([-1.0, 1.0], [0.5, 2.0])


def toy_target_moments(toy: QuadraticMixturePotential) -> tuple[float, float]:
    """Mean and variance of the Gaussian ``exp(-sum_i U_i)``, by completing the square."""
    w = 1.0 / toy.widths**2
    precision = 2.0 * w.sum()
    mean = float((w * toy.component_centers).sum() / w.sum())
    return mean, float(1.0 / precision)


class LogisticRegressionPotential(Potential):
    """Negative log-posterior of Bayesian logistic regression with a Gaussian prior.

    ``U(q) = |q|^2/(2 s2) + sum_i [log(1 + exp(x_i.q)) - y_i x_i.q]``.
    ``m = 1/s2`` and ``L = 1/s2 + lambda_max(X^T X)/4`` (power iteration).
    """

    def __init__(self, X, y, prior_var: float, power_iters: int = 500):
        X = np.ascontiguousarray(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).reshape(-1)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise ParameterError("X must be (N, d) and y must have N entries")
        if not np.all((y == 0) | (y == 1)):
            raise ParameterError("labels must be 0 or 1")
        if prior_var <= 0:
            raise ParameterError("prior variance must be positive")
        self.X = X
        self.y = y
        self.X.setflags(write=False)
        self.prior_var = float(prior_var)
        self.n_obs, self.dim = X.shape
        self.m = 1.0 / self.prior_var
        self.L = self.m + 0.25 * _power_iteration(X, power_iters)
        self._check_constants()

    @property
    def n_components(self) -> int:
        return self.n_obs

    def value(self, q):
        q = np.asarray(q, dtype=float)
        t = q @ self.X.T
        # log(1 + e^t) without overflow
        softplus = np.logaddexp(0.0, t)
        return 0.5 * (q**2).sum(axis=-1) / self.prior_var + (softplus - self.y * t).sum(axis=-1)

    def data_gradient(self, q):
        """``sum_i grad l_i(q)``."""
        q = np.asarray(q, dtype=float)
        r = expit(q @ self.X.T) - self.y
        return r @ self.X

    def component_gradients(self, q, idx):
        """``grad l_i(q)`` for the indices ``idx``; shape ``idx.shape + (d,)``.

        ``q`` of shape ``(..., d)`` pairs with ``idx`` of shape ``(..., b)``.
        """
        q = np.asarray(q, dtype=float)
        idx = np.asarray(idx)
        Xb = self.X[idx]
        t = np.einsum("...bd,...d->...b", Xb, q)
        r = expit(t) - self.y[idx]
        return r[..., None] * Xb

    def gradient(self, q):
        q = np.asarray(q, dtype=float)
        return q / self.prior_var + self.data_gradient(q)

    def hessian(self, q):
        q = np.asarray(q, dtype=float)
        s = expit(self.X @ q)
        w = s * (1.0 - s)
        return np.eye(self.dim) / self.prior_var + (self.X * w[:, None]).T @ self.X


def _power_iteration(X, iters: int) -> float:
    """Largest eigenvalue of ``X^T X``."""
    d = X.shape[1]
    v = np.ones(d) / math.sqrt(d)
    lam = 0.0
    for _ in range(iters):
        w = X.T @ (X @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        new = float(v @ (X.T @ (X @ v)))
        if abs(new - lam) <= 1e-12 * max(1.0, abs(new)):
            return new
        lam = new
    return lam


def largest_eigenvalue(matrix) -> float:
    """Largest eigenvalue of a symmetric positive semidefinite matrix."""
    return float(np.linalg.eigvalsh(np.asarray(matrix, dtype=float))[-1])


def find_mode(potential: Potential, x0, tol: float = TOL.mode_tol, max_iter: int = TOL.mode_max_iter):
    """Gradient descent with Armijo backtracking (halving, never below ``1/L``) to ``|grad V| <= tol``.

    Raises :class:`NonConvergenceError` carrying the last iterate when the
    iteration cap is reached.
    """
    x = np.array(x0, dtype=float).reshape(potential.dim)
    safe = 1.0 / potential.L
    step = safe
    fx = float(potential.value(x))
    g = potential.gradient(x)
    for _ in range(max_iter):
        gnorm2 = float(g @ g)
        if math.sqrt(gnorm2) <= tol:
            return x
        # 1/L always satisfies the Armijo test for an L-smooth potential, so
        # backtracking stops there; this also keeps rounding noise near the
        # optimum from shrinking the step without bound
        t = 2.0 * step
        while t > safe:
            x_new = x - t * g
            f_new = float(potential.value(x_new))
            if f_new <= fx - 0.5 * t * gnorm2:
                break
            t *= 0.5
        else:
            t = safe
            x_new = x - t * g
            f_new = float(potential.value(x_new))
        step = t
        x, fx = x_new, f_new
        g = potential.gradient(x)
    if float(np.linalg.norm(g)) <= tol:
        return x
    raise NonConvergenceError(
        f"mode search did not reach |grad| <= {tol} in {max_iter} iterations "
        f"(final |grad| = {np.linalg.norm(g):.3e})",
        last_iterate=x,
    )
