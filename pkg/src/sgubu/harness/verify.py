"""Verification suites: each check compares an implementation against an
independent route (closed form, quadrature or Monte Carlo) and reports a
pass/fail record.  Checks never short-circuit one another.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import bounds, coupling
from ..errors import SgubuError
from ..gradients import (
    ControlVariateGradient,
    ExactGradient,
    GaussianNoise,
    MinibatchGradient,
    NoiseInjectedGradient,
    SpikeNoise,
    sample_spike,
)
from ..integrators import StepCoefficients, block_gaussian_covariance, block_gaussian_sample, run_chain
from ..metrics import WeightedNorm, convolved_wp_orders
from ..model import LogisticRegressionPotential, QuadraticMixturePotential, diagonal_quadratic, find_mode
from ..rng import cell_seed, generator


@dataclass
class CheckResult:
    name: str
    passed: bool
    violations: int
    details: dict = field(default_factory=dict)
    seconds: float = 0.0


# ---------------------------------------------------------------- covariance


class _FaultySigma2(StepCoefficients):
    """Coefficients with the sign of the ``e^{-2 gamma h}`` term of sigma^2 flipped."""

    def sigma2_at(self, t: float) -> float:
        g = self.gamma
        x = g * t
        return 2.0 * t / g - 3.0 / g**2 + 4.0 * math.exp(-x) / g**2 + math.exp(-2.0 * x) / g**2


def check_covariance(pairs=((2.0, 0.5), (math.sqrt(32.0), 0.05)), dim: int = 4, n: int = 1_000_000,
                     tol: float = 5e-3, seed: int = 0, fault: str | None = None) -> CheckResult:
    """Empirical covariance of the block Gaussian against the closed form, entry by entry."""
    worst = {}
    violations = 0
    for gamma, h in pairs:
        coeffs = StepCoefficients(h, gamma)
        sampler = _FaultySigma2(h, gamma) if fault == "sigma2_sign" else coeffs
        rng = generator(cell_seed(seed, "covariance", gamma, h))
        x1, x2 = block_gaussian_sample(sampler, rng, dim, n)
        Z = np.concatenate([x1, x2], axis=1)
        emp = Z.T @ Z / n
        exact = np.kron(block_gaussian_covariance(coeffs), np.eye(dim))
        err = np.abs(emp - exact)
        violations += int(np.sum(err > tol))
        worst[f"gamma={gamma:g},h={h:g}"] = float(err.max())
    return CheckResult("covariance", violations == 0, violations, {"max_abs_error": worst, "tol": tol})


# ---------------------------------------------------------------- contraction


def check_contraction(m: float = 1.0, L: float = 4.0, dim: int = 10, replicas: int = 200,
                      checkpoints=(100, 500, 2000), slack: float = 1.05, seed: int = 0,
                      backend: str | None = None) -> CheckResult:
    """Synchronously coupled UBU chains contract in the twisted norm at the predicted rate."""
    gamma = math.sqrt(8.0 * L)
    h = 1.0 / (4.0 * gamma)
    pot = diagonal_quadratic(np.linspace(m, L, dim))
    norm = WeightedNorm(1.0 / L, 1.0 / gamma)
    rng = generator(cell_seed(seed, "contraction", "init"))
    x0, v0 = rng.standard_normal((2, replicas, dim))
    y0, w0 = rng.standard_normal((2, replicas, dim))
    n_steps = max(checkpoints)
    thin = math.gcd(*checkpoints)
    runs = []
    for xs, vs in ((x0, v0), (y0, w0)):
        res = run_chain("ubu", pot, h, gamma, n_steps, 0, thin, seed=cell_seed(seed, "contraction", "noise"),
                        n_chains=replicas, x0=xs, v0=vs, record_velocity=True, backend=backend)
        runs.append(res)
    base = float(np.mean(norm.squared(x0 - y0, v0 - w0)))
    rate = 1.0 - m * h / (4.0 * gamma)
    ratios = {}
    violations = 0
    for n in checkpoints:
        i = n // thin - 1
        dx = runs[0].positions[i] - runs[1].positions[i]
        dv = runs[0].velocities[i] - runs[1].velocities[i]
        emp = float(np.mean(norm.squared(dx, dv)))
        allowed = slack * rate**n * base
        ratios[str(n)] = emp / allowed
        violations += int(emp > allowed)
    return CheckResult("contraction", violations == 0, violations,
                       {"empirical_over_allowed": ratios, "rate": rate, "h": h, "gamma": gamma})


# ---------------------------------------------------------------- convolution bounds


def random_centred_measure(rng, max_atoms: int = 8, radius: float = 3.0):
    """Atoms and weights of a random centred discrete measure on ``[-radius, radius]``."""
    k = int(rng.integers(2, max_atoms + 1))
    atoms = rng.uniform(-radius, radius, k)
    weights = rng.dirichlet(np.ones(k))
    atoms = atoms - weights @ atoms
    reach = np.abs(atoms).max()
    if reach > radius:
        atoms *= radius / reach
    return atoms, weights


def applicable_bounds(atoms, weights) -> dict:
    """Every convolution bound that applies to a centred 1-D discrete measure, keyed by ``(name, p)``."""
    m2 = float(weights @ atoms**2)
    m4 = float(weights @ atoms**4)
    tail = bounds.tail_and_truncated_cov(atoms, weights)
    out = {
        ("general", 1): bounds.general_convolution_bound(1, m2),
        ("general", 2): bounds.general_convolution_bound(2, m4),
        ("refined", 1): bounds.refined_bound(tail.tau1, tail.frobenius),
        ("refined", 2): bounds.refined_bound(tail.tau2, tail.frobenius),
        ("crude_refined", 1): bounds.crude_refined_bound(tail.tau1, tail.frobenius),
        ("crude_refined", 2): bounds.crude_refined_bound(tail.tau2, tail.frobenius),
        ("moment", 1): bounds.moment_corollary_bound(1, m2),
        ("moment", 2): bounds.moment_corollary_bound(2, m2, m4),
    }
    chi2 = float(weights @ np.expm1(np.outer(atoms, atoms)) @ weights)
    out[("chi2", 2)] = bounds.kl_w2_bound(chi2)
    out[("chi2", 1)] = out[("chi2", 2)]
    return out


def check_dominance(n_measures: int = 20, max_atoms: int = 8, radius: float = 3.0, seed: int = 0,
                    self_error_tol: float = 1e-6, n_quadrature: int = 2**16) -> CheckResult:
    """Quadrature ``W_p(mu * g, g)`` never exceeds any applicable bound; quadrature is converged."""
    rng = generator(cell_seed(seed, "dominance"))
    violations = 0
    worst_ratio = 0.0
    worst_self = 0.0
    for _ in range(n_measures):
        atoms, weights = random_centred_measure(rng, max_atoms, radius)
        exact = convolved_wp_orders(atoms, weights, (1.0, 2.0), n_quadrature)
        finer = convolved_wp_orders(atoms, weights, (1.0, 2.0), 2 * n_quadrature)
        worst_self = max(worst_self, *(abs(exact[p] - finer[p]) for p in exact))
        for (name, p), bound in applicable_bounds(atoms, weights).items():
            worst_ratio = max(worst_ratio, exact[float(p)] / bound)
            violations += int(exact[float(p)] > bound)
    violations += int(worst_self > self_error_tol)
    return CheckResult("dominance", violations == 0, violations,
                       {"max_exact_over_bound": worst_ratio, "quadrature_self_error": worst_self})


def check_two_component(deltas=tuple(np.round(np.arange(1, 11) / 10, 1)), orders=(1, 2)) -> CheckResult:
    """``W_p(N(0,1), (N(delta,1) + N(-delta,1))/2) <= K_p delta^2``."""
    violations = 0
    worst = 0.0
    for delta in deltas:
        exact = convolved_wp_orders(np.array([delta, -delta]), None, tuple(float(p) for p in orders))
        for p in orders:
            bound = bounds.K_p(p) * delta**2
            worst = max(worst, exact[float(p)] / bound)
            violations += int(exact[float(p)] > bound)
    return CheckResult("two_component", violations == 0, violations,
                       {"max_exact_over_bound": worst, "K_p": {str(p): bounds.K_p(p) for p in orders}})


def check_certificates(n_clouds: int = 10, n_atoms: int = 8, orders=(1, 2), seed: int = 0) -> CheckResult:
    """Quadrature ``W_p`` <= certified chain total <= closed form, with per-level guarantees."""
    rng = generator(cell_seed(seed, "certificates"))
    violations = 0
    worst_lower = worst_upper = 0.0
    min_ratio = math.inf
    for _ in range(n_clouds):
        points = rng.normal(0.0, rng.uniform(0.2, 1.5), n_atoms)
        exact = convolved_wp_orders(points - points.mean(), None, tuple(float(p) for p in orders))
        for p in orders:
            cloud = coupling.center_atoms(points, p)
            try:
                cert = coupling.chain_certificate(cloud, rng=rng)
            except SgubuError:
                violations += 1
                continue
            w = exact[float(p)]
            worst_lower = max(worst_lower, w / cert.total)
            worst_upper = max(worst_upper, cert.total / cert.closed_form)
            violations += int(w > cert.total) + int(cert.total > cert.closed_form)
            rate = bounds.contraction_rate(p)
            prev = cert.phi0
            for lv in cert.levels:
                min_ratio = min(min_ratio, lv.energy_ratio)
                violations += int(lv.energy_ratio < 0.5) + int(lv.phi > rate * prev * (1 + 1e-12))
                prev = lv.phi
    return CheckResult("certificates", violations == 0, violations,
                       {"max_exact_over_total": worst_lower, "max_total_over_closed_form": worst_upper,
                        "min_energy_ratio": min_ratio})


def check_chi2(n_measures: int = 100, max_atoms: int = 8, seed: int = 0) -> CheckResult:
    """Pairwise-sum chi^2 <= c4 |Sigma|_F^2 and the KL route dominates quadrature ``W_2``."""
    rng = generator(cell_seed(seed, "chi2"))
    violations = 0
    worst_chi = worst_w2 = 0.0
    for _ in range(n_measures):
        atoms, weights = random_centred_measure(rng, max_atoms, 2.0)
        chi2 = float(weights @ np.expm1(np.outer(atoms, atoms)) @ weights)
        bound = bounds.C4 * float(weights @ atoms**2) ** 2
        w2 = convolved_wp_orders(atoms, weights, (2.0,))[2.0]
        kl = bounds.kl_w2_bound(chi2)
        worst_chi = max(worst_chi, chi2 / bound)
        worst_w2 = max(worst_w2, w2 / kl)
        violations += int(chi2 > bound) + int(w2 > kl)
    return CheckResult("chi2", violations == 0, violations,
                       {"max_chi2_over_bound": worst_chi, "max_w2_over_kl": worst_w2})


# ---------------------------------------------------------------- gradient estimators


def synthetic_logistic(seed: int, dim: int = 20, n_obs: int = 1000, prior_var: float = 1e-3):
    """Logistic-regression posterior on Gaussian features with labels from a random plane."""
    rng = generator(cell_seed(seed, "logistic", dim, n_obs))
    X = rng.standard_normal((n_obs, dim))
    q_true = rng.standard_normal(dim)
    y = (rng.random(n_obs) < 1.0 / (1.0 + np.exp(-X @ q_true))).astype(float)
    return LogisticRegressionPotential(X, y, prior_var)


def estimator_zoo(seed: int = 0):
    """One instance of every gradient estimator, keyed by a short name."""
    toy = QuadraticMixturePotential.toy()
    quad = diagonal_quadratic(np.linspace(1.0, 4.0, 6))
    multi = type(quad)(np.linspace(0.5, 2.0, 18).reshape(3, 6), np.arange(18.0).reshape(3, 6) / 9.0)
    blr = synthetic_logistic(seed)
    q_min = find_mode(blr, np.zeros(blr.dim))
    return {
        "exact_toy": ExactGradient(toy),
        "minibatch_toy": MinibatchGradient(toy, 1),
        "minibatch_quadratic_sum": MinibatchGradient(multi, 2),
        "minibatch_logistic": MinibatchGradient(blr, 10),
        "control_variate_logistic": ControlVariateGradient(blr, q_min, 10),
        "gaussian_noise": NoiseInjectedGradient(quad, GaussianNoise(0.7, 6)),
        "spike_noise": NoiseInjectedGradient(quad, SpikeNoise(3.0, 6, 0.3)),
    }, q_min


def check_unbiasedness(n_points: int = 20, n_samples: int = 20_000, seed: int = 0) -> CheckResult:
    """``|mean(G - grad V)| <= 3 sqrt(sum var / n)`` at random points; control variate exact at the mode."""
    zoo, q_min = estimator_zoo(seed)
    violations = 0
    worst = {}
    for name, est in zoo.items():
        rng = generator(cell_seed(seed, "unbiased", name))
        d = est.dim
        scale = 0.05 if "logistic" in name else 1.0
        worst_z = 0.0
        for _ in range(n_points):
            x = scale * rng.standard_normal(d)
            X = np.broadcast_to(x, (n_samples, d))
            R = est(X, rng) - est.potential.gradient(x)
            err = float(np.linalg.norm(R.mean(axis=0)))
            spread = math.sqrt(float(R.var(axis=0, ddof=1).sum()) / n_samples)
            z = err / spread if spread > 0 else (0.0 if err <= 1e-12 * (1 + np.abs(x).max()) else math.inf)
            worst_z = max(worst_z, z)
            violations += int(z > 3.0)
        worst[name] = worst_z
    cv = zoo["control_variate_logistic"]
    n_obs = cv.potential.n_obs
    all_batches = (np.arange(n_obs)[:, None] + np.arange(cv.batch_size)) % n_obs
    G = cv.evaluate(np.broadcast_to(q_min, (all_batches.shape[0], cv.dim)), all_batches)
    cv_spread = float(np.max(np.ptp(G, axis=0)))
    violations += int(cv_spread != 0.0)
    return CheckResult("unbiasedness", violations == 0, violations,
                       {"max_standardised_error": worst, "control_variate_spread_at_mode": cv_spread})


# ---------------------------------------------------------------- kernels


def check_kernels(seed: int = 0) -> CheckResult:
    """The compiled and pure-Python kernels produce bit-identical chains."""
    from .. import kernels

    if not kernels.compiled_available():
        return CheckResult("kernels", True, 0, {"skipped": "compiled backend not built"})
    toy = QuadraticMixturePotential.toy()
    violations = 0
    for kind in ("ubu", "em", "sgld"):
        out = [run_chain(kind, MinibatchGradient(toy, 1), 0.05, 5.0, 2000, 0, 1, seed, n_chains=3, backend=b).positions
               for b in ("cython", "python")]
        violations += int(not np.array_equal(out[0], out[1]))
    return CheckResult("kernels", violations == 0, violations, {})


# ---------------------------------------------------------------- spike lower bound


def check_spike_lower(d: int = 1024, n: int = 100_000, seed: int = 0, chunk: int = 10_000) -> CheckResult:
    """Monte Carlo ``E max(Z + X) - E max Z`` against ``s/4`` at ``s = 4 sqrt(2 log d)``.

    ``Z`` is shared between the two expectations, so the difference is a paired mean.
    """
    s = 4.0 * math.sqrt(2.0 * math.log(d))
    rng = generator(cell_seed(seed, "spike_lower", d))
    diffs = np.empty(n)
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        z = rng.standard_normal((m, d))
        x = sample_spike(s, d, 1.0, rng, m)
        diffs[start : start + m] = (z + x).max(axis=1) - z.max(axis=1)
    gap = float(diffs.mean())
    se = float(diffs.std(ddof=1) / math.sqrt(n))
    target = bounds.spike_lower_bound(s, d)
    ok = bounds.spike_clean_regime(s, d) and gap >= s / 4.0 - 3.0 * se
    return CheckResult("spike_lower", bool(ok), int(not ok),
                       {"s": s, "gap": gap, "stderr": se, "s_over_4": s / 4.0, "lower_bound": target})


# ---------------------------------------------------------------- registry


REGISTRY = {
    "covariance": lambda cfg: check_covariance(seed=cfg.seed, n=cfg.verify["samples"], fault=cfg.verify["inject_fault"]),
    "contraction": lambda cfg: check_contraction(seed=cfg.seed, backend=cfg.backend),
    "dominance": lambda cfg: check_dominance(seed=cfg.seed),
    "two_component": lambda cfg: check_two_component(),
    "certificates": lambda cfg: check_certificates(seed=cfg.seed),
    "chi2": lambda cfg: check_chi2(n_measures=30, seed=cfg.seed),
    "spike_lower": lambda cfg: check_spike_lower(n=20_000, seed=cfg.seed),
    "unbiasedness": lambda cfg: check_unbiasedness(seed=cfg.seed),
    "kernels": lambda cfg: check_kernels(seed=cfg.seed),
}

FAULTS = ("sigma2_sign",)


def run_verify(cfg) -> list[CheckResult]:
    """Run every registered check; an exception inside one check is recorded as its failure."""
    results = []
    for name, check in REGISTRY.items():
        t0 = time.perf_counter()
        try:
            res = check(cfg)
        except Exception as exc:  # noqa: BLE001 - a crashing check is a failed check
            res = CheckResult(name, False, 1, {"error": f"{type(exc).__name__}: {exc}"})
        res.seconds = time.perf_counter() - t0
        results.append(res)
    return results


def report_json(results) -> str:
    return json.dumps(
        {"passed": all(r.passed for r in results), "n_checks": len(results), "checks": [asdict(r) for r in results]},
        indent=2, default=float,
    ) + "\n"
