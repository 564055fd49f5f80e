"""Experiment drivers: bias sweeps, spike tables, logistic regression and bound reports.

Every driver returns a list of :class:`SweepResult` rows.  Cells run in a
thread pool; each cell seeds its own streams from the master seed and a cell
key, and rows are merged in key order, so output does not depend on the
number of threads or on scheduling.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .. import bounds
from ..errors import DivergenceError, ParameterError, RegimeError
from ..gradients import (
    ControlVariateGradient,
    ExactGradient,
    GaussianNoise,
    MinibatchGradient,
    NoiseInjectedGradient,
    SpikeNoise,
    ZeroNoise,
    estimate_sigma_p,
)
from ..integrators import run_chain
from ..metrics import SortedSample, f_k, paired_difference, sample_std_error, w1_sorted
from ..model import (
    LogisticRegressionPotential,
    QuadraticMixturePotential,
    find_mode,
    largest_eigenvalue,
    standard_gaussian,
    toy_target_moments,
)
from ..rng import cell_seed, generator
from .config import METHOD_TABLE
from .io import OUT_OF_REGIME_TAG, SweepResult


def kinetic_regime_ok(method: str, h: float, gamma: float) -> bool:
    """The harness guard ``h < 1/(2 gamma)`` for kinetic methods (SGLD is unguarded)."""
    kind, _ = METHOD_TABLE[method]
    return kind == "sgld" or h < 1.0 / (2.0 * gamma)


def guarded_label(method: str, h: float, gamma: float, allow: bool) -> str:
    """``method``, tagged when out of regime; raises unless ``allow``."""
    if kinetic_regime_ok(method, h, gamma):
        return method
    if not allow:
        raise RegimeError(
            "h < 1/(2 gamma)",
            f"{method} at h={h:g}, gamma={gamma:g} violates h < 1/(2 gamma); pass --allow-out-of-regime to run it",
        )
    return method + OUT_OF_REGIME_TAG


def _pool_map(fn, items, threads: int):
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------- targets and estimators


def build_target(cfg):
    """``(potential, exact sampler or None)`` for the configured target."""
    kind = cfg.target.get("kind", "toy")
    if kind == "toy":
        pot = QuadraticMixturePotential.toy()
        mean, var = toy_target_moments(pot)
        sd = math.sqrt(var)
        return pot, lambda rng, n: rng.normal(mean, sd, (n, 1))
    if kind == "gaussian":
        dim = int(cfg.target.get("dim", 1))
        return standard_gaussian(dim), lambda rng, n: rng.standard_normal((n, dim))
    raise ParameterError(f"target {kind!r} has no exact sampler; use the blr experiment")


def build_estimator(pot, noise: dict):
    kind = noise.get("kind", "minibatch")
    d = pot.dim
    if kind == "minibatch":
        return MinibatchGradient(pot, int(noise.get("batch_size", 1)))
    if kind == "gaussian":
        return NoiseInjectedGradient(pot, GaussianNoise(float(noise["scale"]), d))
    if kind == "spike":
        return NoiseInjectedGradient(pot, SpikeNoise(float(noise["s"]), d, float(noise.get("p", 1.0))))
    if kind == "none":
        return NoiseInjectedGradient(pot, ZeroNoise(d))
    raise ParameterError(f"noise {kind!r} is not available for this target")


# ---------------------------------------------------------------- bias sweep


def loglog_slope(hs, values, stderrs) -> tuple[float, float]:
    """Least-squares slope of ``log value`` on ``log h`` and its delta-method standard error."""
    lh = np.log(np.asarray(hs, dtype=float))
    lv = np.log(np.asarray(values, dtype=float))
    rel = np.asarray(stderrs, dtype=float) / np.asarray(values, dtype=float)
    c = lh - lh.mean()
    w = c / float(c @ c)
    return float(w @ lv), float(math.sqrt(float((w * w) @ (rel * rel))))


def run_bias_sweep(cfg) -> list[SweepResult]:
    """W1 bias of each (method, h, gamma) cell against exact target draws.

    Replicas are parallel chains of one ensemble.  Chain streams are keyed by
    ``(h, gamma)`` only, so every method sees the same Brownian path and
    minibatches; replica ``r`` is compared with its own exact sample keyed by
    ``r``.  Paired differences between methods therefore cancel most of the
    estimator noise.
    """
    pot, sampler = build_target(cfg)
    if pot.dim != 1:
        raise ParameterError("the bias sweep compares one-dimensional marginals")
    est = build_estimator(pot, cfg.noise)
    R, N = cfg.replicas, cfg.n_samples
    n_steps = cfg.burn_in + N * cfg.thin
    cells = []
    for gamma in cfg.gamma:
        for h in cfg.h:
            for method in cfg.methods:
                cells.append((method, h, gamma, guarded_label(method, h, gamma, cfg.allow_out_of_regime)))

    def reference(r):
        return SortedSample.of(sampler(generator(cell_seed(cfg.seed, "sweep", "reference", r)), N))

    refs = _pool_map(reference, range(R), cfg.threads)

    def floor(r):
        return w1_sorted(refs[r], sampler(generator(cell_seed(cfg.seed, "sweep", "floor", r)), N))

    floors = _pool_map(floor, range(R), cfg.threads)

    def run_cell(cell):
        method, h, gamma, _ = cell
        kind, stochastic = METHOD_TABLE[method]
        t0 = time.perf_counter()
        try:
            res = run_chain(kind, est if stochastic else ExactGradient(pot), h, gamma, n_steps, cfg.burn_in, cfg.thin,
                            seed=cell_seed(cfg.seed, "sweep", "chain", h, gamma), n_chains=R, backend=cfg.backend)
        except DivergenceError as exc:
            return {"diverged": exc.step, "time": time.perf_counter() - t0}
        X = res.positions[:, :, 0]
        biases = np.array([w1_sorted(X[:, r], refs[r]) for r in range(R)])
        return {"biases": biases, "time": time.perf_counter() - t0}

    outcomes = dict(zip([c[:3] for c in cells], _pool_map(run_cell, cells, cfg.threads)))
    labels = {c[:3]: c[3] for c in cells}
    rows = [SweepResult("sweep", "exact", None, None, "w1_floor", float(np.mean(floors)),
                        sample_std_error(floors), N, cfg.seed)]
    for key in (c[:3] for c in cells):
        method, h, gamma = key
        out = outcomes[key]
        if "diverged" in out:
            rows.append(SweepResult("sweep", labels[key], h, gamma, "divergence_step", float(out["diverged"]), 0.0, 0,
                                    cfg.seed, out["time"]))
            continue
        b = out["biases"]
        rows.append(SweepResult("sweep", labels[key], h, gamma, "w1_bias", float(b.mean()), sample_std_error(b), N,
                                cfg.seed, out["time"]))
    # paired differences of each method against SG-UBU on common noise
    for gamma in cfg.gamma:
        for h in cfg.h:
            base = ("SG-UBU", h, gamma)
            if base not in outcomes or "biases" not in outcomes[base]:
                continue
            for method in cfg.methods:
                key = (method, h, gamma)
                if method == "SG-UBU" or "biases" not in outcomes[key]:
                    continue
                mean, se = paired_difference(outcomes[key]["biases"], outcomes[base]["biases"])
                tag = OUT_OF_REGIME_TAG if OUT_OF_REGIME_TAG in labels[key] + labels[base] else ""
                rows.append(SweepResult("sweep", f"{method}-SG-UBU{tag}", h, gamma, "w1_bias_paired_diff", mean, se, N,
                                        cfg.seed))
    for gamma in cfg.gamma:
        for method in cfg.methods:
            pts = [(h, outcomes[(method, h, gamma)]) for h in cfg.h]
            pts = [(h, o["biases"]) for h, o in pts if "biases" in o]
            if len(pts) < 2:
                continue
            hs = [h for h, _ in pts]
            slope, se = loglog_slope(hs, [b.mean() for _, b in pts], [sample_std_error(b) for _, b in pts])
            tag = OUT_OF_REGIME_TAG if any(OUT_OF_REGIME_TAG in labels[(method, h, gamma)] for h in hs) else ""
            rows.append(SweepResult("sweep", method + tag, None, gamma, "loglog_slope", slope, se, len(pts), cfg.seed))
    return rows


# ---------------------------------------------------------------- spike tables


def spike_parameters(d: int, alpha: float, parameterization: str = "size") -> dict:
    """Step size, spike probability and size, and test-function order for dimension ``d``.

    ``"size"``: ``h = d^-alpha``, ``p = h d^(1-alpha)/log d``, ``s = (8/h) sqrt(log d)``.
    ``"covariance"``: same ``h`` and ``p`` with ``s`` rescaled so that the noise
    covariance is ``64/(h sqrt d)`` per coordinate.  The two agree at ``alpha = 1/2``.
    """
    if d < 3 or not 0 < alpha < 1:
        raise ParameterError("need d >= 3 and 0 < alpha < 1")
    h = d ** (-alpha)
    log_d = math.log(d)
    p = h * d ** (1.0 - alpha) / log_d
    if p > 1.0:
        raise ParameterError(f"spike probability {p:g} exceeds 1 at d={d}")
    s = (8.0 / h) * math.sqrt(log_d)
    if parameterization == "covariance":
        s = math.sqrt(64.0 / (h * math.sqrt(d)) * d / p)
    elif parameterization != "size":
        raise ParameterError(f"unknown parameterization {parameterization!r}")
    k = math.ceil(d ** (1.0 - alpha) / log_d)
    return {"h": h, "p": p, "s": s, "k": k, "cov_scale": p * s * s / d}


def _reference_fk(d: int, k: int, n: int, seed, chunk: int = 10_000):
    rng = generator(seed)
    total = total_sq = 0.0
    done = 0
    while done < n:
        m = min(chunk, n - done)
        v = f_k(rng.standard_normal((m, d)), k)
        total += float(v.sum())
        total_sq += float((v * v).sum())
        done += m
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0) * n / (n - 1)
    return mean, math.sqrt(var / n)


def run_spike_table(cfg) -> list[SweepResult]:
    """Long-run SG-UBU average of ``f_k`` minus its exact standard-Gaussian value, per dimension and noise."""
    sp = cfg.spike
    gamma = float(sp["gamma"])
    C = int(sp["chains"])
    rows = []
    cells = []
    for d in sp["dims"]:
        d = int(d)
        par = spike_parameters(d, float(sp["alpha"]), sp["parameterization"])
        label = guarded_label("SG-UBU", par["h"], gamma, cfg.allow_out_of_regime)
        for noise in sp["noises"]:
            cells.append((d, noise, par, label))

    def ref_cell(d):
        par = spike_parameters(d, float(sp["alpha"]), sp["parameterization"])
        return _reference_fk(d, par["k"], int(sp["reference_draws"]), cell_seed(cfg.seed, "spike", "reference", d))

    dims = [int(d) for d in sp["dims"]]
    refs = dict(zip(dims, _pool_map(ref_cell, dims, cfg.threads)))

    def run_cell(cell):
        d, noise, par, _ = cell
        pot = standard_gaussian(d)
        if noise == "spike":
            law = SpikeNoise(par["s"], d, par["p"])
        elif noise == "gaussian":
            law = GaussianNoise(math.sqrt(par["cov_scale"]), d)
        else:
            law = ZeroNoise(d)
        acc = np.zeros(C)
        count = [0]

        def sink(kx, kv):
            acc[:] += f_k(kx, par["k"]).sum(axis=0)
            count[0] += kx.shape[0]

        t0 = time.perf_counter()
        try:
            run_chain("ubu", NoiseInjectedGradient(pot, law), par["h"], gamma, int(sp["n_steps"]), int(sp["burn_in"]),
                      int(sp["thin"]), seed=cell_seed(cfg.seed, "spike", "chain", d), n_chains=C, sink=sink,
                      backend=cfg.backend)
        except DivergenceError as exc:
            return {"diverged": exc.step, "time": time.perf_counter() - t0}
        return {"means": acc / count[0], "n": count[0], "time": time.perf_counter() - t0}

    outcomes = _pool_map(run_cell, cells, cfg.threads)
    for d in dims:
        par = spike_parameters(d, float(sp["alpha"]), sp["parameterization"])
        label = guarded_label("SG-UBU", par["h"], gamma, cfg.allow_out_of_regime)
        ref_mean, ref_se = refs[d]
        rows.append(SweepResult("spike", "exact", par["h"], gamma, "fk_exact_mean", ref_mean, ref_se,
                                int(sp["reference_draws"]), cfg.seed))
        for name in ("dimension", "k", "spike_p", "spike_s", "cov_scale"):
            value = {"dimension": d, "k": par["k"], "spike_p": par["p"], "spike_s": par["s"],
                     "cov_scale": par["cov_scale"]}[name]
            rows.append(SweepResult("spike", label, par["h"], gamma, name, float(value), 0.0, 0, cfg.seed))
    for (d, noise, par, label), out in zip(cells, outcomes):
        if "diverged" in out:
            rows.append(SweepResult("spike", label, par["h"], gamma, f"divergence_step_{noise}", float(out["diverged"]),
                                    0.0, 0, cfg.seed, out["time"]))
            continue
        ref_mean, ref_se = refs[d]
        m = out["means"]
        se = math.sqrt(sample_std_error(m) ** 2 + ref_se**2)
        rows.append(SweepResult("spike", label, par["h"], gamma, f"fk_bias_{noise}", float(m.mean() - ref_mean), se,
                                out["n"] * C, cfg.seed, out["time"]))
    return rows


# ---------------------------------------------------------------- logistic regression


def synthetic_logistic_data(seed, dim: int, n_obs: int):
    """Standard Gaussian features with labels drawn from a logistic model with a random plane."""
    rng = generator(cell_seed(seed, "blr", "data", dim, n_obs))
    X = rng.standard_normal((n_obs, dim))
    q_true = rng.standard_normal(dim)
    y = (rng.random(n_obs) < 1.0 / (1.0 + np.exp(-X @ q_true))).astype(float)
    return X, y


def build_logistic(cfg) -> LogisticRegressionPotential:
    b = cfg.blr
    if cfg.target.get("kind") == "mnist" or b.get("images"):
        from ..mnist import load_binary_mnist

        if not (b.get("images") and b.get("labels")):
            raise ParameterError("the MNIST target needs blr.images and blr.labels paths")
        return load_binary_mnist(b["images"], b["labels"], tuple(b["digits"]), float(b["prior_var"]))
    X, y = synthetic_logistic_data(cfg.seed, int(b["dim"]), int(b["n_obs"]))
    return LogisticRegressionPotential(X, y, float(b["prior_var"]))


def _mean_potential(kind, est, pot, h, gamma, burn_time, run_time, C, seed, x0):
    """Per-chain time averages of ``U`` after a time-based burn-in."""
    burn = int(math.ceil(burn_time / h))
    n_steps = burn + int(math.ceil(run_time / h))
    acc = np.zeros(C)
    count = [0]

    def sink(kx, kv):
        # chunked: the data term materialises (rows, chains, n_obs)
        for i in range(0, kx.shape[0], 64):
            acc[:] += pot.value(kx[i : i + 64]).sum(axis=0)
        count[0] += kx.shape[0]

    run_chain(kind, est, h, gamma, n_steps, burn, 1, seed=seed, n_chains=C, x0=x0, sink=sink)
    return acc / count[0], n_steps


def run_blr(cfg) -> list[SweepResult]:
    """``|E_h[U] - E_ref[U]|`` per method and step size; reference is full-gradient UBU at a small step."""
    b = cfg.blr
    pot = build_logistic(cfg)
    q_min = find_mode(pot, np.zeros(pot.dim))
    L = largest_eigenvalue(pot.hessian(q_min))
    gamma = math.sqrt(L)
    C = int(b["chains"])
    est = ControlVariateGradient(pot, q_min, int(b["batch_size"]))
    h_ref = 1.0 / (float(b["ref_factor"]) * math.sqrt(L))
    cells = []
    for f in b["h_factors"]:
        h = float(f) / math.sqrt(L)
        for method in cfg.methods:
            cells.append((method, h, guarded_label(method, h, gamma, cfg.allow_out_of_regime)))

    def ref_run(_):
        return _mean_potential("ubu", ExactGradient(pot), pot, h_ref, gamma, float(b["burn_time"]),
                               float(b["ref_run_time"]), C, cell_seed(cfg.seed, "blr", "reference"), q_min)

    def run_cell(cell):
        method, h, _ = cell
        kind, stochastic = METHOD_TABLE[method]
        t0 = time.perf_counter()
        try:
            means, n = _mean_potential(kind, est if stochastic else ExactGradient(pot), pot, h, gamma,
                                       float(b["burn_time"]), float(b["run_time"]), C,
                                       cell_seed(cfg.seed, "blr", "chain", h), q_min)
        except DivergenceError as exc:
            return {"diverged": exc.step, "time": time.perf_counter() - t0}
        return {"means": means, "n": n, "time": time.perf_counter() - t0}

    results = _pool_map(lambda item: ref_run(None) if item is None else run_cell(item), [None] + cells, cfg.threads)
    (ref_means, ref_n), outcomes = results[0], results[1:]
    ref_mean, ref_se = float(ref_means.mean()), sample_std_error(ref_means)
    rows = [
        SweepResult("blr", "UBU", h_ref, gamma, "reference_mean_U", ref_mean, ref_se, ref_n * C, cfg.seed),
        SweepResult("blr", "exact", None, gamma, "L_hessian_at_mode", L, 0.0, 0, cfg.seed),
    ]
    for (method, h, label), out in zip(cells, outcomes):
        if "diverged" in out:
            rows.append(SweepResult("blr", label, h, gamma, "divergence_step", float(out["diverged"]), 0.0, 0, cfg.seed,
                                    out["time"]))
            continue
        m = out["means"]
        se = math.sqrt(sample_std_error(m) ** 2 + ref_se**2)
        rows.append(SweepResult("blr", label, h, gamma, "abs_error_mean_U", abs(float(m.mean()) - ref_mean), se,
                                out["n"] * C, cfg.seed, out["time"]))
    return rows


# ---------------------------------------------------------------- bound report


def bounds_report(cfg) -> dict:
    """Evaluate the stochastic-gradient UBU bias bound for the configured target and estimator."""
    bc = cfg.bounds
    pot, sampler = build_target(cfg)
    est = build_estimator(pot, cfg.noise)
    h, gamma, p = float(bc["h"]), float(bc["gamma"]), int(bc["p"])
    C_G = float(getattr(est, "C_G", 0.0) or 0.0)
    m, L, d = pot.m, pot.L, pot.dim
    violations = bounds.regime_violations(h, gamma, m, L, C_G)
    report = {"h": h, "gamma": gamma, "p": p, "m": m, "L": L, "d": d, "C_G": C_G, "regime_violations": violations}
    if violations:
        if not cfg.allow_out_of_regime:
            raise RegimeError(violations[0], "regime violated: " + "; ".join(violations))
        report["bias_bound"] = None
        return report
    rng = generator(cell_seed(cfg.seed, "bounds", "sigma"))
    n = int(bc["sigma_samples"])
    sigma_p, sigma_p_se = estimate_sigma_p(est, sampler, p, n, rng)
    sigma_2p, sigma_2p_se = estimate_sigma_p(est, sampler, 2 * p, n, rng)
    T = bounds.plug_in_term("i", L=L, sigma_2p=sigma_2p)
    inputs = bounds.BiasBoundInputs(h=h, gamma=gamma, m=m, L=L, d=d, C_G=C_G, sigma_p=sigma_p, T=T, p=p)
    report.update({
        "sigma_p": sigma_p, "sigma_p_stderr": sigma_p_se,
        "sigma_2p": sigma_2p, "sigma_2p_stderr": sigma_2p_se,
        "plug_in_T": T,
        "contraction_factor_per_step": bounds.contraction_factor(h, gamma, m, L, C_G, 1),
        "bias_bound": bounds.sg_ubu_bias_bound(inputs),
    })
    return report


def bounds_rows(cfg, report) -> list[SweepResult]:
    rows = []
    for key in ("m", "L", "C_G", "sigma_p", "sigma_2p", "plug_in_T", "contraction_factor_per_step", "bias_bound"):
        value = report.get(key)
        if value is None:
            continue
        se = report.get(f"{key}_stderr", 0.0)
        rows.append(SweepResult("bounds", "SG-UBU", report["h"], report["gamma"], key, float(value), float(se), 0,
                                cfg.seed))
    return rows
