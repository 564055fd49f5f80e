"""Experiment configuration and its TOML schema.

A config file has top-level keys and one optional table per experiment::

    experiment = "sweep"          # sweep | spike | blr | bounds | verify
    seed = 0
    threads = 1
    out = "results"
    allow_out_of_regime = false

    [run]
    methods = ["SGLD", "SG-EM", "SG-UBU"]
    h = [0.25, 0.125, 0.0625, 0.03125]
    gamma = [5.0]
    n_samples = 1000000           # kept samples per replica
    burn_in = 100000
    thin = 1
    replicas = 8

    [target]
    kind = "toy"                  # toy | gaussian | logistic | mnist

    [noise]
    kind = "minibatch"            # minibatch | control_variate | gaussian | spike | none
    batch_size = 1

    [spike]                       # spike tables only
    dims = [64, 256]
    alpha = 0.5
    ...

Command-line flags override the top-level keys.
"""

from __future__ import annotations

import dataclasses
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..errors import SgubuError

EXPERIMENTS = ("sweep", "spike", "blr", "bounds", "verify")
METHODS = ("SGLD", "SG-EM", "SG-UBU", "UBU", "EM")

# method name -> (integrator kind, uses the stochastic gradient)
METHOD_TABLE = {
    "SGLD": ("sgld", True),
    "SG-EM": ("em", True),
    "SG-UBU": ("ubu", True),
    "UBU": ("ubu", False),
    "EM": ("em", False),
}


class ConfigError(SgubuError, ValueError):
    """The configuration is malformed or inconsistent."""


SPIKE_DEFAULTS = {
    "dims": [64, 256],
    "alpha": 0.5,
    "gamma": 2.0,
    "parameterization": "size",
    "noises": ["spike", "gaussian", "none"],
    "chains": 64,
    "n_steps": 20000,
    "burn_in": 2000,
    "thin": 4,
    "reference_draws": 200000,
}

BLR_DEFAULTS = {
    "dim": 20,
    "n_obs": 1000,
    "prior_var": 1e-3,
    "batch_size": 10,
    "h_factors": [2.0, 1.0, 0.5, 0.25],
    "ref_factor": 16.0,
    "chains": 16,
    "burn_time": 2.0,
    "run_time": 40.0,
    "ref_run_time": 40.0,
    "images": None,
    "labels": None,
    "digits": [3, 5],
}

BOUNDS_DEFAULTS = {
    "h": 0.005,
    "gamma": 9.0,
    "p": 2,
    "sigma_samples": 20000,
    "format": "json",
}

VERIFY_DEFAULTS = {
    "inject_fault": None,
    "samples": 1_000_000,
}


@dataclass
class ExperimentConfig:
    experiment: str = "sweep"
    methods: list[str] = field(default_factory=lambda: ["SGLD", "SG-EM", "SG-UBU"])
    h: list[float] = field(default_factory=lambda: [2.0**-k for k in range(2, 6)])
    gamma: list[float] = field(default_factory=lambda: [5.0])
    target: dict = field(default_factory=lambda: {"kind": "toy"})
    noise: dict = field(default_factory=lambda: {"kind": "minibatch", "batch_size": 1})
    n_samples: int = 1_000_000
    burn_in: int = 100_000
    thin: int = 1
    replicas: int = 8
    seed: int = 0
    out: str = "results"
    threads: int = 1
    allow_out_of_regime: bool = False
    backend: str | None = None
    spike: dict = field(default_factory=lambda: dict(SPIKE_DEFAULTS))
    blr: dict = field(default_factory=lambda: dict(BLR_DEFAULTS))
    bounds: dict = field(default_factory=lambda: dict(BOUNDS_DEFAULTS))
    verify: dict = field(default_factory=lambda: dict(VERIFY_DEFAULTS))

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; expected a subset of {METHODS}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("methods must not repeat")
        for name in ("h", "gamma"):
            vals = getattr(self, name)
            if not vals or not all(isinstance(v, (int, float)) and math.isfinite(v) and v > 0 for v in vals):
                raise ConfigError(f"{name} must be a non-empty list of positive numbers")
        if self.n_samples < 1 or self.burn_in < 0 or self.thin < 1 or self.replicas < 1:
            raise ConfigError("need n_samples >= 1, burn_in >= 0, thin >= 1, replicas >= 1")
        if self.replicas < 2 and self.experiment == "sweep":
            raise ConfigError("standard errors need at least two replicas")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.backend not in (None, "python", "cython"):
            raise ConfigError("backend must be 'python' or 'cython'")
        if self.target.get("kind") not in ("toy", "gaussian", "logistic", "mnist"):
            raise ConfigError(f"unknown target kind {self.target.get('kind')!r}")
        if self.noise.get("kind") not in ("minibatch", "control_variate", "gaussian", "spike", "none"):
            raise ConfigError(f"unknown noise kind {self.noise.get('kind')!r}")
        sp = self.spike
        if sp["parameterization"] not in ("size", "covariance"):
            raise ConfigError("spike.parameterization must be 'size' or 'covariance'")
        if not 0 < sp["alpha"] < 1 or any(int(d) < 3 for d in sp["dims"]):
            raise ConfigError("spike needs 0 < alpha < 1 and every d >= 3")
        if set(sp["noises"]) - {"spike", "gaussian", "none"}:
            raise ConfigError("spike.noises must be a subset of spike, gaussian, none")
        if sp["chains"] < 2 or not 0 <= sp["burn_in"] < sp["n_steps"]:
            raise ConfigError("spike needs chains >= 2 and 0 <= burn_in < n_steps")
        if self.bounds["p"] not in (1, 2):
            raise ConfigError("bounds.p must be 1 or 2")
        if self.bounds["format"] not in ("json", "text"):
            raise ConfigError("bounds.format must be 'json' or 'text'")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_TOP = ("experiment", "seed", "threads", "out", "allow_out_of_regime", "backend")
_RUN = ("methods", "h", "gamma", "n_samples", "burn_in", "thin", "replicas")
_SECTIONS = ("spike", "blr", "bounds", "verify")


def _merge(base: dict, extra: dict, where: str) -> dict:
    unknown = set(extra) - set(base)
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(unknown)}")
    out = dict(base)
    out.update(extra)
    return out


def from_dict(raw: dict) -> ExperimentConfig:
    """Build and validate a config from parsed TOML."""
    allowed = set(_TOP) | {"run", "target", "noise"} | set(_SECTIONS)
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    cfg = ExperimentConfig()
    for key in _TOP:
        if key in raw:
            setattr(cfg, key, raw[key])
    run = raw.get("run", {})
    unknown = set(run) - set(_RUN)
    if unknown:
        raise ConfigError(f"unknown keys in [run]: {sorted(unknown)}")
    for key in _RUN:
        if key in run:
            setattr(cfg, key, run[key])
    if "target" in raw:
        cfg.target = dict(raw["target"])
    if "noise" in raw:
        cfg.noise = dict(raw["noise"])
    for sec in _SECTIONS:
        if sec in raw:
            setattr(cfg, sec, _merge(getattr(cfg, sec), raw[sec], sec))
    try:
        cfg.h = [float(v) for v in cfg.h]
        cfg.gamma = [float(v) for v in cfg.gamma]
        for key in ("n_samples", "burn_in", "thin", "replicas", "seed", "threads"):
            setattr(cfg, key, int(getattr(cfg, key)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    try:
        with open(Path(path), "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from None
    return from_dict(raw)
