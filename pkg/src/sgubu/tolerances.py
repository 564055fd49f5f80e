"""Numerical tolerances used throughout the package, kept in one record."""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    # integrators
    sqrt_clamp: float = 1e-12
    taylor_threshold: float = 1e-2
    # metrics
    quadrature_nodes: int = 2**16
    bisection_atol: float = 1e-12
    bracket_expansions: int = 200
    max_exact_atoms: int = 64
    # bounds
    centering_atol: float = 1e-8
    # coupling
    exhaustive_atoms: int = 10
    random_matching_draws: int = 10_000
    phi_relative: float = 1e-12
    centering_coupling_atol: float = 1e-10
    # model
    mode_tol: float = 1e-8
    mode_max_iter: int = 100_000
    # gradients
    cg_mc_samples: int = 10_000
    min_sigma_samples: int = 100


TOL = Tolerances()
