"""Constructive transport certificate for Gaussian convolutions of discrete measures.

A centred cloud of ``2n`` atoms is repeatedly paired by a high-energy perfect
matching and each pair is replaced by two copies of its midpoint.  Every
replacement moves ``mu * N(0, I)`` by a computable ``W_p`` cost while the
``2p``-th moment contracts geometrically; summing the costs and adding the
trivial-coupling tail gives an upper bound on ``W_p(mu * N(0, I), N(0, I))``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .bounds import K_p, contraction_rate, convolution_prefactor
from .errors import InvariantError, ParameterError, SearchFailure
from .metrics import convolved_wp_1d
from .tolerances import TOL

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AtomCloud:
    atoms: np.ndarray
    p: float = 1.0

    def __post_init__(self):
        X = np.asarray(self.atoms, dtype=float)
        X = X[:, None] if X.ndim == 1 else X
        if X.ndim != 2 or X.shape[0] < 2 or X.shape[0] % 2:
            raise ParameterError(f"need an even number (>= 2) of atoms, got {X.shape[0]}")
        if self.p < 1:
            raise ParameterError(f"need p >= 1, got {self.p}")
        X = X.copy()
        X.setflags(write=False)
        object.__setattr__(self, "atoms", X)

    @property
    def n(self) -> int:
        return self.atoms.shape[0] // 2

    @property
    def norms_2p(self) -> np.ndarray:
        return np.linalg.norm(self.atoms, axis=1) ** (2.0 * self.p)

    @property
    def phi(self) -> float:
        """``(1/2n) sum_i |x_i|^{2p}``."""
        return float(self.norms_2p.mean())

    def is_centred(self, atol: float = TOL.centering_coupling_atol) -> bool:
        scale = max(1.0, float(np.abs(self.atoms).max()))
        return bool(np.all(np.abs(self.atoms.sum(axis=0)) <= atol * scale * self.atoms.shape[0]))


def center_atoms(points, p: float = 1.0) -> AtomCloud:
    """Subtract the empirical mean of an even number of points."""
    X = np.asarray(points, dtype=float)
    X = X[:, None] if X.ndim == 1 else X
    if X.shape[0] % 2 or X.shape[0] < 2:
        raise ParameterError(f"need an even number (>= 2) of points, got {X.shape[0]}")
    return AtomCloud(X - X.mean(axis=0), p)


@dataclass(frozen=True)
class Matching:
    pairs: np.ndarray  # (n, 2) index pairs
    energy: float
    ratio: float = float("nan")  # energy / sum_i |x_i|^{2p}

    @classmethod
    def build(cls, cloud: AtomCloud, pairs) -> "Matching":
        pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
        idx = np.sort(pairs.reshape(-1))
        if not np.array_equal(idx, np.arange(2 * cloud.n)):
            raise ParameterError("not a perfect matching of the cloud")
        energy = matching_energy(cloud, pairs)
        total = float(cloud.norms_2p.sum())
        return cls(pairs, energy, energy / total if total > 0 else float("inf"))


def matching_energy(cloud: AtomCloud, pairs) -> float:
    """``S_2p(M) = sum_{(i,j) in M} |x_i - x_j|^{2p}``."""
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    diff = cloud.atoms[pairs[:, 0]] - cloud.atoms[pairs[:, 1]]
    return float((np.linalg.norm(diff, axis=1) ** (2.0 * cloud.p)).sum())


@lru_cache(maxsize=None)
def all_perfect_matchings(m: int) -> np.ndarray:
    """Every perfect matching of ``{0..m-1}``, shape ``((m-1)!!, m/2, 2)``."""

    def rec(items):
        if not items:
            yield ()
            return
        first = items[0]
        for k in range(1, len(items)):
            rest = items[1:k] + items[k + 1 :]
            for tail in rec(rest):
                yield ((first, items[k]),) + tail

    out = np.array(list(rec(tuple(range(m)))), dtype=int)
    out.setflags(write=False)
    return out


def _energies(cloud: AtomCloud, matchings: np.ndarray) -> np.ndarray:
    X = cloud.atoms
    diff = X[matchings[..., 0]] - X[matchings[..., 1]]
    return (np.linalg.norm(diff, axis=-1) ** (2.0 * cloud.p)).sum(axis=-1)


def find_high_energy_matching(cloud: AtomCloud, rng=None, *, exhaustive_limit: int = TOL.exhaustive_atoms,
                              max_draws: int = TOL.random_matching_draws) -> Matching:
    """A perfect matching with ``S_2p(M) >= (1/2) sum_i |x_i|^{2p}``.

    Clouds of at most ``exhaustive_limit`` atoms are searched exhaustively
    (returning the maximum-energy matching).  Larger clouds draw uniform random
    matchings, stopping at the first that reaches ``n/(2n-1) sum_i |x_i|^{2p}``
    and otherwise keeping the best of ``max_draws``.
    """
    m = 2 * cloud.n
    total = float(cloud.norms_2p.sum())
    half = 0.5 * total
    strong = cloud.n / (2 * cloud.n - 1) * total
    if m <= exhaustive_limit:
        cands = all_perfect_matchings(m)
        energies = _energies(cloud, cands)
        best = int(np.argmax(energies))
        match = Matching.build(cloud, cands[best])
    else:
        rng = np.random.default_rng(0) if rng is None else rng
        best_pairs, best_energy = None, -1.0
        done = 0
        chunk = max(1, min(max_draws, 2**16 // m))
        while done < max_draws:
            k = min(chunk, max_draws - done)
            perms = rng.permuted(np.tile(np.arange(m), (k, 1)), axis=1).reshape(k, cloud.n, 2)
            energies = _energies(cloud, perms)
            i = int(np.argmax(energies))
            if energies[i] > best_energy:
                best_pairs, best_energy = perms[i], float(energies[i])
            done += k
            if best_energy >= strong:
                break
        match = Matching.build(cloud, best_pairs)
        log.debug("random matching search: %d draws, energy ratio %.4f", done, match.ratio)
    if match.energy < half * (1.0 - 1e-12):
        raise SearchFailure(f"best matching energy {match.energy:.6g} is below half the moment sum {half:.6g}")
    return match


def midpoint_replace(cloud: AtomCloud, matching: Matching) -> AtomCloud:
    """Replace each matched pair by two copies of its midpoint; checks the moment contraction."""
    pairs = matching.pairs
    X = cloud.atoms
    mids = 0.5 * (X[pairs[:, 0]] + X[pairs[:, 1]])
    new = X.copy()
    new[pairs[:, 0]] = mids
    new[pairs[:, 1]] = mids
    out = AtomCloud(new, cloud.p)
    bound = contraction_rate(cloud.p) * cloud.phi
    if out.phi > bound * (1.0 + TOL.phi_relative) + 1e-300:
        raise InvariantError(f"moment did not contract: {out.phi} > {bound}")
    return out


def one_step_cost(matching: Matching, cloud: AtomCloud) -> float:
    """``(K_p/4) ((1/n) sum_{(i,j)} |x_i - x_j|^{2p})^{1/p}``."""
    return K_p(cloud.p) / 4.0 * (matching.energy / cloud.n) ** (1.0 / cloud.p)


def two_component_exact_wp(delta: float, p: float = 1.0, n_quadrature: int = TOL.quadrature_nodes) -> float:
    """``W_p(N(0,1), (N(delta,1) + N(-delta,1))/2)`` by quantile quadrature."""
    if delta < 0:
        raise ParameterError("delta must be nonnegative")
    if delta == 0:
        return 0.0
    return convolved_wp_1d(np.array([delta, -delta]), None, p, n_quadrature)


def mixture_exact_wp(cloud: AtomCloud, n_quadrature: int = TOL.quadrature_nodes) -> float:
    """Exact ``W_p(mu * N(0,1), N(0,1))`` for a 1-D cloud."""
    if cloud.atoms.shape[1] != 1:
        raise ParameterError("quadrature oracle is one-dimensional")
    return convolved_wp_1d(cloud.atoms[:, 0], None, cloud.p, n_quadrature)


@dataclass
class CertificateLevel:
    pairs: list
    energy: float
    energy_ratio: float
    cost: float
    phi: float


@dataclass
class ChainCertificate:
    p: float
    phi0: float
    levels: list = field(default_factory=list)
    tail: float = 0.0
    closed_form: float = 0.0

    @property
    def costs(self) -> list[float]:
        return [lv.cost for lv in self.levels]

    @property
    def total(self) -> float:
        return float(sum(self.costs) + self.tail)

    def to_json(self) -> str:
        return json.dumps(
            {
                "p": self.p,
                "phi0": self.phi0,
                "levels": [
                    {"pairs": lv.pairs, "energy": lv.energy, "energy_ratio": lv.energy_ratio, "cost": lv.cost, "phi": lv.phi}
                    for lv in self.levels
                ],
                "tail": self.tail,
                "total": self.total,
                "closed_form": self.closed_form,
            },
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "ChainCertificate":
        raw = json.loads(text)
        levels = [CertificateLevel(**lv) for lv in raw["levels"]]
        return cls(raw["p"], raw["phi0"], levels, raw["tail"], raw["closed_form"])


def closed_form_certificate_bound(p: float, phi0: float) -> float:
    """``K_p / (1 - (1 - 2^{-2p})^{1/p}) Phi_0^{1/p}``."""
    return convolution_prefactor(p) * phi0 ** (1.0 / p)


def chain_certificate(cloud: AtomCloud, phi_tolerance: float | None = None, rng=None, max_levels: int = 100_000) -> ChainCertificate:
    """Run match, cost, replace until ``Phi_T <= phi_tolerance`` and add the tail ``Phi_T^{1/(2p)}``.

    The default tolerance is ``1e-12 Phi_0``.  Iteration continues past it
    while the tail would push the total above the closed-form bound (only
    possible for tiny clouds, where the tail dominates).
    """
    if not cloud.is_centred():
        raise ParameterError("cloud must be centred; use center_atoms")
    p = cloud.p
    phi0 = cloud.phi
    closed = closed_form_certificate_bound(p, phi0)
    cert = ChainCertificate(p=p, phi0=phi0, closed_form=closed)
    if phi0 == 0.0:
        return cert
    tol = TOL.phi_relative * phi0 if phi_tolerance is None else float(phi_tolerance)
    rate = contraction_rate(p)
    kp = K_p(p)
    rng = np.random.default_rng(0) if rng is None else rng
    running = 0.0
    current = cloud
    for level in range(max_levels):
        phi = current.phi
        tail = phi ** (1.0 / (2.0 * p))
        if phi == 0.0 or (phi <= tol and running + tail <= closed):
            cert.tail = tail
            break
        match = find_high_energy_matching(current, rng)
        cost = one_step_cost(match, current)
        if cost > kp * phi ** (1.0 / p) * (1.0 + 1e-12):
            raise InvariantError(f"level {level}: one-step cost exceeds K_p Phi^(1/p)")
        if cost > kp * rate ** (level / p) * phi0 ** (1.0 / p) * (1.0 + 1e-9):
            raise InvariantError(f"level {level}: one-step cost breaks the geometric decay")
        try:
            nxt = midpoint_replace(current, match)
        except InvariantError as exc:
            raise InvariantError(f"level {level}: {exc}") from None
        running += cost
        cert.levels.append(CertificateLevel(match.pairs.tolist(), match.energy, match.ratio, cost, nxt.phi))
        current = nxt
    else:
        raise InvariantError(f"certificate did not terminate within {max_levels} levels")
    if not math.isfinite(cert.total) or cert.total > closed * (1.0 + 1e-9):
        raise InvariantError(f"certified total {cert.total} exceeds the closed form {closed}")
    return cert


def empirical_convolution_bound(sample, p: float = 1.0, phi_tolerance: float | None = None, rng=None) -> float:
    """Certificate total for the centred empirical measure of an even-size sample."""
    return chain_certificate(center_atoms(sample, p), phi_tolerance, rng).total


__all__ = [
    "AtomCloud",
    "ChainCertificate",
    "CertificateLevel",
    "Matching",
    "all_perfect_matchings",
    "center_atoms",
    "chain_certificate",
    "closed_form_certificate_bound",
    "empirical_convolution_bound",
    "find_high_energy_matching",
    "matching_energy",
    "midpoint_replace",
    "mixture_exact_wp",
    "one_step_cost",
    "two_component_exact_wp",
]
