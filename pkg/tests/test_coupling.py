import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgubu import bounds
from sgubu.coupling import (
    AtomCloud,
    ChainCertificate,
    Matching,
    all_perfect_matchings,
    center_atoms,
    chain_certificate,
    closed_form_certificate_bound,
    empirical_convolution_bound,
    find_high_energy_matching,
    midpoint_replace,
    mixture_exact_wp,
    one_step_cost,
    two_component_exact_wp,
)
from sgubu.errors import ParameterError


@pytest.mark.parametrize("m, count", [(2, 1), (4, 3), (6, 15), (8, 105)])
def test_matching_count_is_double_factorial(m, count):
    M = all_perfect_matchings(m)
    assert M.shape == (count, m // 2, 2)
    assert len({tuple(sorted(map(tuple, x))) for x in M.tolist()}) == count


def test_cross_certificate():
    # +-e1 and +-e2: the antipodal matching collapses the cloud in one level
    cloud = AtomCloud(np.array([[1.0, 0], [-1, 0], [0, 1], [0, -1]]), p=2)
    cert = chain_certificate(cloud)
    assert cloud.phi == 1.0
    assert len(cert.levels) == 1
    assert cert.levels[0].energy == pytest.approx(32.0)
    assert cert.total == pytest.approx(1.0)
    assert cert.closed_form == pytest.approx(bounds.convolution_prefactor(2))


def test_cost_of_single_pair():
    cloud = center_atoms([1.0, -1.0], p=1)
    m = Matching.build(cloud, [[0, 1]])
    # K_1/4 * |2|^2
    assert one_step_cost(m, cloud) == pytest.approx(1.0)
    assert midpoint_replace(cloud, m).phi == 0.0


@settings(max_examples=25)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=8).filter(lambda l: len(l) % 2 == 0),
       st.sampled_from([1.0, 2.0]))
def test_matching_energy_and_contraction(points, p):
    cloud = center_atoms(points, p)
    if cloud.phi < 1e-12:
        return
    m = find_high_energy_matching(cloud)
    assert m.energy >= 0.5 * cloud.norms_2p.sum() * (1 - 1e-12)
    nxt = midpoint_replace(cloud, m)
    assert nxt.phi <= bounds.contraction_rate(p) * cloud.phi * (1 + 1e-12)


def test_random_search_on_large_cloud(rng):
    cloud = center_atoms(rng.normal(size=(40, 2)), 1.0)
    m = find_high_energy_matching(cloud, rng)
    assert m.ratio >= 0.5


@settings(max_examples=15)
@given(st.lists(st.floats(-2, 2), min_size=4, max_size=8).filter(lambda l: len(l) % 2 == 0),
       st.sampled_from([1.0, 2.0]))
def test_certificate_sandwich(points, p):
    cloud = center_atoms(points, p)
    cert = chain_certificate(cloud)
    assert cert.total <= cert.closed_form * (1 + 1e-9) + 1e-15
    if cloud.phi > 1e-6:
        assert mixture_exact_wp(cloud) <= cert.total * (1 + 1e-9)


def test_certificate_json_round_trip():
    cert = chain_certificate(center_atoms([0.5, -1.0, 2.0, 0.1], 1.0))
    back = ChainCertificate.from_json(cert.to_json())
    assert back.total == pytest.approx(cert.total)
    assert len(back.levels) == len(cert.levels)


def test_two_component_below_k_delta_squared():
    for delta in (0.1, 0.5, 1.0):
        for p in (1.0, 2.0):
            assert two_component_exact_wp(delta, p) <= bounds.K_p(p) * delta**2
    assert two_component_exact_wp(0.0) == 0.0


def test_closed_form_and_empirical_bound(rng):
    assert closed_form_certificate_bound(1.0, 4.0) == pytest.approx(16.0)
    sample = rng.normal(size=(16, 3))
    assert empirical_convolution_bound(sample) <= closed_form_certificate_bound(1.0, center_atoms(sample).phi)


def test_cloud_validation():
    with pytest.raises(ParameterError):
        AtomCloud(np.zeros((3, 1)))
    with pytest.raises(ParameterError):
        chain_certificate(AtomCloud(np.array([1.0, 2.0])))
    with pytest.raises(ParameterError):
        Matching.build(center_atoms([1.0, -1.0, 2.0, -2.0]), [[0, 1], [0, 2]])


def test_centering_examples(rng):
    assert np.array_equal(center_atoms([-1.0, 1.0]).atoms[:, 0], [-1.0, 1.0])
    assert np.array_equal(center_atoms([0.0, 2.0]).atoms[:, 0], [-1.0, 1.0])
    c = center_atoms(rng.standard_normal((1000, 3)))
    assert np.abs(c.atoms.sum(axis=0)).max() < 1e-10


def test_cross_cloud_matchings_p1():
    cloud = AtomCloud(np.array([[1.0, 0], [-1, 0], [0, 1], [0, -1]]), p=1)
    m = find_high_energy_matching(cloud)
    assert m.energy >= 2 / 3 * 4
    # the adjacent matching halves Phi, within the 3/4 contraction
    adj = Matching.build(cloud, [[0, 2], [1, 3]])
    nxt = midpoint_replace(cloud, adj)
    assert nxt.phi == pytest.approx(0.5)
    assert np.allclose(np.abs(nxt.atoms), 0.5)


def test_exhaustive_meets_strong_threshold(rng):
    for _ in range(100):
        cloud = center_atoms(rng.normal(size=8), 1.0)
        assert find_high_energy_matching(cloud).energy >= 4 / 7 * cloud.norms_2p.sum() * (1 - 1e-12)


@pytest.mark.parametrize("delta", [0.3, 1.0])
def test_single_pair_cost_is_k2_delta_squared(delta):
    cloud = center_atoms([delta, -delta], p=2)
    cost = one_step_cost(Matching.build(cloud, [[0, 1]]), cloud)
    assert cost == pytest.approx(bounds.K_p(2) * delta**2)


def test_one_step_cost_dominated(rng):
    for _ in range(50):
        cloud = center_atoms(rng.normal(size=(8, 2)), 2.0)
        m = find_high_energy_matching(cloud)
        assert one_step_cost(m, cloud) <= bounds.K_p(2) * cloud.phi ** 0.5 * (1 + 1e-12)


def test_zero_cloud_and_spread_cloud():
    assert chain_certificate(AtomCloud(np.zeros((4, 2)))).total == 0.0
    cloud = center_atoms([0.5, -0.5] * 4, 1.0)
    cert = chain_certificate(cloud)
    assert cert.total <= closed_form_certificate_bound(1.0, cloud.phi)
    assert mixture_exact_wp(cloud) <= cert.total
