import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gbpm.env import (LinkKind, LinkSpec, PreferenceWorld, design_matrix, instance_kappa,
                      link_deriv, link_deriv2, link_eval, log_partition, make_features,
                      make_world, min_eig_design, preference_prob, preference_table, sample_duel,
                      validate_policy)
from gbpm.skewlin import DimensionError, SkewMatrix

LOGISTIC_AT_1 = 0.7310585786300049  # 1/(1+e^-1), mpmath at 30 digits
LOGISTIC = LinkSpec.logistic(1.0)
LINEAR = LinkSpec.linear()
E12 = np.array([[0.0, 1.0], [-1.0, 0.0]])


def _world(F, theta, link=LOGISTIC, rho=None):
    F = np.asarray(F, dtype=float)
    n_ctx, K, _ = F.shape
    rho = np.full((n_ctx, K), 1.0 / K) if rho is None else rho
    return PreferenceWorld(F, np.full(n_ctx, 1.0 / n_ctx), rho, link, theta)


def test_link_values():
    assert link_eval(LOGISTIC, 0.0) == 0.5
    assert link_eval(LOGISTIC, 1.0) == pytest.approx(LOGISTIC_AT_1, abs=1e-15)
    assert link_eval(LINEAR, 0.1) == pytest.approx(0.6, abs=1e-15)


def test_link_constants():
    # kappa is the derivative at the edge of the range
    assert LinkSpec.logistic(1.0).kappa == pytest.approx(LOGISTIC_AT_1 * (1 - LOGISTIC_AT_1))
    assert LinkSpec.logistic(1.0).l_mu == 0.25
    assert LinkSpec.make("linear").kind is LinkKind.LINEAR


@given(st.floats(-30, 30))
def test_link_symmetry_and_derivatives(z):
    for link in (LOGISTIC, LINEAR):
        assert link_eval(link, z) + link_eval(link, -z) == pytest.approx(1.0, abs=1e-12)
    h = 1e-5
    fd = (link_eval(LOGISTIC, z + h) - link_eval(LOGISTIC, z - h)) / (2 * h)
    assert link_deriv(LOGISTIC, z) == pytest.approx(fd, abs=1e-9)
    fd2 = (link_deriv(LOGISTIC, z + h) - link_deriv(LOGISTIC, z - h)) / (2 * h)
    assert link_deriv2(LOGISTIC, z) == pytest.approx(fd2, abs=1e-9)
    fdm = (log_partition(LOGISTIC, z + h) - log_partition(LOGISTIC, z - h)) / (2 * h)
    assert fdm == pytest.approx(float(link_eval(LOGISTIC, z)), abs=1e-8)
    assert 0 < link_deriv(LOGISTIC, z) <= 0.25


def test_linear_quasi_likelihood_derivative():
    z = np.linspace(-0.5, 0.5, 11)
    h = 1e-6
    fd = (log_partition(LINEAR, z + h) - log_partition(LINEAR, z - h)) / (2 * h)
    np.testing.assert_allclose(fd, link_eval(LINEAR, z), atol=1e-9)


def test_preference_prob_examples():
    e1, e2 = np.eye(2)
    assert preference_prob(np.zeros((2, 2)), e1, e2, LOGISTIC) == 0.5
    p = preference_prob(E12, e1, e2, LOGISTIC)
    q = preference_prob(E12, e2, e1, LOGISTIC)
    assert p == pytest.approx(LOGISTIC_AT_1, abs=1e-15)
    assert q == pytest.approx(0.2689414213699951, abs=1e-15)
    assert abs(p + q - 1) <= 1e-12
    with pytest.raises(DimensionError):
        preference_prob(E12, np.ones(3), e2, LOGISTIC)


def test_table_is_antisymmetric(rng):
    w = make_world(rng, dim=4, n_ctx=3, n_act=5, feature_mode="random-unit-sphere", nuc_bound=2.0)
    P = w.pref_table
    np.testing.assert_allclose(P + P.transpose(0, 2, 1), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.diagonal(P, axis1=1, axis2=2), 0.5, atol=1e-15)


def test_linear_link_clamping_is_counted():
    F = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    with pytest.warns(RuntimeWarning):
        w = _world(F, 0.8 * E12, LINEAR)
    assert w.n_clamped == 2
    assert w.pref_table[0, 0, 1] == 1.0
    raw = preference_table(F, 0.8 * E12, LINEAR, clamp=False)
    assert raw[0, 0, 1] == pytest.approx(1.3)


def test_sample_duel_certain_outcome(rng):
    F = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    with pytest.warns(RuntimeWarning):
        w = _world(F, 0.8 * E12, LINEAR)
    assert all(sample_duel(w, 0, 0, 1, rng) == 1 for _ in range(200))
    with pytest.raises(IndexError):
        sample_duel(w, 0, 2, 1, rng)


def test_sample_duel_fair_coin_monte_carlo():
    w = _world(np.array([[[1.0, 0.0], [0.0, 1.0]]]), np.zeros((2, 2)))
    rng = np.random.default_rng(0)
    n = 100_000
    mean = np.mean([sample_duel(w, 0, 0, 1, rng) for _ in range(n)])
    assert abs(mean - 0.5) <= 6 * 0.5 / np.sqrt(n)


def test_sample_duel_reproducible():
    w = make_world(np.random.default_rng(1), dim=3, n_act=4)
    a = [sample_duel(w, 0, 1, 2, np.random.default_rng(5)) for _ in range(3)]
    r1, r2 = np.random.default_rng(9), np.random.default_rng(9)
    assert [sample_duel(w, 0, 1, 2, r1) for _ in range(50)] == [sample_duel(w, 0, 1, 2, r2) for _ in range(50)]
    assert len(set(a)) == 1


def test_min_eig_examples():
    w = _world(np.array([[[1.0, 0.0], [0.0, 1.0]]]), np.zeros((2, 2)))
    assert min_eig_design(w) == pytest.approx(0.5)
    deg = _world(np.array([[[1.0, 0.0], [1.0, 0.0]]]), np.zeros((2, 2)))
    with pytest.warns(RuntimeWarning):
        assert min_eig_design(deg) == 0.0


def test_min_eig_matches_dense_oracle(rng):
    w = make_world(rng, dim=5, n_ctx=3, n_act=7, feature_mode="random-unit-sphere")
    # independent assembly by explicit loops
    M = np.zeros((5, 5))
    for x in range(w.n_ctx):
        for a in range(w.n_act):
            phi = w.features[x, a]
            M += w.context_dist[x] * w.explore_policy[x, a] * np.outer(phi, phi)
    np.testing.assert_allclose(design_matrix(w), M, atol=1e-14)
    assert min_eig_design(w) == pytest.approx(np.linalg.eigvals(M).real.min(), abs=1e-10)


def test_instance_kappa_bounds(rng):
    w = make_world(rng, dim=4, nuc_bound=2.0)
    assert w.link.kappa <= instance_kappa(w) <= 0.25


@pytest.mark.parametrize("mode", ["simplex-corners", "random-unit-sphere", "hypercube-scaled"])
def test_feature_modes_have_bounded_norm(mode, rng):
    F = make_features(rng, mode, 2, 9, 4)
    assert F.shape == (2, 9, 4)
    np.testing.assert_allclose(np.linalg.norm(F, axis=2), 1.0, atol=1e-12)


def test_feature_mode_unknown(rng):
    with pytest.raises(ValueError):
        make_features(rng, "nope", 1, 2, 2)


def test_world_validation():
    F = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    with pytest.raises(ValueError):
        _world(2 * F, np.zeros((2, 2)))
    with pytest.raises(DimensionError):
        _world(F, np.zeros((3, 3)))
    with pytest.raises(ValueError):
        _world(F, np.zeros((2, 2)), rho=np.array([[0.7, 0.7]]))
    with pytest.raises(ValueError):
        validate_policy(np.array([[0.5, 0.6]]))


def test_world_is_frozen(rng):
    w = make_world(rng, dim=3, n_act=4)
    with pytest.raises(ValueError):
        w.features[0, 0, 0] = 2.0
    w2 = w.with_theta(SkewMatrix.zeros(3))
    np.testing.assert_array_equal(w2.pref_table, 0.5)


def test_make_world_linear_warns_for_large_S(rng):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        make_world(rng, dim=2, link="linear", nuc_bound=1.0)
    assert any("linear link" in str(c.message) for c in caught)
