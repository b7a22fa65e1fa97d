import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gbpm.env import LinkSpec, PreferenceWorld, make_world
from gbpm.game import (GameHandle, SolverError, best_response, column_payoffs, dual_gap,
                       max_response, payoff, payoff_regularized, reg_term, row_payoffs, solve_sne,
                       true_game)
from gbpm.regularizers import RegKind, make_regularizer
from gbpm.skewlin import DimensionError, SkewMatrix

E12 = np.array([[0.0, 1.0], [-1.0, 0.0]])
KL_HALF = 0.15342640972002734  # 1/2 - log(2)/2, mpmath


def two_action_world(c, link=None):
    """Single context, actions e1 and e2, B(1,2) = 1/2 + c under the linear link."""
    F = np.eye(2)[None]
    return PreferenceWorld(F, np.ones(1), np.full((1, 2), 0.5), link or LinkSpec.linear(), c * E12)


def cycle_world(c=0.3):
    F = np.eye(3)[None]
    T = np.zeros((3, 3))
    for a, b in ((0, 1), (1, 2), (2, 0)):
        T[a, b], T[b, a] = c, -c
    return PreferenceWorld(F, np.ones(1), np.full((1, 3), 1 / 3), LinkSpec.linear(), T)


def delta(i, K=2):
    out = np.zeros((1, K))
    out[0, i] = 1.0
    return out


def test_payoff_examples():
    w = two_action_world(0.25)
    reg = make_regularizer("reverse-kl", w, 2.0)
    h = GameHandle(w, SkewMatrix.zeros(2), reg)
    assert payoff(h, delta(0), delta(1)) == 0.5
    t = true_game(w, reg)
    assert payoff(t, delta(0), delta(1)) == pytest.approx(0.75, abs=1e-15)
    p = np.array([[0.3, 0.7]])
    assert payoff(t, p, p) == pytest.approx(0.5, abs=1e-15)
    assert payoff_regularized(t, p, p) == pytest.approx(0.5, abs=1e-15)
    assert payoff_regularized(h, delta(0), w.explore_policy) == pytest.approx(KL_HALF, abs=1e-15)
    inf = GameHandle(w, w.theta_star, reg.with_eta(np.inf))
    assert reg_term(inf, delta(0)) == 0.0
    assert payoff_regularized(inf, delta(0), p) == payoff(inf, delta(0), p)


def test_payoff_shape_check():
    w = two_action_world(0.1)
    h = true_game(w, make_regularizer("reverse-kl", w, 1.0))
    with pytest.raises(DimensionError):
        payoff(h, np.ones((1, 3)) / 3, delta(0))
    with pytest.raises(DimensionError):
        GameHandle(w, SkewMatrix.zeros(3), h.reg)


def test_best_response_examples():
    w = two_action_world(0.25)
    reg = make_regularizer("reverse-kl", w, 2.0)
    h = true_game(w, reg)
    np.testing.assert_allclose(column_payoffs(h, w.explore_policy), [[0.375, 0.625]], atol=1e-15)
    br = best_response(h, w.explore_policy)
    assert br[0, 0] == pytest.approx(0.6224593312018546, abs=1e-15)
    # grid search over the simplex at step 1e-4
    p = np.linspace(0, 1, 10_001)
    with np.errstate(divide="ignore", invalid="ignore"):
        kl = np.nan_to_num(p * np.log(2 * p)) + np.nan_to_num((1 - p) * np.log(2 * (1 - p)))
    obj = 0.375 * p + 0.625 * (1 - p) + kl / 2.0
    assert abs(p[np.argmin(obj)] - br[0, 0]) <= 1e-4
    zero = GameHandle(w, SkewMatrix.zeros(2), reg)
    np.testing.assert_allclose(best_response(zero, delta(1)), w.explore_policy, atol=1e-15)
    inf = GameHandle(w, w.theta_star, reg.with_eta(np.inf))
    np.testing.assert_array_equal(best_response(inf, w.explore_policy), delta(0))


def test_max_response_mirrors_best_response(rng):
    w = make_world(rng, dim=4, n_ctx=2, n_act=5, nuc_bound=2.0)
    h = true_game(w, make_regularizer("reverse-kl", w, 1.5))
    pi = rng.dirichlet(np.ones(5), size=2)
    # by skew symmetry J(a, pi) = 1 - J(pi, a)
    np.testing.assert_allclose(row_payoffs(h, pi), 1 - column_payoffs(h, pi), atol=1e-14)
    np.testing.assert_allclose(max_response(h, pi), best_response(h, pi), atol=1e-14)


def test_dominant_game():
    c = 0.2
    w = two_action_world(c)
    h = true_game(w, make_regularizer("reverse-kl", w, np.inf))
    sol = solve_sne(h, tol=1e-9)
    np.testing.assert_allclose(sol.policy, delta(0), atol=1e-9)
    assert sol.dual_gap_estimate <= 1e-9
    assert dual_gap(delta(1), h) == pytest.approx(c, abs=1e-15)
    # exhaustive pure-strategy check: row 0 weakly beats every column
    B = h.payoff_tables[0]
    assert np.all(B[0] >= B[1])


def test_cycle_game_symmetric_equilibrium():
    h = true_game(cycle_world(), make_regularizer("reverse-kl", cycle_world(), np.inf))
    sol = solve_sne(h, tol=1e-9)
    assert np.abs(sol.policy - 1 / 3).sum() <= 1e-2
    assert dual_gap(sol.policy, h) <= 1e-9


@pytest.mark.parametrize("kind", ["reverse-kl", "chi-squared", "mixed-kl-chi"])
def test_zero_theta_returns_reference(kind, rng):
    w = make_world(rng, dim=3, n_ctx=2, n_act=4, theta_star=SkewMatrix.zeros(3))
    ref = rng.dirichlet(np.ones(4), size=2) * 0.8 + 0.05
    h = true_game(w, make_regularizer(kind, w, 2.0, reference=ref))
    sol = solve_sne(h)
    np.testing.assert_allclose(sol.policy, ref, atol=1e-12)
    assert sol.dual_gap_estimate <= 1e-15
    assert abs(dual_gap(ref, h)) <= 1e-10


@pytest.mark.parametrize("kind,q", [("reverse-kl", None), ("chi-squared", None),
                                    ("mixed-kl-chi", None), ("neg-entropy", None),
                                    ("tsallis", 0.5), ("tsallis", 2.0)])
@pytest.mark.parametrize("eta", [0.5, 2.0, 32.0])
def test_solver_certifies_equilibrium(kind, q, eta):
    rng = np.random.default_rng(hash((kind, q, eta)) % 2**32)
    w = make_world(rng, dim=4, n_ctx=2, n_act=6, nuc_bound=4.0, feature_mode="random-unit-sphere")
    h = true_game(w, make_regularizer(kind, w, eta, q=q))
    sol = solve_sne(h, tol=1e-9)
    assert sol.converged
    assert dual_gap(sol.policy, h) <= 1e-9
    # symmetric equilibrium: the policy is (nearly) its own regularized best response
    br = best_response(h, sol.policy)
    assert payoff_regularized(h, sol.policy, br) == pytest.approx(0.5, abs=1e-9)


def test_solver_failure_raises():
    rng = np.random.default_rng(0)
    w = make_world(rng, dim=4, n_act=6, nuc_bound=4.0, feature_mode="random-unit-sphere")
    h = true_game(w, make_regularizer("reverse-kl", w, 64.0))
    with pytest.raises(SolverError) as info:
        solve_sne(h, tol=1e-12, max_iter=3)
    assert info.value.policy is not None and info.value.residual > 1e-12
    rep = solve_sne(h, tol=1e-12, max_iter=3, raise_on_failure=False)
    assert not rep.converged


@given(st.integers(0, 100_000), st.sampled_from([0.5, 2.0, 8.0, np.inf]))
def test_gap_nonnegative_and_skew(seed, eta):
    rng = np.random.default_rng(seed)
    w = make_world(rng, dim=3, n_ctx=2, n_act=4, nuc_bound=3.0, feature_mode="hypercube-scaled")
    h = true_game(w, make_regularizer("mixed-kl-chi", w, eta))
    p, q = rng.dirichlet(np.ones(4), size=(2, 2))
    assert payoff(h, p, q) + payoff(h, q, p) == pytest.approx(1.0, abs=1e-12)
    assert payoff_regularized(h, p, q) + payoff_regularized(h, q, p) == pytest.approx(1.0, abs=1e-12)
    assert dual_gap(p, h) >= -1e-12
