"""Regularized symmetric duel games: payoffs, best responses and equilibria.

For a parameter Theta the per-context payoff matrix is
``B[x, a, b] = mu(phi(x,a)^T Theta phi(x,b))``. Skew symmetry of Theta and
symmetry of the link give ``B[x] + B[x]^T = 1``, so the game is symmetric
zero-sum around the value 1/2.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.optimize import linprog

from .env import PreferenceWorld, preference_table
from .regularizers import RegularizerSpec, psi_value, regularized_argmin
from .skewlin import DimensionError, SkewMatrix


class SolverError(RuntimeError):
    """Iterative solver exhausted its budget; carries the last iterate."""

    def __init__(self, message, policy=None, residual=None):
        super().__init__(message)
        self.policy = policy
        self.residual = residual


@dataclass(frozen=True, eq=False)
class GameHandle:
    world: PreferenceWorld
    theta: SkewMatrix
    reg: RegularizerSpec

    def __post_init__(self):
        theta = self.theta if isinstance(self.theta, SkewMatrix) else SkewMatrix(self.theta)
        if theta.dim != self.world.dim:
            raise DimensionError("theta dimension does not match world features")
        if self.reg.reference.shape != self.world.policy_shape:
            raise DimensionError("regularizer reference does not match world shape")
        object.__setattr__(self, "theta", theta)

    @cached_property
    def payoff_tables(self) -> np.ndarray:
        # unclamped: the linear link is only clamped where duels are sampled
        return preference_table(self.world.features, self.theta.entries, self.world.link,
                                clamp=False)

    @property
    def weights(self) -> np.ndarray:
        return self.world.context_dist

    @property
    def eta(self) -> float:
        return self.reg.eta


def true_game(world: PreferenceWorld, reg: RegularizerSpec) -> GameHandle:
    return GameHandle(world, world.theta_star, reg)


def _check(handle, *pis):
    for p in pis:
        if np.shape(p) != handle.world.policy_shape:
            raise DimensionError(f"policy shape {np.shape(p)} != {handle.world.policy_shape}")


def payoff(handle: GameHandle, pi1, pi2) -> float:
    """J(pi1, pi2) = sum_x d0(x) pi1_x^T B_x pi2_x."""
    _check(handle, pi1, pi2)
    per = np.einsum("xa,xab,xb->x", pi1, handle.payoff_tables, pi2)
    return float(handle.weights @ per)


def reg_term(handle: GameHandle, pi) -> float:
    """psi(pi) / eta, zero when unregularized."""
    if handle.reg.unregularized:
        return 0.0
    return psi_value(handle.reg, pi) / handle.eta


def payoff_regularized(handle: GameHandle, pi1, pi2) -> float:
    return payoff(handle, pi1, pi2) - reg_term(handle, pi1) + reg_term(handle, pi2)


def column_payoffs(handle: GameHandle, pi1) -> np.ndarray:
    """J(pi1, b | x) for every context and column action b."""
    return np.einsum("xa,xab->xb", pi1, handle.payoff_tables)


def row_payoffs(handle: GameHandle, pi2) -> np.ndarray:
    """J(a, pi2 | x) for every context and row action a."""
    return np.einsum("xab,xb->xa", handle.payoff_tables, pi2)


def best_response(handle: GameHandle, pi1) -> np.ndarray:
    """Min-player response argmin_pi J(pi1, pi) + psi(pi)/eta.

    The objective separates over contexts and the d0 weights cancel, so each
    context is an independent regularized linear minimization.
    """
    _check(handle, pi1)
    return regularized_argmin(handle.reg, column_payoffs(handle, pi1))


def max_response(handle: GameHandle, pi2) -> np.ndarray:
    """Max-player response argmax_pi J(pi, pi2) - psi(pi)/eta."""
    _check(handle, pi2)
    return regularized_argmin(handle.reg, -row_payoffs(handle, pi2))


def dual_gap(pi, handle: GameHandle) -> float:
    """1/2 - min_pi' J_eta(pi, pi')."""
    return 0.5 - payoff_regularized(handle, pi, best_response(handle, pi))


@dataclass(frozen=True)
class SolveReport:
    policy: np.ndarray
    dual_gap_estimate: float
    iterations: int
    converged: bool


def solve_sne(handle: GameHandle, tol: float = 1e-7, max_iter: int = 200_000,
              init=None, raise_on_failure: bool = True) -> SolveReport:
    """Symmetric Nash equilibrium of the regularized game, certified by its dual gap.

    Finite eta runs the damped fixed point pi <- (1-g) pi + g * max_response(pi),
    starting from ``init`` (default: the reference policy) with
    g = min(1, 2/eta), halving g whenever the gap grows over a 10-step window.
    eta = inf solves one linear program per context.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if handle.reg.unregularized:
        pi = _solve_lp(handle)
        gap = max(dual_gap(pi, handle), 0.0)
        ok = gap <= tol
        if not ok and raise_on_failure:
            raise SolverError(f"LP equilibrium gap {gap:.3g} > tol", pi, gap)
        return SolveReport(pi, gap, 1, ok)

    pi = np.array(handle.reg.reference if init is None else init, dtype=float)
    gamma = min(1.0, 2.0 / handle.eta)
    best_pi, best_gap = pi, dual_gap(pi, handle)
    last_gap = best_gap
    it = 0
    while best_gap > tol and it < max_iter:
        it += 1
        pi = (1.0 - gamma) * pi + gamma * max_response(handle, pi)
        if it > 10 and it % 10:
            continue
        gap = dual_gap(pi, handle)
        if gap < best_gap:
            best_pi, best_gap = pi, gap
        if it % 10 == 0:
            if gap > last_gap:
                # growing over a window means the step overshoots: damp harder
                # and restart from the best certificate
                gamma *= 0.5
                pi = best_pi
                gap = best_gap
            last_gap = gap
    gap = max(best_gap, 0.0)
    ok = gap <= tol
    if not ok and raise_on_failure:
        raise SolverError(f"SNE solver stopped at gap {gap:.3g} after {it} iterations",
                          best_pi, gap)
    return SolveReport(best_pi, gap, it, ok)


# tighter than the HiGHS defaults so the exact gap certificate reaches ~1e-12
_LP_OPTIONS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


def _solve_lp(handle: GameHandle) -> np.ndarray:
    """Per-context maximin strategy: max v s.t. pi^T B_x[:, b] >= v for all b."""
    B = handle.payoff_tables
    n_ctx, K, _ = B.shape
    out = np.empty((n_ctx, K))
    c = np.zeros(K + 1)
    c[-1] = -1.0
    A_eq = np.append(np.ones(K), 0.0)[None]
    bounds = [(0, None)] * K + [(None, None)]
    for x in range(n_ctx):
        A_ub = np.hstack([-B[x].T, np.ones((K, 1))])
        res = linprog(c, A_ub=A_ub, b_ub=np.zeros(K), A_eq=A_eq, b_eq=[1.0],
                      bounds=bounds, method="highs", options=_LP_OPTIONS)
        if not res.success:
            raise SolverError(f"LP failed in context {x}: {res.message}")
        p = np.maximum(res.x[:K], 0.0)
        out[x] = p / p.sum()
    return out
