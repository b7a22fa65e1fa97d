"""Online learning loops and regret accounting.

Two algorithms share one record format:

* greedy sampling: the max-player plays the equilibrium of the current
  estimated game, the min-player keeps exploring with the reference policy;
* explore-then-commit: both players explore for T0 rounds, one nuclear-norm
  fit, then both commit to the equilibrium of the fitted game.

Dual gaps are always measured in the true game (the simulator knows
theta_star). A gap depends only on the policy, so it is computed once per
distinct policy and broadcast to the rounds that played it.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .env import PreferenceWorld, min_eig_design
from .estimators import (EstimationError, MleMode, MleOptions, PairTable, constrained_mle,
                         lambda_schedule, nuclear_mle)
from .game import (GameHandle, SolverError, best_response, dual_gap, max_response, payoff,
                   payoff_regularized, reg_term, solve_sne, true_game)
from .regularizers import RegularizerSpec
from .skewlin import SkewMatrix, operator_norm


class Algorithm(str, Enum):
    GS = "gs"
    ETC = "etc"


class T0Mode(str, Enum):
    ETA_AWARE = "eta-aware"
    ETA_FREE = "eta-free"
    MANUAL = "manual"


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Everything needed to reproduce one run."""

    world: PreferenceWorld
    reg: RegularizerSpec
    horizon: int
    algorithm: Algorithm = Algorithm.GS
    seed: int = 0
    t0_mode: T0Mode = T0Mode.ETA_AWARE
    t0_manual: int | None = None
    t0_constant: float = 1.0
    delta: float = 0.1
    norm_bound: float = 1.0
    rank_bound: int = 2
    sne_tol: float = 1e-7
    sne_max_iter: int = 200_000
    mle: MleOptions = field(default_factory=MleOptions)
    refit_stride: int = 1
    lambda_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        object.__setattr__(self, "t0_mode", T0Mode(self.t0_mode))
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.t0_mode is T0Mode.MANUAL and not (
                self.t0_manual is not None and 1 <= self.t0_manual <= self.horizon):
            raise ValueError("manual T0 must lie in [1, horizon]")
        if self.refit_stride < 1:
            raise ValueError("refit_stride must be >= 1")
        if not 0 < self.delta < 1:
            raise ValueError("delta must be in (0, 1)")


@dataclass(eq=False)
class RunRecord:
    """Trajectory of one run.

    Per-round arrays have length T (or the number of completed rounds for an
    aborted run). Per-policy arrays are indexed by ``policy_ids``.
    """

    config: RunConfig
    contexts: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    rewards: np.ndarray
    policy_ids: np.ndarray       # max-player policy per round
    opponent_ids: np.ndarray     # min-player policy per round
    policies: np.ndarray         # (P, n_ctx, K)
    thetas: np.ndarray           # (P, d, d): estimate each policy was solved for
    greedy: np.ndarray           # (P,) policy is an equilibrium of its estimate
    solver_residuals: np.ndarray  # (P,) gap of each policy in its estimated game
    policy_gaps: np.ndarray      # (P,) true dual gap of each policy
    est_frob_err: np.ndarray     # (P,)
    est_op_err: np.ndarray       # (P,)
    timing: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def rounds(self) -> int:
        return int(self.policy_ids.size)

    @property
    def gap_max(self) -> np.ndarray:
        return self.policy_gaps[self.policy_ids]

    @property
    def gap_min(self) -> np.ndarray:
        return self.policy_gaps[self.opponent_ids]

    @property
    def cum_mbr(self) -> np.ndarray:
        return np.cumsum(self.gap_max)

    @property
    def cum_abr(self) -> np.ndarray:
        return np.cumsum(self.gap_max + self.gap_min)

    @property
    def round_frob_err(self) -> np.ndarray:
        return self.est_frob_err[self.policy_ids]

    @property
    def round_op_err(self) -> np.ndarray:
        return self.est_op_err[self.policy_ids]

    def true_handle(self) -> GameHandle:
        return true_game(self.config.world, self.config.reg)


class RunAborted(RuntimeError):
    """A solver or estimator failed; ``record`` holds the completed prefix."""

    def __init__(self, message, record: RunRecord):
        super().__init__(message)
        self.record = record


# ---------------------------------------------------------------- T0 schedules

@dataclass(frozen=True)
class T0Params:
    eta: float
    beta: float
    r: int
    d: int
    delta: float
    kappa: float
    c_min: float


def choose_T0(T: int, mode, params: T0Params, constant: float = 1.0) -> int:
    """Exploration length from the eta-aware or eta-free schedule, clamped to [1, T].

    eta-aware: c / kappa / C_min^2 * sqrt(T eta beta r log(d/delta))
    eta-free:  c * (r T^2 log(d/delta) / (kappa^2 C_min^4))^(1/3)
    """
    mode = T0Mode(mode)
    p = params
    log_term = np.log(p.d / p.delta)
    with np.errstate(divide="ignore", over="ignore"):
        if mode is T0Mode.ETA_AWARE:
            raw = constant / p.kappa / p.c_min ** 2 * np.sqrt(T * p.eta * p.beta * p.r * log_term)
        elif mode is T0Mode.ETA_FREE:
            raw = constant * np.cbrt(p.r * T ** 2 * log_term / (p.kappa ** 2 * p.c_min ** 4))
        else:
            raise ValueError("manual T0 is set directly, not scheduled")
    if not np.isfinite(raw):
        return int(T)
    return int(min(max(round(float(raw)), 1), T))


def t0_params(cfg: RunConfig) -> T0Params:
    w = cfg.world
    return T0Params(eta=cfg.reg.eta, beta=cfg.reg.beta, r=max(cfg.rank_bound // 2, 1), d=w.dim,
                    delta=cfg.delta, kappa=w.link.kappa, c_min=min_eig_design(w))


def resolve_T0(cfg: RunConfig) -> int:
    if cfg.t0_mode is T0Mode.MANUAL:
        return int(cfg.t0_manual)
    return choose_T0(cfg.horizon, cfg.t0_mode, t0_params(cfg), cfg.t0_constant)


# ---------------------------------------------------------------- runs

class _Trace:
    """Mutable accumulator turned into a RunRecord at the end of a run."""

    def __init__(self, cfg: RunConfig):
        T = cfg.horizon
        self.cfg = cfg
        self.truth = true_game(cfg.world, cfg.reg)
        self.x = np.zeros(T, dtype=np.int64)
        self.a1 = np.zeros(T, dtype=np.int64)
        self.a2 = np.zeros(T, dtype=np.int64)
        self.r = np.zeros(T, dtype=np.int64)
        self.pid = np.zeros(T, dtype=np.int64)
        self.oid = np.zeros(T, dtype=np.int64)
        self.done = 0
        self.policies, self.thetas, self.greedy, self.resid = [], [], [], []
        self.gaps, self.frob, self.op = [], [], []
        self.timing = {"estimate": 0.0, "solve": 0.0, "evaluate": 0.0, "sample": 0.0}

    def add_policy(self, pi, theta, greedy: bool, resid: float) -> int:
        t0 = time.perf_counter()
        theta = np.asarray(theta, dtype=float)
        err = self.cfg.world.theta_star.entries - theta
        self.policies.append(np.array(pi, dtype=float))
        self.thetas.append(theta)
        self.greedy.append(bool(greedy))
        self.resid.append(float(resid))
        self.gaps.append(dual_gap(pi, self.truth))
        self.frob.append(float(np.linalg.norm(err)))
        self.op.append(operator_norm(err))
        self.timing["evaluate"] += time.perf_counter() - t0
        return len(self.policies) - 1

    def record(self, meta, error=None) -> RunRecord:
        n = self.done
        return RunRecord(
            config=self.cfg, contexts=self.x[:n], a1=self.a1[:n], a2=self.a2[:n],
            rewards=self.r[:n], policy_ids=self.pid[:n], opponent_ids=self.oid[:n],
            policies=np.array(self.policies), thetas=np.array(self.thetas),
            greedy=np.array(self.greedy, dtype=bool), solver_residuals=np.array(self.resid),
            policy_gaps=np.array(self.gaps), est_frob_err=np.array(self.frob),
            est_op_err=np.array(self.op), timing=dict(self.timing), meta=meta, error=error)


def _draw(cdf_rows, u):
    # inverse-CDF sampling; clip guards against rounding in the last cumsum entry
    return min(int(np.searchsorted(cdf_rows, u, side="right")), cdf_rows.size - 1)


def _play_round(tr: _Trace, t: int, u, pi1, pi2, cdf_ctx, table=None):
    w = tr.cfg.world
    x = _draw(cdf_ctx, u[0])
    a1 = _draw(np.cumsum(pi1[x]), u[1])
    a2 = _draw(np.cumsum(pi2[x]), u[2])
    r = int(u[3] < w.pref_table[x, a1, a2])
    tr.x[t], tr.a1[t], tr.a2[t], tr.r[t] = x, a1, a2, r
    if table is not None:
        table.add(x, a1, a2, r)


def _sne_of(cfg: RunConfig, theta, init):
    handle = GameHandle(cfg.world, theta, cfg.reg)
    return solve_sne(handle, cfg.sne_tol, cfg.sne_max_iter, init=init)


def run_greedy_sampling(cfg: RunConfig) -> RunRecord:
    """Greedy sampling with a constrained MLE refit every ``refit_stride`` rounds."""
    if cfg.algorithm is not Algorithm.GS:
        raise ValueError("config is not a greedy-sampling config")
    w, T = cfg.world, cfg.horizon
    tr = _Trace(cfg)
    rng = np.random.default_rng(cfg.seed)
    U = rng.random((T, 4))
    cdf_ctx = np.cumsum(w.context_dist)
    rho = w.explore_policy
    table = PairTable(w.features)
    mle = replace(cfg.mle, mode=MleMode.CONSTRAINED_BALL, S=cfg.norm_bound)
    meta = {"algorithm": "gs", "warm_start": True, "refit_stride": cfg.refit_stride,
            "n_clamped": w.n_clamped}

    theta = SkewMatrix.zeros(w.dim)
    resid0 = dual_gap(rho, GameHandle(w, theta, cfg.reg))
    pid = tr.add_policy(rho, theta, resid0 <= cfg.sne_tol, max(resid0, 0.0))
    oid = pid
    pi = rho
    try:
        for t in range(T):
            t0 = time.perf_counter()
            _play_round(tr, t, U[t], pi, rho, cdf_ctx, table)
            tr.pid[t], tr.oid[t] = pid, oid
            tr.done = t + 1
            tr.timing["sample"] += time.perf_counter() - t0
            if t + 1 == T or (t + 1) % cfg.refit_stride:
                continue
            t0 = time.perf_counter()
            theta = constrained_mle(table.batch(), cfg.norm_bound, w.link, mle, init=theta)
            t1 = time.perf_counter()
            rep = _sne_of(cfg, theta, pi)
            tr.timing["estimate"] += t1 - t0
            tr.timing["solve"] += time.perf_counter() - t1
            pi = rep.policy
            pid = tr.add_policy(pi, theta, True, rep.dual_gap_estimate)
    except (SolverError, EstimationError) as exc:
        rec = tr.record(meta, error=f"{type(exc).__name__}: {exc}")
        raise RunAborted(str(exc), rec) from exc
    return tr.record(meta)


def run_etc(cfg: RunConfig) -> RunRecord:
    """Explore-then-commit with a single nuclear-norm regularized fit after T0 rounds."""
    if cfg.algorithm is not Algorithm.ETC:
        raise ValueError("config is not an explore-then-commit config")
    w, T = cfg.world, cfg.horizon
    T0 = resolve_T0(cfg)
    tr = _Trace(cfg)
    rng = np.random.default_rng(cfg.seed)
    U = rng.random((T, 4))
    cdf_ctx = np.cumsum(w.context_dist)
    rho = w.explore_policy
    table = PairTable(w.features)
    lam = cfg.lambda_scale * lambda_schedule(T0, cfg.delta, w.link.l_mu, w.dim)
    meta = {"algorithm": "etc", "T0": T0, "lambda": lam, "n_clamped": w.n_clamped}
    zero = SkewMatrix.zeros(w.dim)
    explore_id = tr.add_policy(rho, zero, False, np.nan)
    try:
        for t in range(T0):
            _play_round(tr, t, U[t], rho, rho, cdf_ctx, table)
            tr.pid[t] = tr.oid[t] = explore_id
            tr.done = t + 1
        t0 = time.perf_counter()
        mle = replace(cfg.mle, mode=MleMode.NUCLEAR_PROX)
        theta = nuclear_mle(table.batch(), lam, w.link, mle)
        t1 = time.perf_counter()
        rep = _sne_of(cfg, theta, None)
        tr.timing["estimate"] += t1 - t0
        tr.timing["solve"] += time.perf_counter() - t1
        pi = rep.policy
        commit_id = tr.add_policy(pi, theta, True, rep.dual_gap_estimate)
        meta["theta_rank"] = theta.rank(1e-3)
        for t in range(T0, T):
            _play_round(tr, t, U[t], pi, pi, cdf_ctx)
            tr.pid[t] = tr.oid[t] = commit_id
            tr.done = t + 1
    except (SolverError, EstimationError) as exc:
        rec = tr.record(meta, error=f"{type(exc).__name__}: {exc}")
        raise RunAborted(str(exc), rec) from exc
    return tr.record(meta)


def run(cfg: RunConfig) -> RunRecord:
    return run_greedy_sampling(cfg) if cfg.algorithm is Algorithm.GS else run_etc(cfg)


# ---------------------------------------------------------------- regrets

def _mixture(record: RunRecord, ids) -> tuple[np.ndarray, np.ndarray]:
    counts = np.bincount(ids, minlength=len(record.policies)).astype(float)
    mix = np.tensordot(counts / counts.sum(), record.policies, axes=1)
    return mix, counts


def regret_suite(record: RunRecord) -> dict:
    """Best-response and Nash regrets of a (possibly partial) run.

    The Nash regrets compare against the best fixed policy in hindsight, which
    reduces to one regularized best response against the averaged opponent.
    """
    h = record.true_handle()
    T = record.rounds
    if T == 0:
        return {k: 0.0 for k in ("mbr", "abr", "an", "mn", "mbr_unreg")}
    mbr = float(record.gap_max.sum())
    abr = float(mbr + record.gap_min.sum())
    pbar1, c1 = _mixture(record, record.policy_ids)
    pbar2, c2 = _mixture(record, record.opponent_ids)
    psi = np.array([reg_term(h, p) for p in record.policies])
    # max over a fixed min-player comparator of sum_t (1/2 - J_eta(pi1_t, pi))
    br1 = best_response(h, pbar1)
    mn = T / 2 + c1 @ psi - T * (payoff(h, pbar1, br1) + reg_term(h, br1))
    # max-player comparator against the averaged min-player, plus the min-player side
    mr2 = max_response(h, pbar2)
    an = (T * (payoff(h, mr2, pbar2) - reg_term(h, mr2)) + c2 @ psi) + (mn - T / 2)
    unreg = true_game(record.config.world, record.config.reg.with_eta(np.inf))
    gaps_unreg = np.array([dual_gap(p, unreg) for p in record.policies])
    return {"mbr": mbr, "abr": abr, "an": float(an), "mn": float(mn),
            "mbr_unreg": float(gaps_unreg[record.policy_ids].sum())}


def online_to_batch(record: RunRecord) -> dict:
    """Uniform mixture of the max-player policies and its certified equilibrium gap.

    The gap is max_pi J_eta(pi, mix) - J_eta(mix, pi); by symmetry of the game
    it equals twice the dual gap of the mixture.
    """
    h = record.true_handle()
    mix, _ = _mixture(record, record.policy_ids)
    mr = max_response(h, mix)
    gap = payoff_regularized(h, mr, mix) - payoff_regularized(h, mix, mr)
    T = max(record.rounds, 1)
    bound = 2.0 * float(record.gap_max.sum()) / T
    return {"mixture": mix, "gap": float(gap), "bound": bound}
