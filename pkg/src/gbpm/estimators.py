"""Maximum-likelihood estimation of the skew preference matrix.

Duels are stored as aggregated pair tables: one row per distinct feature
pair with its outer product ``X = phi1 phi2^T``, number of duels ``count``
and number of wins ``wins``. The negative log-likelihood is

    L(Theta) = sum_p count_p * m(<Theta, X_p>) - wins_p * <Theta, X_p>,

so its cost does not grow with the number of duels once pairs repeat.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .env import LinkSpec, link_eval, log_partition
from .skewlin import SkewMatrix, svt


class EstimationError(RuntimeError):
    """Optimizer ran out of iterations; carries the last iterate and residual."""

    def __init__(self, message, theta=None, residual=None):
        super().__init__(message)
        self.theta = theta
        self.residual = residual


@dataclass(frozen=True)
class DuelRecord:
    x: int
    phi1: np.ndarray
    phi2: np.ndarray
    r: int

    def __post_init__(self):
        for v in (self.phi1, self.phi2):
            if np.linalg.norm(v) > 1 + 1e-12:
                raise ValueError("feature norms must be <= 1")
        if self.r not in (0, 1):
            raise ValueError("outcome must be 0 or 1")


@dataclass(frozen=True, eq=False)
class DuelBatch:
    """Aggregated duel data: flattened outer products with counts and wins."""

    outer: np.ndarray  # (P, d*d), row-major flattening of phi1 phi2^T
    count: np.ndarray  # (P,)
    wins: np.ndarray   # (P,)
    dim: int

    @property
    def n(self) -> float:
        return float(self.count.sum())

    @classmethod
    def empty(cls, d: int) -> "DuelBatch":
        return cls(np.zeros((0, d * d)), np.zeros(0), np.zeros(0), d)

    @classmethod
    def from_records(cls, records: Sequence[DuelRecord], dim: int | None = None) -> "DuelBatch":
        if not records:
            if dim is None:
                raise ValueError("dim is required for an empty record list")
            return cls.empty(dim)
        P1 = np.array([r.phi1 for r in records], dtype=float)
        P2 = np.array([r.phi2 for r in records], dtype=float)
        d = P1.shape[1]
        X = np.einsum("ni,nj->nij", P1, P2).reshape(len(records), d * d)
        return cls(X, np.ones(len(records)), np.array([r.r for r in records], float), d)


def as_batch(data, dim: int | None = None) -> DuelBatch:
    return data if isinstance(data, DuelBatch) else DuelBatch.from_records(list(data), dim)


class PairTable:
    """Running duel counts over every (context, a1, a2) triple of a finite world."""

    def __init__(self, features: np.ndarray):
        F = np.asarray(features, dtype=float)
        n_ctx, K, d = F.shape
        self.dim = d
        self.shape = (n_ctx, K, K)
        self.outer = np.einsum("xai,xbj->xabij", F, F).reshape(n_ctx * K * K, d * d)
        self.count = np.zeros(n_ctx * K * K)
        self.wins = np.zeros(n_ctx * K * K)

    def add(self, x: int, a1: int, a2: int, r: int) -> None:
        i = np.ravel_multi_index((x, a1, a2), self.shape)
        self.count[i] += 1
        self.wins[i] += r

    def add_many(self, x, a1, a2, r) -> None:
        idx = np.ravel_multi_index((np.asarray(x), np.asarray(a1), np.asarray(a2)), self.shape)
        np.add.at(self.count, idx, 1.0)
        np.add.at(self.wins, idx, np.asarray(r, dtype=float))

    def batch(self) -> DuelBatch:
        keep = self.count > 0
        return DuelBatch(self.outer[keep], self.count[keep], self.wins[keep], self.dim)


class MleMode(str, Enum):
    CONSTRAINED_BALL = "constrained-ball"
    NUCLEAR_PROX = "nuclear-prox"


@dataclass(frozen=True)
class MleOptions:
    """Optimizer settings.

    ``grad_tol`` bounds the gradient-mapping norm of the per-duel average loss.
    """

    max_iter: int = 20_000
    grad_tol: float = 1e-9
    backtrack: float = 0.5
    rel_obj_tol: float = 1e-10
    S: float = 1.0
    mode: MleMode = MleMode.CONSTRAINED_BALL
    callback: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if not self.S > 0:
            raise ValueError("S must be positive")
        object.__setattr__(self, "mode", MleMode(self.mode))


def _loss_grad(theta_flat, batch: DuelBatch, link: LinkSpec):
    if batch.count.size == 0:
        return 0.0, np.zeros_like(theta_flat)
    z = batch.outer @ theta_flat
    loss = float(batch.count @ log_partition(link, z) - batch.wins @ z)
    resid = batch.count * link_eval(link, z) - batch.wins
    return loss, resid @ batch.outer


def _loss(theta_flat, batch, link):
    if batch.count.size == 0:
        return 0.0
    z = batch.outer @ theta_flat
    return float(batch.count @ log_partition(link, z) - batch.wins @ z)


def nll_and_grad(theta, data, link: LinkSpec):
    """Negative log-likelihood and its Euclidean gradient sum (mu(z) - r) X."""
    T = np.asarray(theta, dtype=float)
    d = T.shape[0]
    batch = as_batch(data, d)
    f, g = _loss_grad(T.ravel(), batch, link)
    return f, g.reshape(d, d)


def _skew(v, d):
    M = v.reshape(d, d)
    return (0.5 * (M - M.T)).ravel()


def _ball(v, S):
    n = np.linalg.norm(v)
    return v if n <= S else v * (S / n)


def constrained_mle(data, S: float, link: LinkSpec, opts: MleOptions | None = None,
                    init=None, dim: int | None = None) -> SkewMatrix:
    """argmin of the likelihood over skew matrices with Frobenius norm <= S.

    Projected gradient with Barzilai-Borwein trial steps and backtracking.
    The projection (skew part, then radial rescale) is exact because the skew
    matrices form a subspace and the ball is centered at the origin.
    """
    opts = opts or MleOptions(S=S)
    batch = as_batch(data, dim if init is None else np.asarray(init).shape[0])
    d = batch.dim
    if batch.n == 0:
        return SkewMatrix.zeros(d)
    proj = lambda v: _ball(_skew(v, d), S)  # noqa: E731
    theta = proj(np.zeros(d * d) if init is None else np.asarray(init, float).ravel())
    N = batch.n
    t_safe = 1.0 / (link.l_mu * N)  # the loss Hessian is bounded by l_mu * N
    f, g = _loss_grad(theta, batch, link)
    t = t_safe
    prev = None
    for it in range(opts.max_iter):
        resid = np.linalg.norm(theta - proj(theta - t_safe * g)) / (t_safe * N)
        if resid <= opts.grad_tol:
            return SkewMatrix(theta.reshape(d, d))
        if prev is not None:
            s, y = theta - prev[0], g - prev[1]
            sy = s @ y
            t = (s @ s) / sy if sy > 0 else t_safe
            t = max(t, t_safe)
        while True:
            cand = proj(theta - t * g)
            step = cand - theta
            fc = _loss(cand, batch, link)
            if fc <= f + g @ step + (step @ step) / (2 * t) + 1e-12 * abs(f) or t <= t_safe:
                break
            t = max(t * opts.backtrack, t_safe)
        prev = (theta, g)
        theta = cand
        f, g = _loss_grad(theta, batch, link)
        if opts.callback is not None:
            opts.callback(it, theta.reshape(d, d), f)
    resid = np.linalg.norm(theta - proj(theta - t_safe * g)) / (t_safe * N)
    raise EstimationError(f"constrained MLE did not converge (residual {resid:.3g})",
                          SkewMatrix(theta.reshape(d, d)), resid)


def nuclear_mle(data, lam: float, link: LinkSpec, opts: MleOptions | None = None,
                init=None, dim: int | None = None) -> SkewMatrix:
    """argmin over skew Theta of L(Theta)/n + lam * ||Theta||_nuc.

    Proximal gradient: a gradient step on the averaged loss followed by
    singular-value soft-thresholding, with backtracking so that the
    objective never increases.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    opts = opts or MleOptions(mode=MleMode.NUCLEAR_PROX)
    batch = as_batch(data, dim if init is None else np.asarray(init).shape[0])
    d = batch.dim
    if batch.n == 0:
        return SkewMatrix.zeros(d)
    N = batch.n

    def smooth(v):
        f, g = _loss_grad(v, batch, link)
        return f / N, g / N

    def prox(v, t):
        out = svt(_skew(v, d).reshape(d, d), t * lam)
        return out.ravel()

    def nuc(v):
        return float(np.linalg.svd(v.reshape(d, d), compute_uv=False).sum())

    theta = _skew(np.zeros(d * d) if init is None else np.asarray(init, float).ravel(), d)
    t_safe = 1.0 / link.l_mu
    f, g = smooth(theta)
    obj = f + lam * nuc(theta)
    t = t_safe
    prev = None
    for it in range(opts.max_iter):
        if prev is not None:
            s, y = theta - prev[0], g - prev[1]
            sy = s @ y
            t = max((s @ s) / sy, t_safe) if sy > 0 else t_safe
        while True:
            cand = prox(theta - t * g, t)
            step = cand - theta
            fc = _loss(cand, batch, link) / N
            if fc <= f + g @ step + (step @ step) / (2 * t) + 1e-15 or t <= t_safe:
                break
            t = max(t * opts.backtrack, t_safe)
        obj_c = fc + lam * nuc(cand)
        resid = np.linalg.norm(step) / t
        prev = (theta, g)
        theta = cand
        f, g = smooth(theta)
        rel = abs(obj - obj_c) / max(abs(obj), 1e-300)
        obj = obj_c
        if opts.callback is not None:
            opts.callback(it, theta.reshape(d, d), obj)
        if resid <= opts.grad_tol or rel <= opts.rel_obj_tol:
            return SkewMatrix(theta.reshape(d, d))
    raise EstimationError(f"nuclear MLE did not converge (residual {resid:.3g})",
                          SkewMatrix(theta.reshape(d, d)), resid)


def lambda_schedule(T0: int, delta: float, l_mu: float, dim: int) -> float:
    """Regularization level sqrt(32 l_mu log(4 d / delta) / T0)."""
    if T0 < 1 or not (0 < delta < 1):
        raise ValueError("need T0 >= 1 and delta in (0, 1)")
    return float(np.sqrt(32.0 * l_mu * np.log(4.0 * dim / delta) / T0))
