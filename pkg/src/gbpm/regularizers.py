"""Strongly convex policy regularizers.

Every regularizer is a d0-weighted sum of per-context terms, and every
per-context term is separable over actions. This makes the regularized
best response an independent one-dimensional root find per context, solved
in closed form where possible.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import logsumexp, wrightomega, xlogy

from .env import PreferenceWorld, validate_policy


class RegKind(str, Enum):
    REVERSE_KL = "reverse-kl"
    CHI_SQUARED = "chi-squared"
    MIXED = "mixed-kl-chi"
    NEG_ENTROPY = "neg-entropy"
    TSALLIS = "tsallis"


DIVERGENCE_KINDS = (RegKind.REVERSE_KL, RegKind.CHI_SQUARED, RegKind.MIXED)
_KL_KINDS = (RegKind.REVERSE_KL, RegKind.MIXED)


class SupportError(ValueError):
    """A policy puts mass where the reference has none (infinite divergence)."""


@dataclass(frozen=True, eq=False)
class RegularizerSpec:
    """Regularizer psi with strength 1/eta.

    ``weights`` are the context probabilities used to average the per-context
    terms. ``eta = inf`` switches every consumer to the unregularized game.
    """

    kind: RegKind
    reference: np.ndarray
    eta: float
    weights: np.ndarray
    q: float | None = None
    beta_inv: float | None = None

    def __post_init__(self):
        kind = RegKind(self.kind)
        object.__setattr__(self, "kind", kind)
        ref = validate_policy(self.reference)
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (ref.shape[0],) or abs(w.sum() - 1) > 1e-12 or np.any(w < 0):
            raise ValueError("weights must be a distribution over contexts")
        if not self.eta > 0:
            raise ValueError("eta must be positive (use inf for unregularized)")
        if kind in _KL_KINDS and np.any(ref <= 0):
            raise SupportError("KL-type regularizers need a full-support reference")
        if kind is RegKind.TSALLIS:
            if self.q is None or not (0 < self.q <= 2) or self.q == 1:
                raise ValueError("Tsallis exponent q must lie in (0,1) or (1,2]")
        for name, val in (("reference", ref), ("weights", w)):
            val = val.copy()
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "eta", float(self.eta))
        if self.beta_inv is None:
            object.__setattr__(self, "beta_inv", _beta_inv(kind, self.q, ref, w))
        if not self.beta_inv > 0:
            raise ValueError("beta_inv must be positive")

    @property
    def unregularized(self) -> bool:
        return np.isinf(self.eta)

    @property
    def beta(self) -> float:
        return 1.0 / self.beta_inv

    def with_eta(self, eta: float) -> "RegularizerSpec":
        return RegularizerSpec(self.kind, self.reference, eta, self.weights, self.q, self.beta_inv)


def make_regularizer(kind, world: PreferenceWorld, eta: float, q: float | None = None,
                     reference=None) -> RegularizerSpec:
    """Regularizer over ``world`` with the exploration policy as default reference."""
    ref = world.explore_policy if reference is None else reference
    return RegularizerSpec(RegKind(kind), ref, eta, world.context_dist, q)


def _chi_floor(ref, weights) -> float:
    return float(np.min(weights[weights > 0]) * np.min(ref[ref > 0]))


def _beta_inv(kind: RegKind, q, ref, weights) -> float:
    # constants w.r.t. the d0-weighted l1 norm sum_x d0(x) |p_x - q_x|_1
    if kind in (RegKind.REVERSE_KL, RegKind.NEG_ENTROPY):
        return 0.5
    if kind is RegKind.CHI_SQUARED:
        return _chi_floor(ref, weights)
    if kind is RegKind.MIXED:
        return 0.5 + _chi_floor(ref, weights)
    n_act = ref.shape[1]
    return float(q) if q < 1 else float(q * n_act ** (1.0 - q))


def strong_convexity_constant(reg: RegularizerSpec, world: PreferenceWorld | None = None) -> float:
    """Certified beta_inv: Bregman(p, p') >= beta_inv/2 * (sum_x d0 |p_x - p'_x|_1)^2.

    Reverse KL and negative entropy use the Pinsker constant 1/2. Chi-squared
    uses the instance floor min_x d0(x) * min_a ref(a|x); this is valid but
    loose, since Cauchy-Schwarz gives sum_a dp_a^2 / ref_a >= (sum_a |dp_a|)^2
    and hence the reference-free constant 2. The mixed kind adds the KL and
    chi-squared constants. Tsallis uses q, or q * K^(1-q) when q > 1.
    """
    return _beta_inv(reg.kind, reg.q, reg.reference, reg.weights)


def policy_l1(p, q, weights=None) -> float:
    """Context-weighted l1 distance; unweighted sum over contexts if no weights."""
    per = np.abs(np.asarray(p) - np.asarray(q)).sum(axis=1)
    return float(per.sum() if weights is None else per @ weights)


# ---------------------------------------------------------------- values

def _check_support(reg: RegularizerSpec, pi):
    if np.any((reg.reference <= 0) & (pi > 0)):
        raise SupportError("policy is not absolutely continuous w.r.t. the reference")


def psi_rows(reg: RegularizerSpec, pi) -> np.ndarray:
    """Per-context regularizer values (unweighted)."""
    pi = np.asarray(pi, dtype=float)
    ref = reg.reference
    k = reg.kind
    if k in DIVERGENCE_KINDS:
        _check_support(reg, pi)
    with np.errstate(divide="ignore", invalid="ignore"):
        if k is RegKind.REVERSE_KL:
            return (xlogy(pi, pi) - xlogy(pi, ref)).sum(axis=1)
        if k is RegKind.CHI_SQUARED:
            return _chi_rows(pi, ref)
        if k is RegKind.MIXED:
            return (xlogy(pi, pi) - xlogy(pi, ref)).sum(axis=1) + _chi_rows(pi, ref)
        if k is RegKind.NEG_ENTROPY:
            return xlogy(pi, pi).sum(axis=1) + np.log(pi.shape[1])
    q = reg.q
    K = pi.shape[1]
    return ((pi ** q).sum(axis=1) - K ** (1.0 - q)) / (q - 1.0)


def _chi_rows(pi, ref):
    pos = ref > 0
    d = np.where(pos, pi - ref, 0.0)
    return np.where(pos, d * d / np.where(pos, ref, 1.0), 0.0).sum(axis=1)


def psi_value(reg: RegularizerSpec, pi) -> float:
    """d0-weighted regularizer value; zero under ``eta = inf`` is not implied."""
    return float(reg.weights @ psi_rows(reg, pi))


def psi_grad(reg: RegularizerSpec, pi) -> np.ndarray:
    """Gradient of :func:`psi_value` w.r.t. the policy entries."""
    pi = np.asarray(pi, dtype=float)
    ref = reg.reference
    k = reg.kind
    if k in (RegKind.REVERSE_KL, RegKind.MIXED, RegKind.NEG_ENTROPY) and np.any(pi <= 0):
        raise ValueError("gradient is unbounded on the simplex boundary")
    if k is RegKind.TSALLIS and reg.q < 1 and np.any(pi <= 0):
        raise ValueError("gradient is unbounded on the simplex boundary")
    if k is RegKind.REVERSE_KL:
        g = np.log(pi / ref) + 1.0
    elif k is RegKind.CHI_SQUARED:
        g = 2.0 * (pi / ref - 1.0)
    elif k is RegKind.MIXED:
        g = np.log(pi / ref) + 1.0 + 2.0 * (pi / ref - 1.0)
    elif k is RegKind.NEG_ENTROPY:
        g = np.log(pi) + 1.0
    else:
        g = reg.q * pi ** (reg.q - 1.0) / (reg.q - 1.0)
    return reg.weights[:, None] * g


def bregman(reg: RegularizerSpec, p, q) -> float:
    """Bregman divergence psi(p) - psi(q) - <grad psi(q), p - q>."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    k = reg.kind
    with np.errstate(divide="ignore", invalid="ignore"):
        if k in (RegKind.REVERSE_KL, RegKind.NEG_ENTROPY, RegKind.MIXED):
            if np.any((q <= 0) & (p > 0)):
                return np.inf
            rows = (xlogy(p, p) - xlogy(p, q)).sum(axis=1)
            if k is RegKind.MIXED:
                rows = rows + _chi_rows(p - q + reg.reference, reg.reference)
            return float(reg.weights @ rows)
        if k is RegKind.CHI_SQUARED:
            return float(reg.weights @ _chi_rows(p - q + reg.reference, reg.reference))
    return psi_value(reg, p) - psi_value(reg, q) - float(np.sum(psi_grad(reg, q) * (p - q)))


# ---------------------------------------------------------------- best response

def regularized_argmin(reg: RegularizerSpec, cost) -> np.ndarray:
    """Per-context minimizer of <cost_x, pi_x> + psi_x(pi_x) / eta over the simplex.

    With ``eta = inf`` this is the pure argmin, ties broken by lowest index.
    """
    c = np.asarray(cost, dtype=float)
    if reg.unregularized:
        out = np.zeros_like(c)
        out[np.arange(c.shape[0]), np.argmin(c, axis=1)] = 1.0
        return out
    eta = reg.eta
    k = reg.kind
    if k is RegKind.REVERSE_KL:
        return _softmax(np.log(reg.reference) - eta * c)
    if k is RegKind.NEG_ENTROPY:
        return _softmax(-eta * c)
    if k is RegKind.CHI_SQUARED:
        return _chi_argmin(-0.5 * eta * c, reg.reference)
    if k is RegKind.MIXED:
        return _mixed_argmin(1.0 - eta * c, reg.reference)
    return _tsallis_argmin(c, eta, reg.q)


def _softmax(logits):
    return np.exp(logits - logsumexp(logits, axis=1, keepdims=True))


def _chi_argmin(s, ref):
    """Solve pi_a = ref_a * max(0, s_a - tau) with sum_a pi_a = 1, exactly.

    The sum is piecewise linear and decreasing in tau, so the active set is a
    prefix of the actions sorted by ``s`` (reference-free actions never enter).
    """
    s = np.where(ref > 0, s, -np.inf)
    order = np.argsort(-s, axis=1, kind="stable")
    ss = np.take_along_axis(s, order, axis=1)
    rr = np.take_along_axis(ref, order, axis=1)
    with np.errstate(invalid="ignore"):
        cum_rs = np.cumsum(np.where(rr > 0, rr * ss, 0.0), axis=1)
        cum_r = np.cumsum(rr, axis=1)
        tau = (cum_rs - 1.0) / cum_r
        valid = (ss > tau) & (rr > 0)
    # the largest valid prefix determines tau
    kstar = valid.shape[1] - 1 - np.argmax(valid[:, ::-1], axis=1)
    t = tau[np.arange(s.shape[0]), kstar]
    pi = ref * np.maximum(s - t[:, None], 0.0)
    return pi / pi.sum(axis=1, keepdims=True)


def _mixed_ratio(y):
    # r solving log r + 2 r = y
    return 0.5 * np.real(wrightomega(y + np.log(2.0)))


def _mixed_argmin(b, ref, tol=1e-15, max_iter=100):
    """Find the shift t with sum_a ref_a r(b_a + t) = 1, r as in :func:`_mixed_ratio`."""
    # r(2) = 1, so these shifts bracket the root
    lo = 2.0 - b.max(axis=1)
    hi = 2.0 - b.min(axis=1)
    t = 0.5 * (lo + hi)
    for _ in range(max_iter):
        r = _mixed_ratio(b + t[:, None])
        f = (ref * r).sum(axis=1) - 1.0
        lo = np.where(f < 0, t, lo)
        hi = np.where(f > 0, t, hi)
        if np.all(np.abs(f) <= tol):
            break
        fp = (ref * r / (1.0 + 2.0 * r)).sum(axis=1)
        step = t - f / fp
        inside = (step > lo) & (step < hi)
        t = np.where(inside, step, 0.5 * (lo + hi))
    pi = ref * _mixed_ratio(b + t[:, None])
    return pi / pi.sum(axis=1, keepdims=True)


def _tsallis_argmin(c, eta, q, n_bisect=200):
    K = c.shape[1]
    cmin = c.min(axis=1)

    def mass(nu):
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            if q < 1:
                base = (1.0 - q) * eta * (c + nu[:, None]) / q
                return np.where(base > 0, base ** (1.0 / (q - 1.0)), np.inf)
            base = np.maximum((q - 1.0) * eta * (-c - nu[:, None]) / q, 0.0)
            return base ** (1.0 / (q - 1.0))

    if q < 1:
        lo, hi = -cmin, q * K ** (1.0 - q) / ((1.0 - q) * eta) - cmin
    else:
        lo, hi = -cmin - q / ((q - 1.0) * eta), -cmin
    # mass is decreasing in nu; keep sum(lo) >= 1 >= sum(hi)
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        big = mass(mid).sum(axis=1) >= 1.0
        lo = np.where(big, mid, lo)
        hi = np.where(big, hi, mid)
    pi = mass(hi)
    s = pi.sum(axis=1, keepdims=True)
    bad = ~np.isfinite(s[:, 0]) | (s[:, 0] <= 0)
    if np.any(bad):
        pi[bad] = mass(lo)[bad]
        s = pi.sum(axis=1, keepdims=True)
    return pi / s
