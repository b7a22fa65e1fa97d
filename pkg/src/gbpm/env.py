"""Preference environment: links, feature worlds and Bernoulli duels.

A world is finite: ``n_ctx`` contexts, ``n_act`` actions shared by every
context, and a feature tensor of shape ``(n_ctx, n_act, d)``. Policies are
plain arrays of shape ``(n_ctx, n_act)`` whose rows are distributions.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
from scipy.special import expit

from .skewlin import DimensionError, ModelSpec, SkewMatrix, random_low_rank_skew

PROB_ATOL = 1e-12
NORM_ATOL = 1e-12


class LinkKind(str, Enum):
    LOGISTIC = "logistic"
    LINEAR = "linear"


@dataclass(frozen=True)
class LinkSpec:
    """Link function with its derivative bounds.

    ``kappa`` is the smallest derivative over the range |z| <= S the link was
    built for, ``l_mu`` bounds both the first and second derivatives.
    """

    kind: LinkKind
    kappa: float
    l_mu: float
    self_concordance: float

    @classmethod
    def logistic(cls, S: float = 1.0) -> "LinkSpec":
        s = expit(S)
        return cls(LinkKind.LOGISTIC, float(s * (1 - s)), 0.25, 1.0)

    @classmethod
    def linear(cls) -> "LinkSpec":
        return cls(LinkKind.LINEAR, 1.0, 1.0, 0.0)

    @classmethod
    def make(cls, kind: str | LinkKind, S: float = 1.0) -> "LinkSpec":
        kind = LinkKind(kind)
        return cls.logistic(S) if kind is LinkKind.LOGISTIC else cls.linear()


def link_eval(link: LinkSpec, z):
    """mu(z). The linear link is returned unclamped; see :func:`clamp_prob`."""
    z = np.asarray(z, dtype=float)
    if link.kind is LinkKind.LOGISTIC:
        return expit(z)
    return 0.5 + z


def link_deriv(link: LinkSpec, z):
    z = np.asarray(z, dtype=float)
    if link.kind is LinkKind.LOGISTIC:
        s = expit(z)
        return s * (1.0 - s)
    return np.ones_like(z)


def link_deriv2(link: LinkSpec, z):
    z = np.asarray(z, dtype=float)
    if link.kind is LinkKind.LOGISTIC:
        s = expit(z)
        return s * (1.0 - s) * (1.0 - 2.0 * s)
    return np.zeros_like(z)


def log_partition(link: LinkSpec, z):
    """m(z) with m' = mu; a quasi-likelihood for the linear link."""
    z = np.asarray(z, dtype=float)
    if link.kind is LinkKind.LOGISTIC:
        # log(1 + e^z) without overflow
        return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    return 0.5 * z * z + 0.5 * z


def clamp_prob(p):
    return np.clip(p, 0.0, 1.0)


def preference_prob(theta, phi1, phi2, link: LinkSpec) -> float:
    """P(a1 beats a2) = mu(phi1^T theta phi2), clamped to [0, 1]."""
    T = np.asarray(theta, dtype=float)
    phi1 = np.asarray(phi1, dtype=float)
    phi2 = np.asarray(phi2, dtype=float)
    if phi1.shape != (T.shape[0],) or phi2.shape != (T.shape[1],):
        raise DimensionError("feature dimension does not match theta")
    return float(clamp_prob(link_eval(link, phi1 @ T @ phi2)))


def validate_policy(pi, shape=None, atol: float = PROB_ATOL) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.ndim != 2:
        raise DimensionError("a policy is a (contexts, actions) array")
    if shape is not None and pi.shape != tuple(shape):
        raise DimensionError(f"policy shape {pi.shape} does not match world {tuple(shape)}")
    if np.any(pi < -atol) or np.any(np.abs(pi.sum(axis=1) - 1.0) > atol):
        raise ValueError("policy rows must be nonnegative and sum to 1")
    return pi


@dataclass(frozen=True, eq=False)
class PreferenceWorld:
    """Finite contextual duel world.

    Attributes
    ----------
    features : (n_ctx, n_act, d) array, every row of norm <= 1
    context_dist : (n_ctx,) array
    explore_policy : (n_ctx, n_act) array
    link : LinkSpec
    theta_star : SkewMatrix
    """

    features: np.ndarray
    context_dist: np.ndarray
    explore_policy: np.ndarray
    link: LinkSpec
    theta_star: SkewMatrix
    n_clamped: int = field(init=False)

    def __post_init__(self):
        F = np.asarray(self.features, dtype=float)
        if F.ndim != 3:
            raise DimensionError("features must have shape (contexts, actions, d)")
        if np.any(np.linalg.norm(F, axis=2) > 1 + NORM_ATOL):
            raise ValueError("feature norms must be <= 1")
        d0 = np.asarray(self.context_dist, dtype=float)
        if d0.shape != (F.shape[0],) or np.any(d0 < 0) or abs(d0.sum() - 1) > PROB_ATOL:
            raise ValueError("context_dist must be a distribution over contexts")
        rho = validate_policy(self.explore_policy, F.shape[:2])
        theta = self.theta_star
        if not isinstance(theta, SkewMatrix):
            theta = SkewMatrix(np.asarray(theta, dtype=float))
        if theta.dim != F.shape[2]:
            raise DimensionError("theta_star dimension does not match features")
        for name, val in (("features", F), ("context_dist", d0), ("explore_policy", rho)):
            val = val.copy()
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "theta_star", theta)
        raw = link_eval(self.link, np.einsum("xad,de,xbe->xab", F, theta.entries, F))
        n_bad = int(np.sum((raw < 0) | (raw > 1)))
        object.__setattr__(self, "n_clamped", n_bad)
        if n_bad:
            warnings.warn(f"{n_bad} preference probabilities clamped to [0, 1]", RuntimeWarning)

    @property
    def n_ctx(self) -> int:
        return self.features.shape[0]

    @property
    def n_act(self) -> int:
        return self.features.shape[1]

    @property
    def dim(self) -> int:
        return self.features.shape[2]

    @property
    def policy_shape(self) -> tuple[int, int]:
        return self.features.shape[:2]

    def with_theta(self, theta) -> "PreferenceWorld":
        return PreferenceWorld(self.features, self.context_dist, self.explore_policy,
                               self.link, theta)

    @cached_property
    def pref_table(self) -> np.ndarray:
        """P[x, a, b] under theta_star, clamped for sampling."""
        return preference_table(self.features, self.theta_star, self.link)

    def uniform_policy(self) -> np.ndarray:
        return np.full(self.policy_shape, 1.0 / self.n_act)


def preference_table(features, theta, link: LinkSpec, clamp: bool = True) -> np.ndarray:
    F = np.asarray(features, dtype=float)
    Z = np.einsum("xad,de,xbe->xab", F, np.asarray(theta, dtype=float), F)
    P = link_eval(link, Z)
    return clamp_prob(P) if clamp else P


def sample_duel(world: PreferenceWorld, x: int, a1: int, a2: int, rng: np.random.Generator) -> int:
    """Bernoulli outcome of a duel; 1 means ``a1`` is preferred."""
    if not (0 <= x < world.n_ctx and 0 <= a1 < world.n_act and 0 <= a2 < world.n_act):
        raise IndexError(f"invalid duel index (x={x}, a1={a1}, a2={a2})")
    return int(rng.random() < world.pref_table[x, a1, a2])


def design_matrix(world: PreferenceWorld, policy=None) -> np.ndarray:
    """E_{x ~ d0} E_{a ~ policy} phi phi^T (policy defaults to the explore policy)."""
    pol = world.explore_policy if policy is None else np.asarray(policy)
    w = world.context_dist[:, None] * pol
    return np.einsum("xa,xad,xae->de", w, world.features, world.features)


def min_eig_design(world: PreferenceWorld) -> float:
    """Smallest eigenvalue of the exploration design matrix (C_min).

    A zero value means the exploration data cannot identify theta; this is
    reported with a warning rather than an error so diagnostics still run.
    """
    c = max(float(np.linalg.eigvalsh(design_matrix(world))[0]), 0.0)
    if c <= 1e-12:
        warnings.warn("exploration design is singular (C_min = 0)", RuntimeWarning)
    return c


def instance_kappa(world: PreferenceWorld) -> float:
    """Smallest link derivative over the bilinear values the instance can produce."""
    Z = np.einsum("xad,de,xbe->xab", world.features, world.theta_star.entries, world.features)
    return float(np.min(link_deriv(world.link, Z)))


# ---------------------------------------------------------------- generation

FEATURE_MODES = ("simplex-corners", "random-unit-sphere", "hypercube-scaled")


def make_features(rng: np.random.Generator, mode: str, n_ctx: int, n_act: int, d: int) -> np.ndarray:
    """Feature tensor for one of the supported generation modes.

    ``simplex-corners`` cycles through e_1..e_d, -e_1..-e_d (the same in every
    context), ``random-unit-sphere`` draws normalized Gaussians and
    ``hypercube-scaled`` draws random sign vectors scaled by 1/sqrt(d).
    """
    if mode == "simplex-corners":
        corners = np.vstack([np.eye(d), -np.eye(d)])
        F = corners[np.arange(n_act) % (2 * d)]
        return np.broadcast_to(F, (n_ctx, n_act, d)).copy()
    if mode == "random-unit-sphere":
        G = rng.standard_normal((n_ctx, n_act, d))
        return G / np.linalg.norm(G, axis=2, keepdims=True)
    if mode == "hypercube-scaled":
        return rng.choice([-1.0, 1.0], size=(n_ctx, n_act, d)) / np.sqrt(d)
    raise ValueError(f"unknown feature mode {mode!r}; expected one of {FEATURE_MODES}")


def make_world(
    rng: np.random.Generator,
    *,
    dim: int,
    rank_bound: int = 2,
    nuc_bound: float = 1.0,
    link: str = "logistic",
    n_ctx: int = 1,
    n_act: int = 6,
    feature_mode: str = "simplex-corners",
    theta_star=None,
) -> PreferenceWorld:
    """Random world with uniform context and exploration distributions."""
    if LinkKind(link) is LinkKind.LINEAR and nuc_bound > 0.5:
        warnings.warn("linear link with S > 1/2 may produce clamped probabilities", RuntimeWarning)
    F = make_features(rng, feature_mode, n_ctx, n_act, dim)
    if theta_star is None:
        theta_star = random_low_rank_skew(rng, ModelSpec(dim, rank_bound, nuc_bound))
    return PreferenceWorld(
        features=F,
        context_dist=np.full(n_ctx, 1.0 / n_ctx),
        explore_policy=np.full((n_ctx, n_act), 1.0 / n_act),
        link=LinkSpec.make(link, nuc_bound),
        theta_star=theta_star,
    )
