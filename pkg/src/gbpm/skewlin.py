"""Skew-symmetric matrix algebra.

Construction, projection, column-major vectorization, nuclear norms and
singular-value soft-thresholding for d x d skew-symmetric parameters.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SKEW_ATOL = 1e-10
RANK_RTOL = 1e-8


class DimensionError(ValueError):
    """Raised when matrix or vector shapes are incompatible."""


def _square(M) -> np.ndarray:
    A = np.asarray(M, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {A.shape}")
    return A


@dataclass(frozen=True, eq=False)
class SkewMatrix:
    """A d x d real skew-symmetric matrix.

    Behaves like an ndarray in numpy expressions through ``__array__``.
    """

    entries: np.ndarray

    def __post_init__(self):
        A = _square(self.entries)
        if A.shape[0] < 2:
            raise DimensionError("skew matrices need dim >= 2")
        dev = np.max(np.abs(A + A.T)) if A.size else 0.0
        if dev > SKEW_ATOL * max(1.0, np.max(np.abs(A))):
            raise ValueError(f"matrix is not skew-symmetric (max |A + A^T| = {dev:.3g})")
        A = 0.5 * (A - A.T)
        A.setflags(write=False)
        object.__setattr__(self, "entries", A)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.entries
        return self.entries.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, SkewMatrix):
            return NotImplemented
        return np.array_equal(self.entries, other.entries)

    def __hash__(self):
        return hash(self.entries.tobytes())

    def __repr__(self):
        return f"SkewMatrix(dim={self.dim}, nuc={self.nuclear_norm():.4g})"

    def singular_values(self) -> np.ndarray:
        return np.linalg.svd(self.entries, compute_uv=False)

    def nuclear_norm(self) -> float:
        return float(self.singular_values().sum())

    def rank(self, rtol: float = RANK_RTOL) -> int:
        return numerical_rank(self.entries, rtol)

    @classmethod
    def zeros(cls, d: int) -> "SkewMatrix":
        return cls(np.zeros((d, d)))


@dataclass(frozen=True)
class ModelSpec:
    """Parameter class: dimension d, rank bound 2r and nuclear budget S."""

    dim: int
    rank_bound: int
    nuc_bound: float

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.rank_bound < 2 or self.rank_bound % 2:
            raise ValueError("rank_bound must be a positive even integer")
        if self.rank_bound > self.dim:
            raise ValueError("rank_bound cannot exceed dim")
        if not self.nuc_bound > 0:
            raise ValueError("nuc_bound must be positive")


def skew_project(M) -> SkewMatrix:
    """Orthogonal projection (M - M^T)/2 onto the skew subspace."""
    A = _square(M)
    return SkewMatrix(0.5 * (A - A.T))


def random_low_rank_skew(rng: np.random.Generator, spec: ModelSpec) -> SkewMatrix:
    """Draw sum_k s_k (u_k v_k^T - v_k u_k^T) with nuclear norm exactly ``spec.nuc_bound``.

    The 2r vectors come from a QR factorization of a Gaussian matrix, and the
    weights are uniform on [0.5, 1.5] before rescaling.
    """
    r = spec.rank_bound // 2
    Q, _ = np.linalg.qr(rng.standard_normal((spec.dim, 2 * r)))
    sig = rng.uniform(0.5, 1.5, size=r)
    # each plane contributes two singular values equal to its weight
    sig *= spec.nuc_bound / (2.0 * sig.sum())
    U, V = Q[:, 0::2], Q[:, 1::2]
    A = (U * sig) @ V.T
    return skew_project(2.0 * A)


def svt(M, tau: float) -> np.ndarray:
    """Singular-value soft-thresholding: the prox of tau * nuclear norm."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    A = np.asarray(M, dtype=float)
    if A.ndim != 2:
        raise DimensionError("svt expects a matrix")
    if tau == 0:
        return A.copy()
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    keep = s > 0
    return (U[:, keep] * s[keep]) @ Vt[keep]


def vectorize(M) -> np.ndarray:
    """Column-major stacking of a matrix."""
    A = np.asarray(M, dtype=float)
    if A.ndim != 2:
        raise DimensionError("vectorize expects a matrix")
    return A.reshape(-1, order="F")


def matrixize(v) -> np.ndarray:
    """Inverse of :func:`vectorize` for square matrices."""
    v = np.asarray(v, dtype=float).ravel()
    d = int(round(np.sqrt(v.size)))
    if d * d != v.size:
        raise DimensionError(f"length {v.size} is not a perfect square")
    return v.reshape((d, d), order="F")


def nuclear_norm(M) -> float:
    return float(np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False).sum())


def operator_norm(M) -> float:
    A = np.asarray(M, dtype=float)
    return float(np.linalg.norm(A, 2)) if A.size else 0.0


def numerical_rank(M, rtol: float = RANK_RTOL, atol: float = 0.0) -> int:
    """Count singular values above ``max(rtol * s_max, atol)``."""
    s = np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > max(rtol * s[0], atol)))
