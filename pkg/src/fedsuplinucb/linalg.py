"""Incremental weighted ridge statistics.

A ``RidgeStats`` holds the gram matrix ``A = lambda*I + sum w x x^T``, the
moment vector ``b = sum w r x`` and cached ``A^{-1}`` / ``ln det A``.  Rank-1
updates keep the cache current in O(d^2); merges refactorize from scratch.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

__all__ = [
    "InvalidDimensionError",
    "NumericInputError",
    "RidgeStats",
    "DeltaStats",
    "ridge_init",
    "delta_init",
    "ridge_update",
    "merge",
    "weighted_norm",
    "solve_theta",
    "log_det_ratio",
    "direct_log_det",
]

NORM_SLACK = 1e-9


class InvalidDimensionError(ValueError):
    pass


class NumericInputError(ValueError):
    pass


def _check_vector(x, dim: int, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (dim,):
        raise InvalidDimensionError(f"{name} has shape {x.shape}, expected ({dim},)")
    if not np.all(np.isfinite(x)):
        raise NumericInputError(f"{name} has non-finite entries")
    return x


def direct_log_det(gram: np.ndarray) -> float:
    """ln det of a symmetric positive definite matrix via Cholesky."""
    chol = np.linalg.cholesky(gram)
    return float(2.0 * np.sum(np.log(np.diag(chol))))


def _factorize(gram: np.ndarray) -> tuple[np.ndarray, float]:
    c, low = sla.cho_factor(gram, lower=True, check_finite=False)
    inv = sla.cho_solve((c, low), np.eye(gram.shape[0]), check_finite=False)
    inv = 0.5 * (inv + inv.T)
    log_det = float(2.0 * np.sum(np.log(np.diag(c))))
    return inv, log_det


@dataclass
class DeltaStats:
    """Unsent local information ``(dA, db)`` accumulated since the last sync."""

    dim: int
    dgram: np.ndarray = None
    dmoment: np.ndarray = None
    num_updates: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidDimensionError(f"dim must be >= 1, got {self.dim}")
        if self.dgram is None:
            self.dgram = np.zeros((self.dim, self.dim))
        if self.dmoment is None:
            self.dmoment = np.zeros(self.dim)

    def add(self, x, r: float, weight: float = 1.0) -> None:
        x = _check_vector(x, self.dim)
        if not np.isfinite(r):
            raise NumericInputError("reward is not finite")
        if not weight > 0 or not np.isfinite(weight):
            raise NumericInputError(f"weight must be a positive finite number, got {weight}")
        self.dgram += weight * np.outer(x, x)
        self.dmoment += (weight * r) * x
        self.num_updates += 1

    def reset(self) -> None:
        self.dgram[:] = 0.0
        self.dmoment[:] = 0.0
        self.num_updates = 0

    def is_zero(self) -> bool:
        return self.num_updates == 0 or (not self.dgram.any() and not self.dmoment.any())

    def copy(self) -> "DeltaStats":
        return DeltaStats(self.dim, self.dgram.copy(), self.dmoment.copy(), self.num_updates)


@dataclass
class RidgeStats:
    """Gram matrix, moment vector and cached inverse / log-determinant."""

    dim: int
    gram: np.ndarray
    moment: np.ndarray
    gram_inv: np.ndarray
    log_det: float
    # rank-1 updates applied since the last full factorization
    stale_updates: int = field(default=0, compare=False)

    @property
    def refactor_every(self) -> int:
        return 10 * self.dim

    def copy(self) -> "RidgeStats":
        return RidgeStats(
            self.dim,
            self.gram.copy(),
            self.moment.copy(),
            self.gram_inv.copy(),
            self.log_det,
            self.stale_updates,
        )

    def refactorize(self) -> None:
        self.gram = 0.5 * (self.gram + self.gram.T)
        self.gram_inv, self.log_det = _factorize(self.gram)
        self.stale_updates = 0

    def update(self, x, r: float, weight: float = 1.0) -> None:
        """In-place ``A += w x x^T``, ``b += w r x``."""
        x = _check_vector(x, self.dim)
        if not np.isfinite(r):
            raise NumericInputError("reward is not finite")
        if not weight > 0 or not np.isfinite(weight):
            raise NumericInputError(f"weight must be a positive finite number, got {weight}")
        if float(x @ x) > (1.0 + NORM_SLACK) ** 2:
            raise NumericInputError(f"context norm {np.linalg.norm(x)} exceeds 1")
        self.moment += (weight * r) * x
        if not x.any():
            self.stale_updates += 1
            return
        ax = self.gram_inv @ x
        denom = 1.0 + weight * float(x @ ax)
        self.gram += weight * np.outer(x, x)
        self.gram = 0.5 * (self.gram + self.gram.T)
        self.gram_inv -= (weight / denom) * np.outer(ax, ax)
        self.gram_inv = 0.5 * (self.gram_inv + self.gram_inv.T)
        self.log_det += float(np.log(denom))
        self.stale_updates += 1
        if self.stale_updates > self.refactor_every:
            self.refactorize()

    def absorb(self, delta: DeltaStats) -> None:
        """In-place merge of a delta followed by direct refactorization."""
        if delta.dim != self.dim:
            raise InvalidDimensionError(f"dimension mismatch: {self.dim} vs {delta.dim}")
        self.gram = self.gram + delta.dgram
        self.moment = self.moment + delta.dmoment
        self.refactorize()

    def assign(self, other: "RidgeStats") -> None:
        """Overwrite this object's contents with a copy of ``other``."""
        if other.dim != self.dim:
            raise InvalidDimensionError(f"dimension mismatch: {self.dim} vs {other.dim}")
        self.gram = other.gram.copy()
        self.moment = other.moment.copy()
        self.gram_inv = other.gram_inv.copy()
        self.log_det = other.log_det
        self.stale_updates = other.stale_updates


def ridge_init(dim: int, ridge_lambda: float = 1.0) -> RidgeStats:
    if not isinstance(dim, (int, np.integer)) or dim < 1:
        raise InvalidDimensionError(f"dim must be a positive integer, got {dim!r}")
    if not ridge_lambda > 0:
        raise NumericInputError(f"ridge_lambda must be positive, got {ridge_lambda}")
    dim = int(dim)
    return RidgeStats(
        dim=dim,
        gram=ridge_lambda * np.eye(dim),
        moment=np.zeros(dim),
        gram_inv=np.eye(dim) / ridge_lambda,
        log_det=dim * float(np.log(ridge_lambda)),
    )


def delta_init(dim: int) -> DeltaStats:
    return DeltaStats(int(dim))


def ridge_update(stats: RidgeStats, x, r: float, weight: float = 1.0) -> RidgeStats:
    """Return a copy of ``stats`` with one weighted observation added."""
    out = stats.copy()
    out.update(x, r, weight)
    return out


def merge(stats: RidgeStats, delta: DeltaStats) -> RidgeStats:
    out = stats.copy()
    out.absorb(delta)
    return out


def weighted_norm(stats: RidgeStats, x) -> float | np.ndarray:
    """``sqrt(x^T A^{-1} x)``; accepts a single vector or a (K, d) stack."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != stats.dim:
        raise InvalidDimensionError(f"x has trailing dim {x.shape[-1]}, expected {stats.dim}")
    if not np.all(np.isfinite(x)):
        raise NumericInputError("x has non-finite entries")
    if x.ndim == 1:
        return float(np.sqrt(max(float(x @ stats.gram_inv @ x), 0.0)))
    q = np.einsum("ij,jk,ik->i", x, stats.gram_inv, x)
    return np.sqrt(np.maximum(q, 0.0))


def solve_theta(stats: RidgeStats) -> np.ndarray:
    return stats.gram_inv @ stats.moment


def log_det_ratio(stats: RidgeStats, delta: DeltaStats) -> float:
    """``ln det(A + dA) - ln det(A)``, computed by direct factorization."""
    if delta.dim != stats.dim:
        raise InvalidDimensionError(f"dimension mismatch: {stats.dim} vs {delta.dim}")
    if delta.is_zero():
        return 0.0
    ratio = direct_log_det(stats.gram + delta.dgram) - direct_log_det(stats.gram)
    return max(ratio, 0.0)
