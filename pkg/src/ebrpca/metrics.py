"""Recovery scores: normalized MSE, principal angles, support precision/recall."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import ShapeMismatch, ZeroMatrix, ZeroReference

DEFAULT_RANK_TOL = 1e-6


@dataclass(frozen=True)
class AngleReport:
    largest: float      # degrees
    mean: float         # degrees
    rank_hat: int
    rank_true: int

    @property
    def rank_deficiency(self) -> int:
        return self.rank_hat - self.rank_true


@dataclass(frozen=True)
class TrialScore:
    mse_normalized: float
    angle_degrees: float
    support_precision: float
    support_recall: float
    relative_mse: float = float("nan")
    relative_angle: float = float("nan")
    angle_mean: float = float("nan")
    rank_hat: int = -1


def _same_shape(A, B):
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise ShapeMismatch(f"shape {A.shape} != {B.shape}")
    return A, B


def normalized_mse(X_hat, X_true) -> float:
    X_hat, X_true = _same_shape(X_hat, X_true)
    ref = float(np.sum(X_true ** 2))
    if ref == 0.0:
        raise ZeroReference("reference matrix is zero")
    return float(np.sum((X_true - X_hat) ** 2)) / ref


def column_basis(A, rank_tol: float = DEFAULT_RANK_TOL, rank: Optional[int] = None) -> np.ndarray:
    """Orthonormal basis of the column space of ``A``.

    Keeps left singular vectors with ``sigma > rank_tol * sigma_1``, or exactly
    the leading ``rank`` of them when ``rank`` is given.
    """
    U, s, _ = np.linalg.svd(np.asarray(A, dtype=float), full_matrices=False)
    if s.size == 0 or s[0] == 0.0 or not np.isfinite(s[0]):
        raise ZeroMatrix("matrix is numerically zero")
    if rank is None:
        rank = int(np.sum(s > rank_tol * s[0]))
    return U[:, :max(1, min(rank, s.size))]


def principal_angles(Q1: np.ndarray, Q2: np.ndarray) -> np.ndarray:
    """Principal angles (radians, ascending) between orthonormal bases."""
    if Q1.shape[1] < Q2.shape[1]:
        Q1, Q2 = Q2, Q1
    C = Q1.T @ Q2
    cos = np.clip(np.linalg.svd(C, compute_uv=False), 0.0, 1.0)
    # arccos loses small angles; sines of the residual resolve them
    sin = np.clip(np.linalg.svd(Q2 - Q1 @ C, compute_uv=False)[::-1], 0.0, 1.0)
    angles = np.where(cos ** 2 > 0.5, np.arcsin(sin), np.arccos(cos))
    return np.sort(angles)


def subspace_angles(X_hat, X_true, rank_tol: float = DEFAULT_RANK_TOL,
                    rank: Optional[int] = None) -> AngleReport:
    X_hat, X_true = _same_shape(X_hat, X_true)
    Qh = column_basis(X_hat, rank_tol, rank)
    Qt = column_basis(X_true, rank_tol, rank)
    theta = np.degrees(principal_angles(Qh, Qt))
    return AngleReport(float(theta[-1]), float(theta.mean()), Qh.shape[1], Qt.shape[1])


def subspace_angle(X_hat, X_true, rank_tol: float = DEFAULT_RANK_TOL,
                   rank: Optional[int] = None) -> float:
    """Largest principal angle, in degrees, between the column spaces.

    Ranks are detected independently for the two arguments unless ``rank``
    is given; with different ranks only ``min(r_hat, r)`` angles exist.
    """
    return subspace_angles(X_hat, X_true, rank_tol, rank).largest


def photometric_scores(X_hat, X_true, Y, rank: Optional[int] = None):
    """``(|X - X_hat|^2 / |X - Y|^2, angle(X_hat, X) / angle(Y, X))``.

    Angles are taken between leading-``rank`` subspaces, ``rank`` defaulting
    to the numerical rank of ``X_true``: ``Y`` is generically full rank and
    its full column space would contain any subspace.
    """
    X_hat, X_true = _same_shape(X_hat, X_true)
    _, Y = _same_shape(X_true, Y)
    ref = float(np.sum((X_true - Y) ** 2))
    if ref == 0.0:
        raise ZeroReference("observation equals the reference")
    rel_mse = float(np.sum((X_true - X_hat) ** 2)) / ref
    if rank is None:
        rank = column_basis(X_true).shape[1]
    base = subspace_angle(Y, X_true, rank=rank)
    est = subspace_angle(X_hat, X_true, rank=rank)
    if base == 0.0:
        rel_angle = 0.0 if est == 0.0 else float("inf")
    else:
        rel_angle = est / base
    return rel_mse, rel_angle


def support_scores(S_hat, S_true, zero_tol: Optional[float] = None):
    """Precision and recall of the nonzero pattern of ``S_hat``.

    An empty estimated support has precision 1; an empty true support has recall 1.
    """
    S_hat, S_true = _same_shape(S_hat, S_true)
    if zero_tol is None:
        zero_tol = 1e-6 * float(np.max(np.abs(S_true), initial=0.0))
    est = np.abs(S_hat) > zero_tol
    true = np.abs(S_true) > zero_tol
    hit = int(np.sum(est & true))
    n_est, n_true = int(est.sum()), int(true.sum())
    precision = 1.0 if n_est == 0 else hit / n_est
    recall = 1.0 if n_true == 0 else hit / n_true
    return precision, recall
