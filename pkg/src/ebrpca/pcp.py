"""Principal component pursuit by the inexact augmented Lagrangian method.

Solves ``min |X|_* + w |S|_1  s.t.  Y = X + S`` by alternating a shrinkage
step on S, a singular-value-thresholding step on X and a multiplier ascent,
with a geometrically growing penalty ``mu``.

The classic schedule grows ``mu`` every iteration and stops on the primal
residual alone.  On small problems that freezes the iterate before it is
stationary (objective a few percent above the optimum), so by default ``mu``
only grows while the primal residual exceeds ``balance_ratio`` times the dual residual
``mu |X_k - X_{k-1}|_F / |Y|_F``, and both must fall below tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import Decomposition, RpcaProblem, SvdFailure


@dataclass(frozen=True)
class PcpOptions:
    sparsity_weight: Optional[float] = None  # default 1/sqrt(max(m, n))
    mu_init: Optional[float] = None          # default 1.25 / |Y|_2
    mu_growth: float = 1.5
    mu_max_factor: float = 1e7
    primal_tolerance: float = 1e-7
    max_iterations: int = 1000
    stationarity_tolerance: Optional[float] = 1e-6  # None: classic primal-only stop
    balance_ratio: float = 1.0

    def __post_init__(self):
        for name in ("sparsity_weight", "mu_init"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")
        if not self.mu_growth > 1:
            raise ValueError("mu_growth must exceed 1")
        if not (self.primal_tolerance > 0 and self.max_iterations >= 1 and self.mu_max_factor > 0):
            raise ValueError("tolerance, max_iterations and mu_max_factor must be positive")
        if self.stationarity_tolerance is not None and not self.stationarity_tolerance > 0:
            raise ValueError("stationarity_tolerance must be positive or None")
        if not self.balance_ratio >= 1:
            raise ValueError("balance_ratio must be at least 1")


def soft_threshold(M, tau: float) -> np.ndarray:
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    M = np.asarray(M, dtype=float)
    return np.sign(M) * np.maximum(np.abs(M) - tau, 0.0)


def svt(M, tau: float) -> np.ndarray:
    """Singular value thresholding, the proximal map of ``tau * |.|_*``."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    M = np.asarray(M, dtype=float)
    try:
        U, s, Vt = np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SvdFailure(str(exc)) from exc
    s = np.maximum(s - tau, 0.0)
    k = int(np.count_nonzero(s))
    return (U[:, :k] * s[:k]) @ Vt[:k]


def pcp_objective(X, S, weight: float) -> float:
    return float(np.linalg.svd(X, compute_uv=False).sum() + weight * np.abs(S).sum())


def solve_pcp(problem: RpcaProblem, options: Optional[PcpOptions] = None) -> Decomposition:
    """Inexact ALM for the equality-constrained PCP program.

    On hitting ``max_iterations`` the iterate closest to the stopping rule
    (smallest residual relative to its tolerance) is returned with
    ``converged=False``.  ``cost_trace`` records the PCP objective and
    ``residual_trace`` the relative residual ``|Y - X - S|_F / |Y|_F`` after
    every iteration.
    """
    options = options or PcpOptions()
    D = problem.Y
    m, n = D.shape
    weight = options.sparsity_weight or 1.0 / np.sqrt(max(m, n))
    d_norm = np.linalg.norm(D, "fro")
    if d_norm == 0.0:
        return Decomposition(np.zeros_like(D), np.zeros_like(D), 0, [0.0], True, [0.0])

    spectral = np.linalg.norm(D, 2)
    J = D / max(spectral, np.abs(D).max() / weight)
    mu = options.mu_init or 1.25 / spectral
    mu_max = mu * options.mu_max_factor
    dual_tol = options.stationarity_tolerance
    X = np.zeros_like(D)
    S = np.zeros_like(D)
    objective, residuals = [], []
    best = (np.inf, X, S)
    converged = False
    it = 0
    for it in range(1, options.max_iterations + 1):
        X_prev = X
        S = soft_threshold(D - X + J / mu, weight / mu)
        X = svt(D - S + J / mu, 1.0 / mu)
        Z = D - X - S
        J = J + mu * Z
        res = np.linalg.norm(Z, "fro") / d_norm
        residuals.append(res)
        objective.append(pcp_objective(X, S, weight))
        gap = res / options.primal_tolerance
        if dual_tol is None:
            mu = min(mu * options.mu_growth, mu_max)
        else:
            dual = mu * np.linalg.norm(X - X_prev, "fro") / d_norm
            gap = max(gap, dual / dual_tol)
            if res > options.balance_ratio * dual:
                mu = min(mu * options.mu_growth, mu_max)
        if gap < best[0]:
            best = (gap, X, S)
        if gap <= 1.0:
            converged = True
            break
    if not converged:
        _, X, S = best
    return Decomposition(X, S, it, objective, converged, residuals)
