"""Empirical Bayesian variational RPCA.

The solver minimizes the marginal-likelihood cost

    L(Psi, Gamma) = sum_j  y_j' Sigma_j^{-1} y_j + log|Sigma_j|,
    Sigma_j = Psi + diag(Gamma[:, j]) + lam * I,

by majorization-minimization.  Each iteration refits the hyperparameters
``(Psi, Gamma)`` from the variational parameters (posterior means plus the
log-det bound matrices U_j, V_j) and then recomputes those parameters at the
new hyperparameters.  Setting U_j = V_j = 0 gives the MAP special case;
pinning masked Gamma entries at +inf gives the matrix-completion limit.

All per-column quantities come from one Cholesky factorization of
``Sigma_j`` per column, processed in batched chunks.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import (
    Decomposition,
    MaskAllOnes,
    Mode,
    NumericalDegeneracy,
    RpcaError,
    RpcaProblem,
    ShapeMismatch,
    SolverOptions,
    VariationalState,
    validate,
)

log = logging.getLogger(__name__)

KAPPA_FLOOR = 1e-12
DESCENT_SLACK = 1e-8
# budget for one (chunk, m, m) work array, in doubles
_CHUNK_DOUBLES = 1 << 21


@dataclass(frozen=True)
class EbIterationReport:
    iteration: int
    cost_before: float
    cost_after: float
    max_rel_change_x: float
    max_rel_change_s: float

    @property
    def descended(self) -> bool:
        return self.cost_after <= self.cost_before + DESCENT_SLACK * (1.0 + abs(self.cost_before))


@dataclass
class _ColumnPass:
    X: np.ndarray
    S: np.ndarray
    V: np.ndarray
    U_sum: np.ndarray
    quad: float
    logdet: float
    U: Optional[np.ndarray] = None

    @property
    def cost(self) -> float:
        return self.quad + self.logdet


def _observed(problem: RpcaProblem) -> Optional[np.ndarray]:
    if problem.mask is None or not problem.mask.any():
        return None
    return ~problem.mask


def _chunk_pass(Psi, G, Yc, lam, obs, with_uv, keep_u):
    m, b = Yc.shape
    g = G.T.copy()
    y = Yc.T.copy()
    if obs is not None:
        o = obs.T
        g[~o] = 0.0
        y[~o] = 0.0
    Sigma = np.repeat(Psi[None, :, :], b, axis=0)
    diag = np.arange(m)
    Sigma[:, diag, diag] += g + lam
    if obs is not None:
        # masked rows/cols decouple as an identity block: exact gamma -> inf limit
        both = o[:, :, None] & o[:, None, :]
        Sigma = np.where(both, Sigma, np.eye(m))
    try:
        L = np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError as exc:
        raise NumericalDegeneracy("column covariance is not positive definite") from exc
    Linv = np.linalg.inv(L)
    if obs is not None:
        Linv[~o] = 0.0

    z = np.matmul(Linv, y[:, :, None])
    w = np.matmul(np.swapaxes(Linv, 1, 2), z)[:, :, 0]
    quad = float(np.sum(z * z))
    logdet = 2.0 * float(np.sum(np.log(np.diagonal(L, axis1=1, axis2=2))))

    X = Psi @ w.T
    S = (g * w).T
    if obs is not None:
        S = np.where(obs, S, Yc - X)

    if not with_uv:
        return X, S, np.zeros((m, b)), None, quad, logdet, None

    diagK = np.sum(Linv * Linv, axis=1)
    V = g - g * g * diagK
    flat = Linv.reshape(-1, m)
    Ksum = flat.T @ flat
    LP = None
    if obs is not None or keep_u:
        LP = np.matmul(Linv, Psi)
    if obs is not None:
        # Schur-complement limit of gamma - gamma^2 [Sigma^-1]_ii as gamma -> inf
        limit = np.diag(Psi)[None, :] + lam - np.sum(LP * LP, axis=1)
        V = np.where(o, V, limit)
    U = None
    if keep_u:
        U = Psi[None, :, :] - np.matmul(np.swapaxes(LP, 1, 2), LP)
    return X, S, V.T, Ksum, quad, logdet, U


def _column_pass(Psi, Gamma, problem, mode, options=None, keep_u=False) -> _ColumnPass:
    options = options or SolverOptions(mode=mode)
    Y = problem.Y
    m, n = Y.shape
    obs = _observed(problem)
    with_uv = Mode(mode) != Mode.MAP
    chunk = max(1, _CHUNK_DOUBLES // (m * m))
    slices = [slice(a, min(a + chunk, n)) for a in range(0, n, chunk)]

    def run(sl):
        return _chunk_pass(
            Psi, Gamma[:, sl], Y[:, sl], problem.lam,
            None if obs is None else obs[:, sl], with_uv, keep_u,
        )

    if options.workers > 1 and len(slices) > 1:
        with ThreadPoolExecutor(max_workers=options.workers) as pool:
            futures = {pool.submit(run, sl): i for i, sl in enumerate(slices)}
            if options.deterministic:
                order = sorted(futures, key=futures.get)
            else:
                order = list(as_completed(futures))
            results = [(futures[f], f.result()) for f in order]
    else:
        results = [(i, run(sl)) for i, sl in enumerate(slices)]

    X = np.empty((m, n))
    S = np.empty((m, n))
    V = np.empty((m, n))
    Ksum = np.zeros((m, m))
    quad = logdet = 0.0
    Us = [None] * len(slices)
    for i, (Xc, Sc, Vc, Kc, qc, lc, Uc) in results:
        sl = slices[i]
        X[:, sl] = Xc
        S[:, sl] = Sc
        V[:, sl] = Vc
        if Kc is not None:
            Ksum += Kc
        quad += qc
        logdet += lc
        Us[i] = Uc
    if with_uv:
        U_sum = n * Psi - Psi @ Ksum @ Psi
    else:
        U_sum = np.zeros((m, m))
    U = np.concatenate(Us, axis=0) if keep_u and with_uv else None
    if keep_u and not with_uv:
        U = np.zeros((n, m, m))
    return _ColumnPass(X, S, V, U_sum, quad, logdet, U)


def state_at(Psi, Gamma, problem: RpcaProblem, mode=Mode.EMPIRICAL_BAYES,
             options: Optional[SolverOptions] = None, iteration: int = 0,
             kappa: float = float("nan")) -> VariationalState:
    """Build the full variational state that is optimal for ``(Psi, Gamma)``."""
    Psi = np.asarray(Psi, dtype=float)
    Gamma = np.array(Gamma, dtype=float)
    if problem.mask is not None:
        Gamma[problem.mask] = np.inf
    cp = _column_pass(Psi, Gamma, problem, mode, options)
    if Mode(mode) == Mode.MAP:
        cost = cp.quad + _map_log_terms(Psi, Gamma)
    else:
        cost = cp.cost
    return VariationalState(Psi, Gamma, cp.X, cp.S, cp.U_sum, cp.V, cost,
                            kappa=kappa, iteration=iteration)


def _map_log_terms(Psi, Gamma) -> float:
    # Floors keep pruned directions/entries finite: below them a value no
    # longer changes Sigma_j = Psi + Gamma_j + lam*I in floating point.
    n = Gamma.shape[1]
    eig = np.linalg.eigvalsh(Psi)
    eig_floor = max(Psi.shape[0] * np.finfo(float).eps * float(eig[-1]), np.finfo(float).tiny)
    g = Gamma[np.isfinite(Gamma)]
    return (n * float(np.sum(np.log(np.maximum(eig, eig_floor))))
            + float(np.sum(np.log(np.maximum(g, np.finfo(float).tiny)))))


def map_cost(Psi, Gamma, problem: RpcaProblem) -> float:
    """MAP objective with the posterior means minimized out:
    ``sum_j y_j' Sigma_j^{-1} y_j + n log|Psi| + sum_ij log gamma_ij``."""
    Psi = np.asarray(Psi, dtype=float)
    Gamma = np.array(Gamma, dtype=float)
    if problem.mask is not None:
        Gamma[problem.mask] = np.inf
    return _column_pass(Psi, Gamma, problem, Mode.MAP).quad + _map_log_terms(Psi, Gamma)


def _check_solvable(problem: RpcaProblem, mode: Mode) -> None:
    validate(problem)
    m, n = problem.shape
    if m > n:
        raise ShapeMismatch(f"solver needs n >= m, got {m}x{n}; transpose the problem first")
    if Mode(mode) == Mode.COMPLETION and problem.mask is None:
        raise RpcaError("completion mode requires a known-corruption mask")
    if problem.mask is not None and problem.mask.all(axis=0).any():
        j = int(np.flatnonzero(problem.mask.all(axis=0))[0])
        raise MaskAllOnes(f"column {j} is entirely masked")


def initialize(problem: RpcaProblem, options: Optional[SolverOptions] = None) -> VariationalState:
    options = options or SolverOptions()
    _check_solvable(problem, options.mode)
    Y = problem.Y
    m, n = Y.shape
    if problem.mask is not None:
        seen = Y[~problem.mask]
        kappa = float(seen @ seen) / seen.size
    else:
        kappa = float(np.sum(Y * Y)) / (m * n)
    if kappa == 0.0:
        kappa = KAPPA_FLOOR
    Psi = kappa * np.eye(m)
    Gamma = np.full((m, n), kappa)
    return state_at(Psi, Gamma, problem, options.mode, options, kappa=kappa)


def update_means(state: VariationalState, problem: RpcaProblem):
    """Posterior means ``(X_hat, S_hat)`` at the state's hyperparameters.

    Column-wise ``x_j = Psi Sigma_j^{-1} y_j`` and ``s_j = Gamma_j Sigma_j^{-1} y_j``;
    masked rows take ``s = y - x``.
    """
    cp = _column_pass(state.Psi, state.Gamma, problem, Mode.MAP)
    return cp.X, cp.S


def update_uv(state: VariationalState, problem: RpcaProblem, mode=Mode.EMPIRICAL_BAYES):
    """Per-column bound matrices.

    Returns ``U`` with shape (n, m, m), ``U[j] = Psi - Psi Sigma_j^{-1} Psi``, and
    ``V`` with shape (m, n) holding the diagonals of
    ``Gamma_j - Gamma_j Sigma_j^{-1} Gamma_j``.  Both are zero in MAP mode.
    """
    cp = _column_pass(state.Psi, state.Gamma, problem, mode, keep_u=True)
    return cp.U, cp.V


def update_hyperparams(state: VariationalState, mode=Mode.EMPIRICAL_BAYES):
    X = state.X_hat
    n = X.shape[1]
    if Mode(mode) == Mode.MAP:
        Psi = (X @ X.T) / n
        Gamma = state.S_hat ** 2
    else:
        Psi = (X @ X.T + state.U_sum) / n
        Gamma = state.S_hat ** 2 + state.V
    Psi = 0.5 * (Psi + Psi.T)
    # V_j >= 0 exactly; clip roundoff only
    Gamma = np.maximum(Gamma, 0.0)
    Gamma[np.isinf(state.Gamma)] = np.inf
    return Psi, Gamma


def compute_cost(Psi, Gamma, problem: RpcaProblem) -> float:
    """Marginal-likelihood cost; masked entries contribute through their
    gamma -> inf limit (the observed-rows marginal, infinite constant dropped)."""
    Gamma = np.array(Gamma, dtype=float)
    if problem.mask is not None:
        Gamma[problem.mask] = np.inf
    return _column_pass(np.asarray(Psi, dtype=float), Gamma, problem, Mode.MAP).cost


def _rel_change(new, old) -> float:
    return float(np.max(np.abs(new - old))) / (1.0 + float(np.max(np.abs(old))))


def iterate_once(state: VariationalState, problem: RpcaProblem,
                 options: Optional[SolverOptions] = None):
    """One MM sweep.

    ``state`` already carries the means and bound matrices optimal for its
    hyperparameters, so the sweep refits ``(Psi, Gamma)`` from them and then
    recomputes means, bounds and cost at the new hyperparameters.
    """
    options = options or SolverOptions()
    Psi, Gamma = update_hyperparams(state, options.mode)
    new = state_at(Psi, Gamma, problem, options.mode, options,
                   iteration=state.iteration + 1, kappa=state.kappa)
    report = EbIterationReport(
        iteration=new.iteration,
        cost_before=state.cost,
        cost_after=new.cost,
        max_rel_change_x=_rel_change(new.X_hat, state.X_hat),
        max_rel_change_s=_rel_change(new.S_hat, state.S_hat),
    )
    return new, report


def solve(problem: RpcaProblem, options: Optional[SolverOptions] = None) -> Decomposition:
    options = options or SolverOptions()
    state = initialize(problem, options)
    trace = [state.cost]
    converged = False
    for _ in range(options.max_iterations):
        state, report = iterate_once(state, problem, options)
        trace.append(report.cost_after)
        if not report.descended:
            log.warning("cost increased at iteration %d: %.12g -> %.12g",
                        report.iteration, report.cost_before, report.cost_after)
        if abs(report.cost_after - report.cost_before) < options.rel_tolerance * (1.0 + abs(report.cost_before)):
            converged = True
            break
    return Decomposition(state.X_hat, state.S_hat, state.iteration, trace, converged)


def solve_completion(problem: RpcaProblem, options: Optional[SolverOptions] = None) -> Decomposition:
    """EB solve with the masked gamma entries pinned at +inf."""
    options = options or SolverOptions()
    if options.mode == Mode.MAP:
        return solve(problem, options)
    opts = SolverOptions(options.max_iterations, options.rel_tolerance, Mode.COMPLETION,
                         options.deterministic, options.workers)
    return solve(problem, opts)
