"""Core value types shared by the solvers.

Matrices are plain ``numpy.ndarray`` objects of dtype float64.  The
containers below validate on construction and freeze their arrays so that
a problem or a decomposition can be shared between threads read-only.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np


class RpcaError(ValueError):
    """Base class for all input and numerical errors raised by this package."""


class ShapeMismatch(RpcaError):
    pass


class NonFiniteEntry(RpcaError):
    pass


class NonPositiveLambda(RpcaError):
    pass


class MaskAllOnes(RpcaError):
    """Every entry of some column is marked as a known corruption."""


class NumericalDegeneracy(RpcaError):
    """A column covariance failed to factor."""


class ZeroReference(RpcaError):
    pass


class ZeroMatrix(RpcaError):
    pass


class SvdFailure(RpcaError):
    pass


class Mode(str, enum.Enum):
    EMPIRICAL_BAYES = "eb"
    MAP = "map"
    COMPLETION = "completion"


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """Return ``values`` as a finite 2-D float64 array, raising otherwise."""
    M = np.asarray(values, dtype=np.float64)
    if M.ndim == 1:
        M = M.reshape(1, -1)
    if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
        raise ShapeMismatch(f"{name} must be a non-empty 2-D matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NonFiniteEntry(f"{name} contains NaN or Inf entries")
    return M


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


def matrices_close(A, B, tol: float) -> bool:
    """``max|A - B| <= tol * (1 + max|B|)``; ``B`` is the reference."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        return False
    if A.size == 0:
        return True
    return float(np.max(np.abs(A - B))) <= tol * (1.0 + float(np.max(np.abs(B))))


@dataclass(frozen=True)
class RpcaProblem:
    """Observation ``Y`` (m x n), noise variance ``lam`` and an optional
    boolean mask of entries known to be corrupted (completion mode)."""

    Y: np.ndarray
    lam: float = 1e-6
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        Y = as_matrix(self.Y, "Y")
        object.__setattr__(self, "Y", _frozen(Y))
        if self.mask is not None:
            mask = np.asarray(self.mask)
            if mask.shape != Y.shape:
                raise ShapeMismatch(f"mask shape {mask.shape} != Y shape {Y.shape}")
            object.__setattr__(self, "mask", _frozen(mask.astype(bool)))
        validate(self)

    @property
    def shape(self) -> tuple[int, int]:
        return self.Y.shape

    def transpose(self) -> "RpcaProblem":
        mask = None if self.mask is None else self.mask.T
        return RpcaProblem(self.Y.T, self.lam, mask)


def validate(problem: RpcaProblem) -> None:
    """Raise if any invariant of ``problem`` is violated; return None otherwise."""
    Y = problem.Y
    if not isinstance(Y, np.ndarray) or Y.ndim != 2 or min(Y.shape) < 1:
        raise ShapeMismatch("Y must be a non-empty 2-D array")
    if not np.all(np.isfinite(Y)):
        raise NonFiniteEntry("Y contains NaN or Inf entries")
    lam = problem.lam
    if not np.isfinite(lam) or lam <= 0:
        raise NonPositiveLambda(f"lambda must be positive and finite, got {lam!r}")
    if problem.mask is not None and problem.mask.shape != Y.shape:
        raise ShapeMismatch(f"mask shape {problem.mask.shape} != Y shape {Y.shape}")


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 100
    rel_tolerance: float = 1e-6
    mode: Mode = Mode.EMPIRICAL_BAYES
    # fixed, ascending-order reduction over column chunks
    deterministic: bool = True
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.rel_tolerance < 0:
            raise ValueError("rel_tolerance must be >= 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class VariationalState:
    """Hyperparameters of the EB model and the variational parameters that
    are optimal for them.

    ``Gamma[:, j]`` is the diagonal of the j-th sparse-prior covariance;
    masked entries hold ``+inf``.  ``U_sum`` is the sum over columns of the
    per-column low-rank bound matrices and ``V`` holds the diagonals of the
    per-column sparse bound matrices, one column per data column.  ``cost``
    is the marginal-likelihood cost at ``(Psi, Gamma)``.
    """

    Psi: np.ndarray
    Gamma: np.ndarray
    X_hat: np.ndarray
    S_hat: np.ndarray
    U_sum: np.ndarray
    V: np.ndarray
    cost: float
    kappa: float = float("nan")
    iteration: int = 0


@dataclass(frozen=True)
class Decomposition:
    X_hat: np.ndarray
    S_hat: np.ndarray
    iterations: int
    cost_trace: list = field(default_factory=list)
    converged: bool = False
    residual_trace: list = field(default_factory=list)
    transposed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "X_hat", _frozen(self.X_hat))
        object.__setattr__(self, "S_hat", _frozen(self.S_hat))

    def diagnostics(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "cost_trace": [float(c) for c in self.cost_trace],
            "residual_trace": [float(r) for r in self.residual_trace],
            "transposed": self.transposed,
        }

    def diagnostics_json(self) -> str:
        return json.dumps(self.diagnostics())

    def transpose(self) -> "Decomposition":
        return Decomposition(
            self.X_hat.T, self.S_hat.T, self.iterations, list(self.cost_trace),
            self.converged, list(self.residual_trace), not self.transposed,
        )


def write_matrix(path, M, provenance: Optional[dict] = None) -> Path:
    """Write ``M`` as header-less CSV plus a ``<path>.json`` sidecar manifest."""
    path = Path(path)
    M = as_matrix(M)
    with open(path, "w") as fh:
        for row in M:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")
    sidecar = {"rows": M.shape[0], "cols": M.shape[1]}
    if provenance:
        sidecar["provenance"] = provenance
    path.with_name(path.name + ".json").write_text(json.dumps(sidecar, indent=2))
    return path


def read_matrix(path) -> np.ndarray:
    path = Path(path)
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                try:
                    rows.append([float(tok) for tok in line.split(",")])
                except ValueError as exc:
                    raise RpcaError(f"{path}: {exc}") from exc
    if not rows:
        raise ShapeMismatch(f"{path}: empty matrix file")
    width = {len(r) for r in rows}
    if len(width) != 1:
        raise ShapeMismatch(f"{path}: ragged rows")
    M = as_matrix(rows, str(path))
    sidecar = path.with_name(path.name + ".json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        if (meta.get("rows"), meta.get("cols")) != M.shape:
            raise ShapeMismatch(f"{path}: sidecar shape does not match data {M.shape}")
    return M
