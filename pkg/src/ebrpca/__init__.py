"""Robust PCA by empirical Bayesian variational inference, with MAP and PCP baselines."""

from .eb import initialize, iterate_once, solve, solve_completion
from .metrics import normalized_mse, subspace_angle
from .model import Decomposition, Mode, RpcaProblem, SolverOptions
from .pcp import PcpOptions, solve_pcp

__all__ = [
    "Decomposition", "Mode", "PcpOptions", "RpcaProblem", "SolverOptions",
    "initialize", "iterate_once", "normalized_mse", "solve", "solve_completion",
    "solve_pcp", "subspace_angle",
]
__version__ = "0.1.0"
