"""Symmetrized empirical processes, chaining bounds and oracle inequalities for l1-penalized M-estimation."""

__version__ = "0.1.0"

from .chaining import PointCloud, dudley_bound_opt, dual_norm_gamma2_bound, gamma2_exhaustive, gamma2_greedy
from .emp_process import BallSpec, LinearProcess, LossProcess, conditional_mean_En, regime_bound
from .losses import LossModel, build_envelope, huber_model, logistic_model, mixture_model, quadratic_model
from .oracle import Norm, convex_conjugate, effective_sparsity, oracle_experiment, theorem1_bounds
from .solver import SolverConfig, lambda_path, solve

__all__ = [
    "BallSpec", "LinearProcess", "LossModel", "LossProcess", "Norm", "PointCloud", "SolverConfig",
    "build_envelope", "conditional_mean_En", "convex_conjugate", "dual_norm_gamma2_bound", "dudley_bound_opt",
    "effective_sparsity", "gamma2_exhaustive", "gamma2_greedy", "huber_model", "lambda_path", "logistic_model",
    "mixture_model", "oracle_experiment", "quadratic_model", "regime_bound", "solve", "theorem1_bounds",
]
