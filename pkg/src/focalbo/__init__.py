"""Focalized sparse Gaussian processes and the FocalBO optimization loop."""
__version__ = "0.1.0"

from .acquisition import AcquisitionSpec, Proposal, acq_value, optimize_candidates, softmax_select
from .bench import Objective, evaluate, gp_objective, make_objective, offline_dataset
from .data import Dataset, PosteriorGaussian, Standardizer, standardize
from .exact_gp import ExactGPModel, exact_posterior, fit_exact, log_marginal_likelihood
from .focal import FocalConfig, depth_trace, focal_acq, run_focalbo, update_depth
from .kernels import KernelParams, cholesky_with_jitter, kernel_eval, kernel_grad, kernel_matrix
from .metrics import gaussian_kl, predictive_nll, rmse
from .region import SearchRegion, focal_weights, nearest_point_in_region, region_bounds
from .svgp import SparseGPModel, elbo_focalized, elbo_standard, sparse_posterior, train_sparse
from .train import TrainConfig, adam_step, seeded_rng, sobol_points

__all__ = [
    "AcquisitionSpec", "Dataset", "ExactGPModel", "FocalConfig", "KernelParams", "Objective",
    "PosteriorGaussian", "Proposal", "SearchRegion", "SparseGPModel", "Standardizer", "TrainConfig",
    "acq_value", "adam_step", "cholesky_with_jitter", "depth_trace", "elbo_focalized", "elbo_standard",
    "evaluate", "exact_posterior", "fit_exact", "focal_acq", "focal_weights", "gaussian_kl",
    "gp_objective", "kernel_eval", "kernel_grad", "kernel_matrix", "log_marginal_likelihood",
    "make_objective", "nearest_point_in_region", "offline_dataset", "optimize_candidates",
    "predictive_nll", "region_bounds", "rmse", "run_focalbo", "seeded_rng", "sobol_points",
    "softmax_select", "sparse_posterior", "standardize", "train_sparse", "update_depth",
]
