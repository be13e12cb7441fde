"""Exact zero-mean GP regression: posterior, log evidence and Adam fitting.

Used as the reference model for the sparse GPs and as the ``exactgp-bo``
surrogate.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .data import Dataset, PosteriorGaussian
from .errors import TrainingDivergedError
from .kernels import KernelParams, cholesky_with_jitter, contract, correlation, kernel_matrix
from .train import AdamState, TrainConfig, TrainReport, adam_step, clamp_log_params

_LOG2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class ExactGPModel:
    """Immutable fitted model; build through :meth:`build` so the factor matches the params."""

    data: Dataset
    params: KernelParams
    family: str = "matern52"
    chol: np.ndarray = field(repr=False, default=None)
    alpha: np.ndarray = field(repr=False, default=None)
    jitter: float = 0.0

    @classmethod
    def build(cls, data, params, family="matern52"):
        K = kernel_matrix(data.X, data.X, params, family)
        K[np.diag_indices_from(K)] += params.noise_var
        L, j = cholesky_with_jitter(K)
        alpha = scipy.linalg.cho_solve((L, True), data.y, check_finite=False)
        return cls(data, params, family, L, alpha, j)

    def with_params(self, params):
        return ExactGPModel.build(self.data, params, self.family)

    def posterior(self, Xs, full_cov=True):
        return exact_posterior(self, Xs, full_cov)

    @property
    def noise_var(self):
        return self.params.noise_var


def exact_posterior(model, Xs, full_cov=True):
    """Latent posterior at ``Xs``. With ``full_cov=False`` ``cov`` holds the marginal variances."""
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    Ksx = kernel_matrix(Xs, model.data.X, model.params, model.family)
    mean = Ksx @ model.alpha
    V = scipy.linalg.solve_triangular(model.chol, Ksx.T, lower=True, check_finite=False)
    if full_cov:
        cov = kernel_matrix(Xs, Xs, model.params, model.family) - V.T @ V
        cov = 0.5 * (cov + cov.T)
    else:
        cov = model.params.signal_var - np.einsum("ij,ij->j", V, V)
    return PosteriorGaussian(mean, cov, Xs)


def log_marginal_likelihood(model, with_grad=True):
    """Log evidence and its gradient w.r.t. ``[log ls, log signal_var, log noise_var]``."""
    y, L, alpha = model.data.y, model.chol, model.alpha
    n = y.size
    value = -0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * _LOG2PI
    if not with_grad:
        return value
    p = model.params
    Kinv = scipy.linalg.cho_solve((L, True), np.eye(n), check_finite=False)
    G = 0.5 * (np.outer(alpha, alpha) - Kinv)
    R, dR = correlation(model.data.X, model.data.X, p.lengthscales, model.family, with_deriv=True)
    g_ls, _ = contract(p.signal_var * G * dR, model.data.X, model.data.X, p.lengthscales)
    g_sf = p.signal_var * np.sum(G * R)
    g_noise = p.noise_var * np.trace(G)
    return value, np.concatenate([g_ls, [g_sf, g_noise]])


def default_params(data):
    d = data.dim
    sf = max(float(np.var(data.y)), 1e-2) if data.n > 1 else 1.0
    return KernelParams(np.full(d, 0.2), sf, 1e-2 * sf)


def fit_exact(data, config=TrainConfig(), family="matern52", init=None):
    """Maximize the log evidence with Adam; returns ``(model, report)``."""
    if data.n < 2:
        raise ValueError("fit_exact needs at least two points")
    params = init if init is not None else default_params(data)
    d = data.dim
    theta = params.to_log()
    state = AdamState.zeros(theta.size)
    trace = np.empty(config.epochs + 1)
    model = ExactGPModel.build(data, params, family)
    for epoch in range(config.epochs):
        value, grad = log_marginal_likelihood(model)
        if not np.isfinite(value):
            raise TrainingDivergedError("non-finite log marginal likelihood", epoch=epoch)
        trace[epoch] = value
        theta, state = adam_step(theta, -grad, state, config)
        clamp_log_params(theta, d)
        model = ExactGPModel.build(data, KernelParams.from_log(theta), family)
    trace[-1] = log_marginal_likelihood(model, with_grad=False)
    if not np.isfinite(trace[-1]):
        raise TrainingDivergedError("non-finite log marginal likelihood", epoch=config.epochs)
    return model, TrainReport(trace, config.epochs)
