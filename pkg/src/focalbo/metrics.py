"""Predictive NLL, RMSE and Gaussian KL between posteriors."""
import numpy as np
import scipy.linalg

from .data import PosteriorGaussian
from .kernels import cholesky_with_jitter
from .region import region_bounds
from .train import sobol_in_box

_HALF_LOG_2PI = 0.5 * np.log(2 * np.pi)


def _targets(test):
    y = np.asarray(getattr(test, "y", test), dtype=float).ravel()
    if y.size == 0:
        raise ValueError("empty test set")
    return y


def predictive_nll(post, test, noise_var=0.0):
    """Mean of ``-log N(y_i | mu_i, s_i^2 + noise_var)``."""
    y = _targets(test)
    var = post.var + noise_var
    if np.any(~(var > 0)):
        raise FloatingPointError("predictive variance must be positive")
    return float(np.mean(_HALF_LOG_2PI + 0.5 * np.log(var) + 0.5 * (y - post.mean) ** 2 / var))


def rmse(mean, test):
    y = _targets(test)
    if isinstance(mean, PosteriorGaussian):
        mean = mean.mean
    mean = np.asarray(mean, dtype=float)
    return float(np.sqrt(np.mean((mean - y) ** 2)))


def with_noise(post, noise_var):
    """Predictive distribution of noisy observations."""
    cov = post.cov + (noise_var if post.is_diagonal else noise_var * np.eye(post.mean.size))
    return PosteriorGaussian(post.mean, cov, post.points)


def gaussian_kl(p, q, base_jitter=1e-10):
    """``KL[p || q]`` for two Gaussians over the same points."""
    if p.mean.shape != q.mean.shape:
        raise ValueError("posteriors are over different point sets")
    k = p.mean.size
    Sp = np.diag(p.cov) if p.is_diagonal else p.cov
    Sq = np.diag(q.cov) if q.is_diagonal else q.cov
    Lp, _ = cholesky_with_jitter(Sp, base_jitter)
    Lq, _ = cholesky_with_jitter(Sq, base_jitter)
    M = scipy.linalg.solve_triangular(Lq, Lp, lower=True, check_finite=False)
    delta = scipy.linalg.solve_triangular(Lq, q.mean - p.mean, lower=True, check_finite=False)
    logdet = 2.0 * (np.sum(np.log(np.diag(Lq))) - np.sum(np.log(np.diag(Lp))))
    return float(0.5 * (np.sum(M * M) + delta @ delta - k + logdet))


def region_grid(region, count=256):
    """Fixed Sobol grid inside a region, used for KL diagnostics."""
    lower, upper = region_bounds(region)
    return sobol_in_box(lower, upper, count)


def region_kl(sparse_model, exact_model, region, count=256):
    """Both KL directions between noisy predictive posteriors on the region grid.

    Returns ``(KL[sparse || exact], KL[exact || sparse])``.
    """
    X = region_grid(region, count)
    p = with_noise(sparse_model.posterior(X), sparse_model.noise_var)
    q = with_noise(exact_model.posterior(X), exact_model.noise_var)
    return gaussian_kl(p, q), gaussian_kl(q, p)
