from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class Dataset:
    """Inputs ``X`` of shape ``(n, d)`` in the unit cube and targets ``y`` of shape ``(n,)``."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if X.shape[0] != y.shape[0]:
            raise ShapeError(f"{X.shape[0]} inputs but {y.shape[0]} targets")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def dim(self):
        return self.X.shape[1]

    def __len__(self):
        return self.n

    def append(self, X, y):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return Dataset(np.vstack([self.X, X]), np.concatenate([self.y, np.asarray(y, dtype=float).ravel()]))

    def subset(self, idx):
        return Dataset(self.X[idx], self.y[idx])

    def best(self):
        """``(x_best, y_best)`` with ties resolved to the earliest index."""
        i = int(np.argmax(self.y))
        return self.X[i].copy(), float(self.y[i])


@dataclass(frozen=True)
class PosteriorGaussian:
    """Latent Gaussian at ``points``. A 1-D ``cov`` holds marginal variances only."""

    mean: np.ndarray
    cov: np.ndarray
    points: np.ndarray

    @property
    def is_diagonal(self):
        return self.cov.ndim == 1

    @property
    def var(self):
        return (self.cov if self.is_diagonal else np.diag(self.cov)).copy()

    @property
    def std(self):
        return np.sqrt(np.maximum(self.var, 0.0))


@dataclass(frozen=True)
class Standardizer:
    mean: float
    std: float

    def forward(self, y):
        return (np.asarray(y, dtype=float) - self.mean) / self.std

    def inverse(self, z):
        return np.asarray(z, dtype=float) * self.std + self.mean


def standardize(data, std_floor=1e-8):
    """Zero-mean, unit-variance targets; returns ``(Dataset, Standardizer)``."""
    if data.n < 2:
        raise ValueError("standardize needs at least two observations")
    mu = float(data.y[0]) if np.ptp(data.y) == 0 else float(np.mean(data.y))
    sd = max(float(np.std(data.y)), std_floor)
    tr = Standardizer(mu, sd)
    return Dataset(data.X, tr.forward(data.y)), tr
