"""Benchmark objectives on the unit cube, maximization convention.

Native minimization functions are negated once, here. Every objective
accepts points in ``[0, 1]^d`` and maps them affinely to native bounds.
"""
import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from typing import Callable

import numpy as np
import scipy.linalg

from .data import Dataset
from .errors import DomainError
from .kernels import KernelParams, cholesky_with_jitter, kernel_matrix
from .train import seeded_rng, sobol_points

_DOMAIN_TOL = 1e-12


@lru_cache(maxsize=1)
def constants():
    text = resources.files("focalbo").joinpath("data/benchmark_constants.json").read_text()
    return json.loads(text)


@dataclass(frozen=True)
class Objective:
    """``native(Xn)`` returns the value to *maximize* at native-space rows ``Xn``."""

    name: str
    dim: int
    lower: np.ndarray
    upper: np.ndarray
    native: Callable = field(repr=False)
    optimum: float | None = None
    noise_std: float = 0.0
    extras: dict = field(default_factory=dict, repr=False, compare=False)

    def to_native(self, X):
        return self.lower + np.asarray(X, dtype=float) * (self.upper - self.lower)

    def to_unit(self, Xn):
        return (np.asarray(Xn, dtype=float) - self.lower) / (self.upper - self.lower)

    def value(self, X):
        """Noise-free objective at unit-cube points; accepts one point or a batch."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.dim:
            raise DomainError(f"expected dimension {self.dim}, got {X.shape[1]}")
        if not np.all(np.isfinite(X)) or np.any(X < -_DOMAIN_TOL) or np.any(X > 1 + _DOMAIN_TOL):
            raise DomainError("input outside the unit cube")
        out = self.native(self.to_native(np.clip(X, 0.0, 1.0)))
        return float(out[0]) if single else out

    def with_noise(self, noise_std):
        if noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        return replace(self, noise_std=float(noise_std))


def evaluate(obj, X, rng=None):
    """Objective value plus ``N(0, noise_std^2)`` noise drawn from ``rng``."""
    y = obj.value(X)
    if obj.noise_std > 0:
        if rng is None:
            raise ValueError("a noise stream is required when noise_std > 0")
        y = y + obj.noise_std * rng.standard_normal(np.shape(y))
    return y


def _box(lo, hi, dim):
    return np.full(dim, float(lo)), np.full(dim, float(hi))


def ackley(dim=2):
    k = constants()["ackley"]
    a, b, c = k["a"], k["b"], k["c"]

    def f(X):
        val = (-a * np.exp(-b * np.sqrt(np.mean(X * X, axis=1)))
               - np.exp(np.mean(np.cos(c * X), axis=1)) + a + np.e)
        return -val

    return Objective(f"ackley{dim}", dim, *_box(*k["bounds"], dim), f, 0.0)


def rastrigin(dim=2):
    k = constants()["rastrigin"]
    A = k["A"]

    def f(X):
        return -(A * X.shape[1] + np.sum(X * X - A * np.cos(2 * np.pi * X), axis=1))

    return Objective(f"rastrigin{dim}", dim, *_box(*k["bounds"], dim), f, 0.0)


def shekel(dim=4):
    if dim != 4:
        raise ValueError("shekel is defined for dim=4")
    k = constants()["shekel"]
    A = np.asarray(k["A"], dtype=float)
    c = np.asarray(k["c"], dtype=float)

    def f(X):
        sq = np.sum((X[:, None, :] - A[None]) ** 2, axis=2)
        return np.sum(1.0 / (sq + c), axis=1)

    return Objective("shekel4", 4, *_box(*k["bounds"], 4), f, k["maximum"])


def hartmann6(dim=6):
    if dim != 6:
        raise ValueError("hartmann6 is defined for dim=6")
    k = constants()["hartmann6"]
    alpha = np.asarray(k["alpha"])
    A = np.asarray(k["A"], dtype=float)
    P = np.asarray(k["P"], dtype=float) * k["P_scale"]

    def f(X):
        inner = np.sum(A[None] * (X[:, None, :] - P[None]) ** 2, axis=2)
        return np.exp(-inner) @ alpha

    return Objective("hartmann6", 6, *_box(*k["bounds"], 6), f, k["maximum"])


def michalewicz(dim=2):
    k = constants()["michalewicz"]
    m = k["m"]
    i = np.arange(1, dim + 1)

    def f(X):
        return np.sum(np.sin(X) * np.sin(i * X * X / np.pi) ** (2 * m), axis=1)

    opt = k["maximum_2d"] if dim == 2 else None
    return Objective(f"michalewicz{dim}", dim, *_box(*k["bounds"], dim), f, opt)


def gp_objective(dim, lengthscale=0.5, seed=0, anchors=1024, family="matern52"):
    """Deterministic function: exact-GP mean through one prior draw at Sobol anchors."""
    if anchors < dim:
        raise ValueError("anchor count must be >= dim")
    Xa = sobol_points(dim, anchors)
    params = KernelParams(np.full(dim, float(lengthscale)), 1.0, 1e-12)
    K = kernel_matrix(Xa, Xa, params, family)
    L, _ = cholesky_with_jitter(K, base_jitter=1e-12)
    fa = L @ seeded_rng(seed, 101).standard_normal(anchors)
    weights = scipy.linalg.cho_solve((L, True), fa, check_finite=False)

    def f(X):
        return kernel_matrix(X, Xa, params, family) @ weights

    extras = {"anchors": Xa, "anchor_values": fa, "lengthscale": float(lengthscale)}
    return Objective(f"gp{dim}", dim, np.zeros(dim), np.ones(dim), f, None, extras=extras)


REGISTRY = {
    "ackley": ackley,
    "rastrigin": rastrigin,
    "shekel": shekel,
    "hartmann6": hartmann6,
    "michalewicz": michalewicz,
}


def make_objective(name, dim, noise_std=0.0, seed=0, lengthscale=0.5):
    """Look up an objective by name; ``gp`` builds a GP-sampled function keyed by ``seed``."""
    if name == "gp":
        obj = gp_objective(dim, lengthscale, seed)
    elif name in REGISTRY:
        obj = REGISTRY[name](dim)
    else:
        raise KeyError(f"unknown objective {name!r}; known: {sorted(REGISTRY) + ['gp']}")
    return obj.with_noise(noise_std) if noise_std else obj


def offline_dataset(obj, n, sampler="uniform", seed=0):
    """``n`` inputs (uniform or Sobol) with noisy evaluations, reproducible per seed."""
    if n < 1:
        raise ValueError("offline dataset needs n >= 1")
    rng = seeded_rng(seed, 11)
    if sampler == "uniform":
        X = rng.random((n, obj.dim))
    elif sampler == "sobol":
        X = sobol_points(obj.dim, n, skip=int(rng.integers(0, 2**16)))
    else:
        raise ValueError(f"unknown sampler {sampler!r}")
    return Dataset(X, evaluate(obj, X, seeded_rng(seed, 12)))
