"""Adam, Sobol points and seeded random streams."""
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import qmc

from .errors import TrainingDivergedError


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int | None = None  # None: full batch up to 2048 points, else 1024
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")

    def with_(self, **kw):
        return replace(self, **kw)

    def resolve_batch(self, n):
        if self.batch_size is not None:
            return min(int(self.batch_size), n)
        return n if n <= 2048 else 1024


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size):
        return cls(np.zeros(size), np.zeros(size), 0)


def adam_step(params, grads, state, config):
    """One bias-corrected Adam update for *minimizing*; returns ``(params, state)``.

    ``state`` is updated in place and also returned.
    """
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape:
        raise ValueError(f"params {params.shape} and grads {grads.shape} differ")
    if not np.all(np.isfinite(grads)):
        raise TrainingDivergedError("non-finite gradient", epoch=state.t)
    b1, b2 = config.beta1, config.beta2
    state.t += 1
    state.m = b1 * state.m + (1 - b1) * grads
    state.v = b2 * state.v + (1 - b2) * grads * grads
    m_hat = state.m / (1 - b1**state.t)
    v_hat = state.v / (1 - b2**state.t)
    return params - config.lr * m_hat / (np.sqrt(v_hat) + config.eps), state


def sobol_points(dim, count, skip=0):
    """Unscrambled base-2 Sobol points ``skip .. skip + count - 1`` in ``[0, 1)**dim``."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if count <= 0:
        return np.empty((0, dim))
    engine = qmc.Sobol(d=dim, scramble=False)
    if skip:
        engine.fast_forward(int(skip))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return engine.random(int(count))


def sobol_in_box(lower, upper, count, skip=0):
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    return lower + (upper - lower) * sobol_points(lower.size, count, skip)


def seeded_rng(seed, stream=None):
    """PCG64 generator keyed by ``seed`` and an optional stream id (int or tuple of ints).

    Distinct stream ids give statistically independent sub-streams.
    """
    key = [int(seed)]
    if stream is not None:
        key.extend(int(s) for s in np.atleast_1d(stream))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


@dataclass
class TrainReport:
    """Objective values (maximized) recorded once per epoch."""

    trace: np.ndarray
    epochs: int

    @property
    def initial(self):
        return float(self.trace[0])

    @property
    def final(self):
        return float(self.trace[-1])


# wide numerical guards on log-parameters, not modelling constraints
LOG_BOUNDS = {
    "lengthscale": (np.log(1e-4), np.log(1e4)),
    "signal_var": (np.log(1e-6), np.log(1e6)),
    "noise_var": (np.log(1e-6), np.log(1e4)),
}


def clamp_log_params(theta, d):
    """Clip ``[log ls (d), log signal_var, log noise_var, ...]`` in place to :data:`LOG_BOUNDS`."""
    theta[:d] = np.clip(theta[:d], *LOG_BOUNDS["lengthscale"])
    theta[d] = np.clip(theta[d], *LOG_BOUNDS["signal_var"])
    theta[d + 1] = np.clip(theta[d + 1], *LOG_BOUNDS["noise_var"])
    return theta
