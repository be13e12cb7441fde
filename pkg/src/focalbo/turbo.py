"""Single trust region in the style of TuRBO, used as the depth-1 search region."""
import math
from dataclasses import dataclass, replace

import numpy as np

from .region import SearchRegion

L_INIT = 0.8
L_MIN = 2.0**-7
L_MAX = 1.6


@dataclass(frozen=True)
class TrustRegionState:
    center: np.ndarray
    length: float = L_INIT
    successes: int = 0
    failures: int = 0
    tau_s: int = 3
    tau_f: int = 4
    best_value: float = -np.inf
    restart: bool = False

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).copy()
        c.setflags(write=False)
        object.__setattr__(self, "center", c)
        if self.successes < 0 or self.failures < 0:
            raise ValueError("counters must be nonnegative")
        if self.successes and self.failures:
            raise ValueError("at most one counter may be nonzero")

    @classmethod
    def initial(cls, center, best_value, batch_size, dim=None):
        dim = len(center) if dim is None else dim
        tau_f = math.ceil(max(4, dim) / batch_size)
        return cls(center, L_INIT, 0, 0, 3, tau_f, float(best_value))


def tr_update(state, improved, center=None, value=None):
    """Count a success or failure, resize on a threshold and recenter.

    ``center``/``value`` are the trust region's incumbent after the batch.
    The returned state has ``restart=True`` once the length falls below ``L_MIN``.
    """
    succ, fail = (state.successes + 1, 0) if improved else (0, state.failures + 1)
    length = state.length
    if succ >= state.tau_s:
        length, succ = min(2.0 * length, L_MAX), 0
    elif fail >= state.tau_f:
        length, fail = length / 2.0, 0
    return replace(
        state,
        center=state.center if center is None else center,
        best_value=state.best_value if value is None else float(value),
        length=length,
        successes=succ,
        failures=fail,
        restart=length < L_MIN,
    )


def restart_state(state, center, best_value):
    return replace(state, center=center, best_value=float(best_value), length=L_INIT,
                   successes=0, failures=0, restart=False)


def tr_region(state, lengthscales):
    """Box around the center with sides ``L * ls / geomean(ls)``, clipped to the unit cube."""
    ls = np.asarray(lengthscales, dtype=float)
    weights = ls / np.exp(np.mean(np.log(ls)))
    half = 0.5 * state.length * weights
    return SearchRegion.from_bounds(state.center - half, state.center + half)
