"""Axis-aligned search regions and the focalized training weights."""
from dataclasses import dataclass

import numpy as np

from .kernels import kappa


@dataclass(frozen=True)
class SearchRegion:
    """Box ``{x : center - length/2 <= x <= center + length/2}`` clipped to the unit cube."""

    center: np.ndarray
    length: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float)).copy()
        l = np.atleast_1d(np.asarray(self.length, dtype=float)).copy()
        if l.size == 1 and c.size > 1:
            l = np.full(c.size, l[0])
        if c.shape != l.shape or c.ndim != 1:
            raise ValueError(f"center {c.shape} and length {l.shape} disagree")
        if np.any(l <= 0) or np.any(l > 1 + 1e-12):
            raise ValueError("region lengths must lie in (0, 1]")
        if np.any(c < 0) or np.any(c > 1):
            raise ValueError("region center must lie in the unit cube")
        c.setflags(write=False)
        l.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "length", l)

    @property
    def dim(self):
        return self.center.size

    @classmethod
    def full(cls, dim):
        return cls(np.full(dim, 0.5), np.ones(dim))

    @classmethod
    def from_bounds(cls, lower, upper):
        lower = np.clip(np.asarray(lower, dtype=float), 0.0, 1.0)
        upper = np.clip(np.asarray(upper, dtype=float), 0.0, 1.0)
        return cls((lower + upper) / 2, np.maximum(upper - lower, 1e-300))

    def halved(self, new_center):
        return SearchRegion(new_center, self.length / 2)

    def is_full(self):
        lo, hi = region_bounds(self)
        return bool(np.all(lo <= 0.0) and np.all(hi >= 1.0))


def region_bounds(region):
    lower = np.clip(region.center - region.length / 2, 0.0, 1.0)
    upper = np.clip(region.center + region.length / 2, 0.0, 1.0)
    return lower, upper


def nearest_point_in_region(x, region):
    """Euclidean projection onto the box (a coordinatewise clamp). Accepts one point or a batch."""
    lower, upper = region_bounds(region)
    return np.clip(np.asarray(x, dtype=float), lower, upper)


def in_region_mask(X, region):
    lower, upper = region_bounds(region)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.all((X >= lower) & (X <= upper), axis=1)


def count_in_region(X, region):
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        return 0
    return int(np.count_nonzero(in_region_mask(X, region)))


def focal_weights(X, region, params, family="matern52", with_deriv=False):
    """Per-point weight: kernel correlation between ``x_i`` and its projection onto the region.

    Points inside the region get exactly 1. With ``with_deriv`` also return
    ``dw/dlog_ls`` as an ``(n, d)`` array.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    offsets = X - nearest_point_in_region(X, region)
    w, dw = weights_from_offsets(offsets, params.lengthscales, family)
    return (w, dw) if with_deriv else w


def weights_from_offsets(offsets, lengthscales, family="matern52"):
    """Weights and ``dw/dlog_ls`` from precomputed offsets ``x_i - clamp(x_i)``."""
    scaled = offsets / lengthscales
    r2 = np.einsum("ij,ij->i", scaled, scaled)
    w, dw_dr2 = kappa(r2, family)
    w = np.where(r2 == 0.0, 1.0, w)
    return w, dw_dr2[:, None] * (-2.0 * scaled * scaled)
