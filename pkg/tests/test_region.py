import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from focalbo.kernels import KernelParams
from focalbo.region import (SearchRegion, count_in_region, focal_weights, in_region_mask,
                            nearest_point_in_region, region_bounds)


def test_bounds_examples():
    lo, hi = region_bounds(SearchRegion([0.5, 0.5], [1, 1]))
    np.testing.assert_array_equal(lo, [0, 0])
    np.testing.assert_array_equal(hi, [1, 1])
    lo, hi = region_bounds(SearchRegion([0.1], [0.5]))
    np.testing.assert_allclose([lo[0], hi[0]], [0.0, 0.35])
    lo, hi = region_bounds(SearchRegion([0.5], [0.5]))
    np.testing.assert_allclose([lo[0], hi[0]], [0.25, 0.75])


def test_invalid_regions():
    with pytest.raises(ValueError):
        SearchRegion([0.5], [0.0])
    with pytest.raises(ValueError):
        SearchRegion([1.5], [0.5])
    with pytest.raises(ValueError):
        SearchRegion([0.5, 0.5], [0.5, 0.5, 0.5])


def test_nearest_point_examples():
    r = SearchRegion([0.3, 0.3], [0.2, 0.2])
    np.testing.assert_allclose(nearest_point_in_region([0.9, 0.9], r), [0.4, 0.4])
    np.testing.assert_array_equal(nearest_point_in_region([0.31, 0.25], r), [0.31, 0.25])


def test_nearest_point_beats_dense_sampling():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        d = int(rng.integers(1, 4))
        r = SearchRegion(rng.random(d), rng.uniform(0.01, 1, d))
        x = rng.random(d)
        lo, hi = region_bounds(r)
        samples = lo + (hi - lo) * rng.random((100_000 // 10, d))  # 1e4 per case keeps the test fast
        best = np.min(np.linalg.norm(samples - x, axis=1))
        assert np.linalg.norm(nearest_point_in_region(x, r) - x) <= best + 1e-15


def test_count_examples():
    X = np.stack(np.meshgrid(np.linspace(0, 1, 11), np.linspace(0, 1, 11)), -1).reshape(-1, 2)
    assert count_in_region(X, SearchRegion.full(2)) == 121
    assert count_in_region(X, SearchRegion([0.95, 0.95], [0.05, 0.05])) == 0
    # left half, inclusive boundary at 0.5
    half = SearchRegion.from_bounds([0.0, 0.0], [0.5, 1.0])
    assert count_in_region(X, half) == 6 * 11
    assert count_in_region(np.empty((0, 2)), half) == 0


def test_weights_examples():
    p = KernelParams([1.0], 3.0)
    r = SearchRegion([0.25], [0.5])
    w = focal_weights([[0.1], [0.5]], r, p)
    np.testing.assert_array_equal(w, [1.0, 1.0])
    wide = KernelParams([0.1], 3.0)
    # distance 0.1 at lengthscale 0.1 is ARD distance 1
    w = focal_weights([[0.6]], r, wide)
    assert w[0] == pytest.approx(0.52399, abs=1e-5)
    np.testing.assert_array_equal(focal_weights(np.random.default_rng(0).random((50, 3)), SearchRegion.full(3),
                                                KernelParams([0.1] * 3)), np.ones(50))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**31 - 1), st.sampled_from(["matern52", "rbf"]))
def test_weight_properties(d, seed, fam):
    rng = np.random.default_rng(seed)
    X = rng.random((30, d))
    p = KernelParams(rng.uniform(0.05, 1, d))
    c = rng.random(d)
    big = SearchRegion(c, rng.uniform(0.2, 1, d))
    small = SearchRegion(c, big.length * rng.uniform(0.1, 1))
    wb, ws = focal_weights(X, big, p, fam), focal_weights(X, small, p, fam)
    assert np.all(ws <= wb + 1e-15)
    assert np.all((wb > 0) & (wb <= 1))
    inside = in_region_mask(X, big)
    np.testing.assert_array_equal(wb[inside], 1.0)
    assert np.all(wb[~inside] < 1)
    # nonincreasing along a ray leaving the region
    lo, hi = region_bounds(big)
    ray = np.clip(hi + np.linspace(0, 1, 20)[:, None] * np.ones(d), 0, None)
    w = focal_weights(ray, big, p, fam)
    assert np.all(np.diff(w) <= 1e-15)
