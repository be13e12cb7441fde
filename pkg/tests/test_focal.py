import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from focalbo.acquisition import AcquisitionSpec
from focalbo.bench import Objective, make_objective, offline_dataset
from focalbo.errors import ObjectiveEvaluationError
from focalbo.focal import (FocalConfig, depth_trace, focal_acq, replay_depths, run_focalbo, update_depth)
from focalbo.region import region_bounds
from focalbo.train import TrainConfig

FAST = FocalConfig(m=8, batch_size=4, acq=AcquisitionSpec("TS", n_candidates=128), train=TrainConfig(epochs=20))


@pytest.fixture(scope="module")
def small_data():
    return offline_dataset(make_objective("ackley", 2), 40, seed=0)


def test_update_depth_examples():
    assert update_depth(3, [1, 3, 2], [5.0, 2.0, 1.0]) == 2  # winner from a shallower depth
    assert update_depth(3, [1, 3, 2], [1.0, 5.0, 2.0]) == 4  # winner from the deepest
    assert update_depth(1, [1, 1], [0.0, 1.0]) == 2
    assert update_depth(3, [3, 1], [2.0, 2.0]) == 2  # tie goes to the smallest label
    assert update_depth(4, [4], [1.0], cap=4) == 3  # reflect at the cap


def test_update_depth_rejects_bad_labels():
    with pytest.raises(ValueError):
        update_depth(2, [3], [1.0])
    with pytest.raises(ValueError):
        update_depth(2, [], [])
    with pytest.raises(ValueError):
        update_depth(2, [1, 2], [1.0])


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 9), st.integers(2, 10), st.data())
def test_update_depth_moves_by_one(H, cap, data):
    H = min(H, cap)
    B = data.draw(st.integers(1, 6))
    labels = data.draw(st.lists(st.integers(1, H), min_size=B, max_size=B))
    ys = data.draw(st.lists(st.floats(-10, 10), min_size=B, max_size=B))
    H2 = update_depth(H, labels, ys, cap)
    assert H2 >= 1 and H2 <= cap and abs(H2 - H) == 1


def test_focal_acq_regions_and_labels(small_data):
    res = focal_acq(small_data, 3, FAST, seed=1)
    assert len(res.selected) == 4 and len(res.depths) == 3
    x_best, _ = small_data.best()
    for h, art in enumerate(res.depths, start=1):
        assert art.depth == h
        np.testing.assert_allclose(art.region.length, 0.5 ** (h - 1))
        if h > 1:
            np.testing.assert_allclose(art.region.center, x_best)
        lo, hi = region_bounds(art.region)
        for p in art.proposals:
            assert p.depth == h and np.all(p.point >= lo) and np.all(p.point <= hi)
    assert set(res.labels) <= {1, 2, 3}
    assert res.points.shape == (4, 2)


def test_focal_acq_deterministic(small_data):
    a = focal_acq(small_data, 2, FAST, seed=5, iteration=3)
    b = focal_acq(small_data, 2, FAST, seed=5, iteration=3)
    np.testing.assert_array_equal(a.points, b.points)
    c = focal_acq(small_data, 2, FAST, seed=5, iteration=4)
    assert not np.array_equal(a.points, c.points)


def test_focal_acq_threads_match_serial(small_data):
    from dataclasses import replace
    a = focal_acq(small_data, 3, FAST, seed=2)
    b = focal_acq(small_data, 3, replace(FAST, depth_workers=3), seed=2)
    np.testing.assert_array_equal(a.points, b.points)


def test_focal_acq_exact_model(small_data):
    from dataclasses import replace
    res = focal_acq(small_data, 2, replace(FAST, model="exact"), seed=0)
    assert res.points.shape == (4, 2)


def test_run_invariants(small_data):
    obj = make_objective("ackley", 2)
    trace = run_focalbo(obj, small_data, 20, FAST, seed=0)
    assert len(trace.records) == 5
    H = [1]
    for r in trace.records:
        assert r.H_before == H[-1] and abs(r.H_after - r.H_before) == 1
        assert r.depths.size == 4 and r.depths.min() >= 1 and r.depths.max() <= r.H_before
        assert len(r.train_objectives) == r.H_before
        H.append(r.H_after)
    np.testing.assert_array_equal(replay_depths(trace), H)
    dt = depth_trace(trace)
    np.testing.assert_array_equal(dt.H, H)
    assert np.all(dt.counts.sum(axis=1) == 4)
    inc = trace.incumbents
    assert np.all(np.diff(inc) >= 0) and inc[0] == small_data.best()[1]


def test_run_reproducible(small_data):
    obj = make_objective("ackley", 2)
    a = run_focalbo(obj, small_data, 8, FAST, seed=3)
    b = run_focalbo(obj, small_data, 8, FAST, seed=3)
    for ra, rb in zip(a.records, b.records):
        np.testing.assert_array_equal(ra.points, rb.points)
        np.testing.assert_array_equal(ra.y, rb.y)


def test_fixed_depth_variant(small_data):
    from dataclasses import replace
    cfg = replace(FAST, adaptive_depth=False, focal_elbo=False)
    trace = run_focalbo(make_objective("ackley", 2), small_data, 12, cfg, seed=0)
    assert all(r.H_before == r.H_after == 1 for r in trace.records)


def test_turbo_variant(small_data):
    from dataclasses import replace
    trace = run_focalbo(make_objective("ackley", 2), small_data, 12, replace(FAST, turbo=True), seed=0)
    assert all(r.tr_length is not None for r in trace.records)


def _flaky(fail_times):
    base = make_objective("ackley", 2)
    calls = {"n": 0}

    def native(X):
        calls["n"] += 1
        if calls["n"] <= fail_times:
            raise RuntimeError("simulator crashed")
        return base.native(X)

    return Objective("flaky", 2, base.lower, base.upper, native), calls


def test_objective_failure_retried_once(small_data):
    obj, _ = _flaky(1)
    trace = run_focalbo(obj, small_data, 4, FAST, seed=0)
    assert len(trace.records[0].failures) == 1
    obj, _ = _flaky(2)
    with pytest.raises(ObjectiveEvaluationError):
        run_focalbo(obj, small_data, 4, FAST, seed=0)


def test_budget_validation(small_data):
    with pytest.raises(ValueError):
        run_focalbo(make_objective("ackley", 2), small_data, 6, FAST)
    with pytest.raises(ValueError):
        focal_acq(small_data, 0, FAST)
