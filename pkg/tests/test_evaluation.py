import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import surgidepth.evaluation as ev
from surgidepth.depthmap import DepthMap
from surgidepth.errors import ProtocolError
from surgidepth.evaluation import (
    compute_metrics,
    evaluate_dataset,
    evaluate_images,
    evaluate_pair,
    lower_median,
    median_scale,
)

HAND = (0.25, 0.25, np.sqrt(0.5), np.sqrt(np.log(2) ** 2 / 2), 0.5)


def test_hand_metrics():
    r = compute_metrics(np.array([[1.0, 2.0]]), np.array([[2.0, 2.0]]))
    assert np.allclose(r.as_tuple(), HAND, rtol=0, atol=1e-12)
    assert np.allclose(r.as_tuple(), (0.25, 0.25, 0.7071, 0.4901, 0.5), atol=1e-4)
    assert r.n_pixels == 2


def test_perfect_and_threshold_side():
    gt = np.random.default_rng(0).uniform(10, 100, (5, 5))
    assert compute_metrics(gt, gt).as_tuple() == (0.0, 0.0, 0.0, 0.0, 1.0)
    assert compute_metrics(1.2 * gt, gt).delta == 1.0
    assert compute_metrics(1.3 * gt, gt).delta == 0.0


def test_median_scale_examples():
    out = median_scale(np.array([[2.0, 4.0, 6.0]]), np.array([[1.0, 2.0, 3.0]]))
    assert np.array_equal(out.values, [[1.0, 2.0, 3.0]])
    gt = np.random.default_rng(1).uniform(10, 100, (4, 4))
    assert np.array_equal(median_scale(gt, gt).values, gt)
    assert np.allclose(median_scale(2 * gt, gt).values, gt, rtol=1e-15)
    assert lower_median([4.0, 1.0, 3.0, 2.0]) == 2.0
    with pytest.raises(ProtocolError):
        median_scale(np.ones((2, 2)), np.zeros((2, 2)))


def test_median_uses_joint_mask():
    pred = DepthMap(np.array([[1.0, 2.0, 100.0]]), np.array([[True, True, False]]))
    gt = DepthMap(np.array([[4.0, 4.0, 4.0]]), np.ones((1, 3), bool))
    assert np.array_equal(median_scale(pred, gt).values[0, :2], [4.0, 8.0])


def test_cap_applies_to_both_maps():
    pred = np.array([[100.0, 400.0]])
    gt = np.array([[100.0, 200.0]])
    # median factor is 1; both 400 and 200 clamp to 150, so the pair is perfect
    assert evaluate_pair(pred, gt).as_tuple() == (0.0, 0.0, 0.0, 0.0, 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.1, 3.0, 0.37, 12.5]))
def test_protocol_scale_invariance(seed, alpha):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(20, 150, (8, 8))
    pred = gt * rng.uniform(0.5, 1.5, (8, 8))
    a = evaluate_dataset([(pred, gt)]).as_tuple()
    b = evaluate_dataset([(alpha * pred, gt)]).as_tuple()
    assert np.allclose(a, b, rtol=1e-12, atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_delta_symmetric(seed):
    rng = np.random.default_rng(seed)
    p, g = rng.uniform(1, 3, (6, 6)), rng.uniform(1, 3, (6, 6))
    assert compute_metrics(p, g).delta == compute_metrics(g, p).delta


def test_dataset_means():
    rng = np.random.default_rng(2)
    pairs = [(rng.uniform(20, 150, (6, 6)), rng.uniform(20, 150, (6, 6))) for _ in range(2)]
    one = evaluate_pair(*pairs[0])
    assert evaluate_dataset(pairs[:1]).as_tuple() == one.as_tuple()
    assert np.allclose(evaluate_dataset([pairs[0], pairs[0]]).as_tuple(), one.as_tuple(), rtol=1e-15)
    two = evaluate_pair(*pairs[1])
    expected = [(x + y) / 2 for x, y in zip(one.as_tuple(), two.as_tuple())]
    assert np.allclose(evaluate_dataset(pairs).as_tuple(), expected, rtol=1e-15)


def test_error_names_the_image():
    good = (np.ones((2, 2)), np.ones((2, 2)))
    bad = (np.ones((2, 2)), np.zeros((2, 2)))
    with pytest.raises(ProtocolError, match="frame_b"):
        evaluate_dataset([good, bad], names=["frame_a", "frame_b"])
    with pytest.raises(ProtocolError):
        evaluate_dataset([])


def test_threaded_evaluation_matches_serial(monkeypatch):
    rng = np.random.default_rng(3)
    pairs = [(rng.uniform(20, 150, (10, 10)), rng.uniform(20, 150, (10, 10))) for _ in range(12)]
    serial = evaluate_images(pairs, workers=1)
    seen = set()
    original = ev.evaluate_pair

    def spy(*a, **k):
        seen.add(threading.get_ident())
        return original(*a, **k)

    monkeypatch.setattr(ev, "evaluate_pair", spy)
    monkeypatch.setenv("SURGIDEPTH_THREADS", "4")
    threaded = evaluate_images(pairs)
    assert [r.as_tuple() for r in threaded] == [r.as_tuple() for r in serial]
    assert threading.get_ident() not in seen
