import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from stgeom.heads import TrackSet
from stgeom.losses import (
    LossWeights,
    camera_loss,
    chamfer,
    depth_loss,
    huber,
    mask_loss,
    point_loss,
    total_loss,
    tracking_loss,
)
from stgeom.numerics import Tensor, finite_diff_check


def val(x):
    return float(x.data)


@pytest.mark.parametrize("r,expect", [(0.5, 0.125), (2.0, 1.5), (-2.0, 1.5), (0.0, 0.0)])
def test_huber_examples(r, expect):
    assert val(huber(Tensor(np.array(r)), 1.0)) == expect


@given(st.floats(-50, 50), st.floats(0.1, 5))
def test_huber_matches_closed_form(r, delta):
    assert math.isclose(val(huber(Tensor(np.array(r)), delta)), oracles.huber(r, delta),
                        rel_tol=1e-12, abs_tol=1e-15)


def test_camera_loss_examples(rng):
    g = rng.normal(size=(2, 3, 9))
    assert val(camera_loss(Tensor(g), g)) == 0
    p = g.copy()
    p[0, 0, 4] += 2.0
    assert math.isclose(val(camera_loss(Tensor(p), g, sum_reduction=True)), 1.5)
    assert math.isclose(val(camera_loss(Tensor(p), g)), 1.5 / 6)
    with pytest.raises(ValueError):
        camera_loss(Tensor(g[:1]), g)


def test_depth_loss_examples(rng):
    gt = rng.random((2, 4, 5)) + 1
    valid = np.ones(gt.shape, bool)
    assert val(depth_loss(Tensor(gt), gt, valid)) == 0
    assert math.isclose(val(depth_loss(Tensor(gt + 0.3), gt, valid)), 0.09, rel_tol=1e-12)
    # 2x1 image: pred [0, 1] vs gt [0, 0]
    out = depth_loss(Tensor(np.array([[0.0], [1.0]])), np.zeros((2, 1)), np.ones((2, 1), bool))
    assert math.isclose(val(out), 1.5)
    with pytest.raises(ValueError):
        depth_loss(Tensor(gt), gt, np.zeros(gt.shape, bool))


def test_depth_loss_sum_reduction():
    out = depth_loss(Tensor(np.array([[0.0], [1.0]])), np.zeros((2, 1)), np.ones((2, 1), bool),
                     sum_reduction=True)
    assert math.isclose(val(out), 2.0)


def test_point_loss_constant_channel_offset(rng):
    gt = rng.normal(size=(2, 3, 4, 4))
    off = np.array([0.1, -0.2, 0.3])[None, :, None, None]
    valid = np.ones((2, 4, 4), bool)
    assert val(point_loss(Tensor(gt), gt, valid)) == 0
    assert math.isclose(val(point_loss(Tensor(gt + off), gt, valid)), 0.14, rel_tol=1e-12)
    with pytest.raises(ValueError):
        point_loss(Tensor(gt), gt, np.zeros((2, 4, 4), bool))


def test_dense_losses_ignore_garbage_in_invalid_pixels(rng):
    gt = rng.random((2, 5, 5))
    valid = rng.random((2, 5, 5)) > 0.3
    pred = gt + rng.normal(0, 0.1, gt.shape)
    a = val(depth_loss(Tensor(pred), gt, valid))
    junk_pred = np.where(valid, pred, 1e6)
    junk_gt = np.where(valid, gt, -1e6)
    assert val(depth_loss(Tensor(junk_pred), junk_gt, valid)) == a
    gt3 = rng.random((2, 3, 5, 5))
    p3 = gt3 + rng.normal(0, 0.1, gt3.shape)
    b = val(point_loss(Tensor(p3), gt3, valid))
    junk = np.where(valid[:, None], p3, 1e6)
    assert val(point_loss(Tensor(junk), gt3, valid)) == b


def test_mask_loss_examples(rng):
    y = (rng.random((3, 4)) > 0.5).astype(float)
    assert abs(val(mask_loss(Tensor(np.full(y.shape, 0.5)), y)) - math.log(2)) < 1e-9
    assert val(mask_loss(Tensor(y), y)) <= 1e-6
    assert math.isclose(val(mask_loss(Tensor(np.array([0.9])), np.array([1.0]))), -math.log(0.9),
                        rel_tol=1e-12)
    with pytest.raises(ValueError):
        mask_loss(Tensor(np.full(3, 0.5)), np.array([0, 0.5, 1]))


def test_chamfer_examples(rng):
    assert val(chamfer(np.array([[0.0]]), np.array([[1.0]]))) == 2.0
    A, B = rng.normal(size=(5, 3)), rng.normal(size=(7, 3))
    assert math.isclose(val(chamfer(A, B)), oracles.chamfer_loop(A, B), rel_tol=1e-12)
    assert math.isclose(val(chamfer(A, B)), val(chamfer(B, A)), rel_tol=1e-14)
    assert val(chamfer(A, A[rng.permutation(5)])) == 0
    with pytest.raises(ValueError):
        chamfer(np.zeros((0, 2)), A[:, :2])


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 10_000))
def test_chamfer_permutation_invariance(n, m, seed):
    rng = np.random.default_rng(seed)
    A, B = rng.normal(size=(n, 2)), rng.normal(size=(m, 2))
    base = val(chamfer(A, B))
    assert base >= 0
    assert math.isclose(val(chamfer(A[rng.permutation(n)], B[rng.permutation(m)])), base,
                        rel_tol=1e-12, abs_tol=1e-15)


def _tracks(rng, T=3, N=4):
    return TrackSet(rng.uniform(0, 15, (N, 2)), rng.uniform(0, 15, (T, N, 2)),
                    rng.normal(size=(T, N, 3)))


def test_tracking_loss_zero_at_truth_and_modes(rng):
    gt = _tracks(rng)
    pred = {"fine": Tensor(gt.tracks_2d), "coarse": Tensor(gt.tracks_2d),
            "xyz": Tensor(gt.tracks_3d)}
    for mode in ("chamfer", "l2"):
        assert val(tracking_loss(pred, gt, (16, 16), mode)) == 0
    shuffled = {k: Tensor(v.data[:, ::-1]) for k, v in pred.items()}
    assert val(tracking_loss(shuffled, gt, (16, 16), "chamfer")) == 0
    assert val(tracking_loss(shuffled, gt, (16, 16), "l2")) > 0
    with pytest.raises(ValueError):
        tracking_loss(pred, gt, (16, 16), "l1")
    with pytest.raises(ValueError):
        tracking_loss({k: Tensor(v.data[:2]) for k, v in pred.items()}, gt, (16, 16))


def test_tracking_loss_frame_sum_against_oracle(rng):
    gt = _tracks(rng, T=2, N=3)
    p2, p3 = rng.uniform(0, 15, (2, 3, 2)), rng.normal(size=(2, 3, 3))
    pred = {"fine": Tensor(p2), "xyz": Tensor(p3)}
    expect = sum(oracles.chamfer_loop(p2[t] / 16, gt.tracks_2d[t] / 16)
                 + oracles.chamfer_loop(p3[t], gt.tracks_3d[t]) for t in range(2))
    out = tracking_loss(pred, gt, (16, 16), sum_reduction=True)
    assert math.isclose(val(out), expect, rel_tol=1e-12)


def test_total_loss_examples():
    ones = {t: Tensor(np.array(1.0)) for t in ("cam", "depth", "mask", "point", "track")}
    assert math.isclose(val(total_loss(ones, LossWeights()).total), 3.6, rel_tol=1e-12)
    zero = LossWeights(0, 0, 0, 0, 0)
    assert val(total_loss(ones, zero).total) == 0
    single = total_loss({"depth": Tensor(np.array(2.5))}, LossWeights())
    assert math.isclose(val(single.total), 0.8 * 2.5)
    assert LossWeights().only("mask").mask == 1 and LossWeights().only("mask").cam == 0
    with pytest.raises(ValueError):
        LossWeights(cam=-1)
    with pytest.raises(ValueError):
        LossWeights(huber_delta=0)


def test_total_loss_is_linear_in_each_component(rng):
    w = LossWeights()
    base = {t: float(rng.random()) for t in ("cam", "depth", "mask", "point", "track")}
    for task in base:
        comp = dict(base)
        t0 = val(total_loss({k: Tensor(np.array(v)) for k, v in comp.items()}, w).total)
        comp[task] += 0.5
        t1 = val(total_loss({k: Tensor(np.array(v)) for k, v in comp.items()}, w).total)
        assert math.isclose((t1 - t0) / 0.5, getattr(w, task), rel_tol=1e-9)
        r = total_loss({k: Tensor(np.array(v)) for k, v in comp.items()}, w)
        assert abs(sum(getattr(w, k) * v for k, v in r.floats().items() if k != "total")
                   - r.floats()["total"]) < 1e-12


def test_every_loss_passes_gradient_check(rng):
    gt = rng.random((2, 4, 4)) + 1
    valid = rng.random((2, 4, 4)) > 0.2
    P = Tensor(gt + rng.normal(0, 0.3, gt.shape), requires_grad=True)
    P3 = Tensor(rng.normal(size=(2, 3, 4, 4)), requires_grad=True)
    g3 = rng.normal(size=(2, 3, 4, 4))
    C = Tensor(rng.normal(size=(3, 9)), requires_grad=True)
    cg = rng.normal(size=(3, 9)) * 2
    M = Tensor(rng.uniform(0.1, 0.9, (2, 4, 4)), requires_grad=True)
    y = (rng.random((2, 4, 4)) > 0.5).astype(float)
    gt_tr = _tracks(rng)
    F2 = Tensor(rng.uniform(0, 15, (3, 4, 2)), requires_grad=True)
    F3 = Tensor(rng.normal(size=(3, 4, 3)), requires_grad=True)
    cases = [
        (lambda: camera_loss(C, cg), {"C": C}),
        (lambda: depth_loss(P, gt, valid), {"P": P}),
        (lambda: point_loss(P3, g3, valid), {"P3": P3}),
        (lambda: mask_loss(M, y), {"M": M}),
        (lambda: tracking_loss({"fine": F2, "xyz": F3}, gt_tr, (16, 16)), {"F2": F2, "F3": F3}),
        (lambda: tracking_loss({"fine": F2, "xyz": F3}, gt_tr, (16, 16), "l2"), {"F2": F2, "F3": F3}),
    ]
    for fn, params in cases:
        assert val(fn()) >= 0
        assert finite_diff_check(fn, params, eps=1e-6) < 1e-4
