import numpy as np
import pytest

from stgeom.fusion import (
    FusionConfig,
    cross_time_local_fusion,
    cross_view_global_fusion,
    init_ctlf,
    init_cvgf,
    window_index,
)
from stgeom.grid_masks import GridLayout, TokenGrid, build_spatial_mask, build_temporal_mask
from stgeom.numerics import Tensor, finite_diff_check
from stgeom.numerics.tensor import tsum

MICRO = FusionConfig(L=2, S=3, d=8, heads=2)


def make(V, T, P, cfg=MICRO, seed=0, tokens=None):
    rng = np.random.default_rng(seed)
    p = {**init_cvgf(rng, cfg), **init_ctlf(rng, cfg)}
    L = GridLayout(V, T, 1, P, "multi-s" if V > 1 else "mono-d")
    tok = rng.normal(size=(V, T, P, cfg.d))
    if tokens is not None:
        tok = tokens
    grid = TokenGrid(L, Tensor(tok), Tensor(rng.normal(0, 0.3, (8, cfg.d))),
                     Tensor(rng.normal(0, 0.3, (32, cfg.d))))
    return grid, p


def test_config_validation():
    with pytest.raises(ValueError):
        FusionConfig(S=4)
    with pytest.raises(ValueError):
        FusionConfig(d=10, heads=4)
    with pytest.raises(ValueError):
        FusionConfig(L=0)


def test_output_shapes():
    cfg = FusionConfig(L=1, d=64, heads=4)
    grid, p = make(2, 3, 16, cfg)
    L = grid.layout
    assert cross_view_global_fusion(grid, build_spatial_mask(L), cfg, p).shape == (2, 3, 16, 64)
    assert cross_time_local_fusion(grid, build_temporal_mask(L, 3), cfg, p).shape == (2, 3, 16, 64)


def test_mask_kind_and_layout_checks():
    grid, p = make(2, 3, 2)
    L = grid.layout
    with pytest.raises(ValueError):
        cross_view_global_fusion(grid, build_temporal_mask(L, 3), MICRO, p)
    with pytest.raises(ValueError):
        cross_time_local_fusion(grid, build_spatial_mask(L), MICRO, p)
    with pytest.raises(ValueError):
        cross_time_local_fusion(grid, build_temporal_mask(L, 1), MICRO, p)
    other = GridLayout(2, 2, 1, 2)
    with pytest.raises(ValueError):
        cross_view_global_fusion(grid, build_spatial_mask(other), MICRO, p)


def test_cvgf_single_frame_intra_equals_inter():
    grid, p = make(1, 1, 4)
    L = grid.layout
    m = build_spatial_mask(L)
    assert m.bits.all()
    out = cross_view_global_fusion(grid, m, MICRO, p)
    assert np.isfinite(out.data).all()


@pytest.mark.parametrize("trial", range(5))
def test_cvgf_time_locality(trial):
    rng = np.random.default_rng(trial)
    grid, p = make(2, 3, 2, seed=trial)
    L = grid.layout
    base = cross_view_global_fusion(grid, build_spatial_mask(L), MICRO, p).data
    t_pert = int(rng.integers(3))
    tok = grid.patch_tokens.data.copy()
    tok[:, t_pert] += rng.choice([-1e6, 1e6]) * rng.random(tok[:, t_pert].shape)
    g2, _ = make(2, 3, 2, seed=trial, tokens=tok)
    out = cross_view_global_fusion(g2, build_spatial_mask(L), MICRO, p).data
    for t in range(3):
        if t != t_pert:
            assert out[:, t].tobytes() == base[:, t].tobytes()
    assert not np.array_equal(out[:, t_pert], base[:, t_pert])


@pytest.mark.parametrize("trial", range(5))
def test_ctlf_tube_locality(trial):
    rng = np.random.default_rng(100 + trial)
    V, T, P = 2, 5, 2
    grid, p = make(V, T, P, seed=trial)
    m = build_temporal_mask(grid.layout, 3)
    base = cross_time_local_fusion(grid, m, MICRO, p).data
    v, t, q = (int(rng.integers(n)) for n in (V, T, P))
    tok = grid.patch_tokens.data.copy()
    tok[v, t, q] += 1e6
    g2, _ = make(V, T, P, seed=trial, tokens=tok)
    out = cross_time_local_fusion(g2, m, MICRO, p).data
    for vv in range(V):
        for tt in range(T):
            for qq in range(P):
                inside = vv == v and qq == q and abs(tt - t) <= 1
                same = out[vv, tt, qq].tobytes() == base[vv, tt, qq].tobytes()
                assert same != inside


def test_ctlf_single_step_window():
    grid, p = make(1, 1, 3)
    out = cross_time_local_fusion(grid, build_temporal_mask(grid.layout, 3), MICRO, p)
    assert out.shape == (1, 1, 3, 8)


def test_window_index_clamps_at_sequence_ends():
    L = GridLayout(1, 5, 1, 1, "mono-d")
    idx, valid, self_slot = window_index(build_temporal_mask(L, 3).bits)
    assert idx.shape == (5, 3)
    assert valid[0].sum() == 2 and idx[0, :2].tolist() == [0, 1]
    assert valid[2].all() and idx[2].tolist() == [1, 2, 3]
    assert valid[4].sum() == 2 and idx[4, :2].tolist() == [3, 4]
    assert self_slot.tolist() == [0, 1, 1, 1, 1]


def test_ctlf_single_kv_variant_runs_and_differs():
    grid, p = make(1, 4, 2)
    m = build_temporal_mask(grid.layout, 3)
    a = cross_time_local_fusion(grid, m, MICRO, p).data
    cfg = FusionConfig(L=2, S=3, d=8, heads=2, ctlf_single_kv=True)
    b = cross_time_local_fusion(grid, m, cfg, p).data
    assert a.shape == b.shape and not np.array_equal(a, b)


def test_cvgf_zero_view_embedding_makes_views_identical():
    rng = np.random.default_rng(5)
    one = rng.normal(size=(1, 3, 2, 8))
    grid, p = make(2, 3, 2, tokens=np.concatenate([one, one]))
    grid.view_embed = Tensor(np.zeros((8, 8)))
    out = cross_view_global_fusion(grid, build_spatial_mask(grid.layout), MICRO, p).data
    assert out[0].tobytes() == out[1].tobytes()


def test_both_modules_deterministic():
    grid, p = make(2, 3, 2)
    L = grid.layout
    a = cross_time_local_fusion(grid, build_temporal_mask(L, 3), MICRO, p).data
    b = cross_time_local_fusion(grid, build_temporal_mask(L, 3), MICRO, p).data
    assert a.tobytes() == b.tobytes()


def test_fusion_gradient_check_micro_config():
    grid, p = make(2, 3, 4)
    L = grid.layout
    grid.patch_tokens = Tensor(grid.patch_tokens.data, requires_grad=True)
    w = np.random.default_rng(1).normal(size=(2, 3, 4, 8))
    sp, tm = build_spatial_mask(L), build_temporal_mask(L, 3)

    def loss():
        fs = cross_view_global_fusion(grid, sp, MICRO, p)
        ft = cross_time_local_fusion(grid, tm, MICRO, p)
        return tsum((fs + ft * 0.5) * w)

    params = {"tokens": grid.patch_tokens, **p}
    err = finite_diff_check(loss, params, entries=6, rng=np.random.default_rng(0))
    assert err < 1e-4
