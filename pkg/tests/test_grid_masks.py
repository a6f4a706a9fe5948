import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from stgeom.grid_masks import (
    CameraSetting,
    GridLayout,
    MaskKind,
    SamplePolicy,
    build_grid,
    build_spatial_mask,
    build_temporal_mask,
    draw_subgrid,
    format_mask,
    frame_mask,
    parse_mask,
    patchify,
    sample_subgrid,
    take_subgrid,
)
from stgeom.pipeline.model import ModelConfig, init_params

layouts = st.builds(lambda V, T, P: GridLayout(V, T, 1, P, "multi-s"),
                    st.integers(1, 6), st.integers(1, 6), st.integers(1, 4))


@pytest.fixture(scope="module")
def enc_params():
    return init_params(ModelConfig(d=8, heads=2, L=1), 0).tensors


def test_layout_validation():
    with pytest.raises(ValueError):
        GridLayout(2, 3, 2, 2, "mono-d")
    with pytest.raises(ValueError):
        GridLayout(1, 0, 2, 2, "mono-s")
    L = GridLayout(2, 3, 4, 4, CameraSetting.MULTI_STATIC)
    assert (L.P, L.n) == (16, 96)
    for k in range(L.n):
        assert L.flat_id(*L.cell_of(k)) == k


def test_build_grid_token_counts(enc_params, rng):
    frames = rng.random((2, 3, 32, 32, 3))
    g = build_grid(frames, GridLayout(2, 3, 4, 4), enc_params)
    assert g.layout.P == 16 and g.flat_tokens().shape == (96, 8)
    one = build_grid(frames[:1, :1], GridLayout(1, 1, 4, 4, "mono-s"), enc_params)
    assert one.flat_tokens().shape == (16, 8)


def test_build_grid_identical_frames_give_identical_tokens(enc_params, rng):
    f = rng.random((16, 16, 3))
    frames = np.stack([np.stack([f, f]), np.stack([f, f])])
    g = build_grid(frames, GridLayout(2, 2, 2, 2), enc_params)
    tok = g.patch_tokens.data
    assert all(np.array_equal(tok[0, 0], tok[v, t]) for v in range(2) for t in range(2))
    assert not np.array_equal(g.view_tokens().data[0], g.view_tokens().data[1])


def test_build_grid_errors(enc_params, rng):
    with pytest.raises(ValueError):
        build_grid(rng.random((1, 1, 30, 32, 3)), GridLayout(1, 1, 4, 4, "mono-s"), enc_params)
    with pytest.raises(ValueError):
        build_grid(rng.random((9, 1, 8, 8, 3)), GridLayout(9, 1, 1, 1), enc_params)


def test_patchify_layout(rng):
    img = rng.random((1, 1, 16, 16, 3))
    p = patchify(img, 8)
    np.testing.assert_array_equal(p[0, 0, 1], img[0, 0, 0:8, 8:16].reshape(-1))
    np.testing.assert_array_equal(p[0, 0, 2], img[0, 0, 8:16, 0:8].reshape(-1))


def _grid(rng, enc_params, V, T):
    return build_grid(rng.random((V, T, 16, 16, 3)), GridLayout(V, T, 2, 2), enc_params)


def test_subgrid_full_policy_is_identity(enc_params, rng):
    g = _grid(rng, enc_params, 3, 5)
    pol = SamplePolicy(3, 3, 5, 5)
    s = sample_subgrid(g, pol, np.random.default_rng(0))
    assert s.layout == g.layout
    assert s.patch_tokens.data.tobytes() == g.patch_tokens.data.tobytes()


def test_subgrid_index_mapping(enc_params, rng):
    g = _grid(rng, enc_params, 3, 5)
    s = take_subgrid(g, [0, 2], [1, 2, 3])
    assert (s.layout.V, s.layout.T) == (2, 3)
    for i, v in enumerate([0, 2]):
        for j, t in enumerate([1, 2, 3]):
            np.testing.assert_array_equal(s.patch_tokens.data[i, j], g.patch_tokens.data[v, t])
    np.testing.assert_array_equal(s.source_views, [0, 2])
    np.testing.assert_array_equal(s.source_times, [1, 2, 3])


@given(st.integers(1, 6), st.integers(1, 8), st.integers(0, 1000))
def test_draw_subgrid_respects_policy(V, T, seed):
    pol = SamplePolicy(1, V, 1, T, seed)
    a = draw_subgrid(V, T, pol, np.random.default_rng(seed))
    b = draw_subgrid(V, T, pol, np.random.default_rng(seed))
    views, times = a
    assert 1 <= len(views) <= V and 1 <= len(times) <= T
    assert np.all(np.diff(times) == 1) and len(set(views)) == len(views)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_policy_rejects_impossible_bounds():
    with pytest.raises(ValueError):
        SamplePolicy(min_views=3).bounds(2, 4)


def test_spatial_mask_examples():
    m = build_spatial_mask(GridLayout(2, 2, 1, 1))
    expect = np.array([[1, 0, 1, 0], [0, 1, 0, 1], [1, 0, 1, 0], [0, 1, 0, 1]], bool)
    np.testing.assert_array_equal(m.bits, expect)
    assert build_spatial_mask(GridLayout(1, 1, 1, 1, "mono-s")).bits.tolist() == [[True]]


def test_spatial_mask_block_structure_after_time_major_permutation():
    L = GridLayout(3, 4, 1, 2)
    v, t, p = L.coords()
    order = np.lexsort((p, v, t))
    bits = build_spatial_mask(L).bits[np.ix_(order, order)]
    block = L.V * L.P
    expect = np.kron(np.eye(L.T, dtype=bool), np.ones((block, block), bool))
    np.testing.assert_array_equal(bits, expect)


def test_temporal_mask_examples():
    m = build_temporal_mask(GridLayout(1, 4, 1, 1, "mono-d"), 3).bits
    np.testing.assert_array_equal(m, np.abs(np.subtract.outer(range(4), range(4))) <= 1)
    L = GridLayout(2, 3, 1, 2)
    np.testing.assert_array_equal(build_temporal_mask(L, 1).bits, np.eye(L.n, dtype=bool))
    sat = build_temporal_mask(L, 5).bits
    np.testing.assert_array_equal(sat, oracles.brute_mask(
        2, 3, 2, lambda a, b: a[0] == b[0] and a[2] == b[2]))
    with pytest.raises(ValueError):
        build_temporal_mask(L, 2)


@given(layouts, st.sampled_from([1, 3, 5]))
def test_mask_invariants(L, S):
    sp, tm = build_spatial_mask(L), build_temporal_mask(L, S)
    for m in (sp, tm):
        assert m.bits.diagonal().all()
        np.testing.assert_array_equal(m.bits, m.bits.T)
    both = sp.bits & tm.bits
    v, t, p = L.coords()
    same_cell = ((v[:, None] == v) & (t[:, None] == t) & (p[:, None] == p))
    np.testing.assert_array_equal(both, same_cell)
    assert build_temporal_mask(L, S) == tm
    assert (frame_mask(L) <= sp.bits).all()


def test_six_masks_per_setting_family():
    masks = {}
    for setting, V in (("mono-s", 1), ("mono-d", 1), ("multi-s", 2)):
        L = GridLayout(V, 3, 1, 2, setting)
        masks[(setting, "spatial")] = build_spatial_mask(L)
        masks[(setting, "temporal")] = build_temporal_mask(L, 3)
    assert len(masks) == 6
    np.testing.assert_array_equal(masks[("mono-s", "spatial")].bits,
                                  masks[("mono-d", "spatial")].bits)
    assert masks[("mono-s", "spatial")] != masks[("mono-d", "spatial")]


def test_mask_text_roundtrip():
    L = GridLayout(2, 3, 1, 2, "multi-s")
    m = build_temporal_mask(L, 3)
    text = format_mask(m, 3, "multi-s")
    assert text.splitlines()[0] == "2 3 2 3 multi-s temporal"
    header, bits = parse_mask(text)
    np.testing.assert_array_equal(bits, m.bits)
    assert header["kind"] is MaskKind.TEMPORAL and header["S"] == 3
