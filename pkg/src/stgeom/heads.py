"""Task heads: camera, dense decoder (depth / mask / point map) and tracking."""
from dataclasses import dataclass

import numpy as np

from .numerics.functional import (
    feed_forward,
    init_linear,
    layer_norm,
    multi_head_attention,
    ones,
    silu,
    zeros,
)
from .numerics.tensor import (
    Tensor,
    as_tensor,
    clip,
    concat,
    getitem,
    masked_softmax,
    pad,
    sigmoid,
    softplus,
    stack,
    tsum,
)

SOFTARGMAX_TEMPERATURE = 0.1
FOCAL_INIT = 0.9


@dataclass(frozen=True)
class HeadConfig:
    d: int = 64
    heads: int = 4
    dense_dim: int = 16
    track_dim: int = 16
    patch: int = 8
    temperature: float = SOFTARGMAX_TEMPERATURE


@dataclass
class TrackSet:
    """Query pixels in a source frame and their per-frame 2D/3D tracks."""
    queries: np.ndarray        # [N, 2] (u, v) pixels
    tracks_2d: np.ndarray      # [T, N, 2]
    tracks_3d: np.ndarray      # [T, N, 3]
    source_frame: int = 0

    @property
    def N(self):
        return self.queries.shape[0]

    @property
    def T(self):
        return self.tracks_2d.shape[0]


def _inv_softplus(y):
    return float(np.log(np.expm1(y)))


# ------------------------------------------------------------------ camera


def init_camera_head(rng, cfg):
    d = cfg.d
    p = {}
    for b in range(2):
        pre = f"head_cam.{b}."
        p[pre + "attn.ln_g"], p[pre + "attn.ln_b"] = ones(d), zeros(d)
        for w in ("wq", "wk", "wv"):
            p[pre + "attn." + w] = init_linear(rng, d, d)
        p[pre + "attn.wo"] = init_linear(rng, d, d, 0.5)
        p[pre + "attn.bo"] = zeros(d)
        p[pre + "ffn.ln_g"], p[pre + "ffn.ln_b"] = ones(d), zeros(d)
        p[pre + "ffn.w1"], p[pre + "ffn.b1"] = init_linear(rng, d, 4 * d), zeros(4 * d)
        p[pre + "ffn.w2"], p[pre + "ffn.b2"] = init_linear(rng, 4 * d, d, 0.5), zeros(d)
    p["head_cam.out_g"], p["head_cam.out_b"] = ones(d), zeros(d)
    p["head_cam.out_w"] = init_linear(rng, d, 9, 0.1)
    bias = np.zeros(9)
    bias[0] = 1.0
    bias[7:9] = _inv_softplus(FOCAL_INIT)
    p["head_cam.out_bias"] = Tensor(bias, requires_grad=True)
    return p


def encode_camera(raw):
    """Map raw 9-vectors to (unit quaternion, translation, focal).

    The quaternion is normalised and flipped onto the non-negative scalar
    half; focal lengths pass through softplus.
    """
    raw = as_tensor(raw)
    q = raw[..., 0:4]
    q = q * tsum(q * q, axis=-1, keepdims=True) ** -0.5
    sign = np.where(q.data[..., :1] < 0, -1.0, 1.0)
    q = q * sign
    return concat([q, raw[..., 4:7], softplus(raw[..., 7:9])], axis=-1)


def camera_head(F_S, params, heads, ident=None):
    """Camera parameters ``[V, T, 9]`` from spatial features ``[V, T, P, d]``.

    Patch tokens of a frame are mean-pooled into one descriptor; ``ident``
    (``[V, T, d]`` view+time identifiers) is added when given so the head can
    tell which frame anchors the coordinate system.
    """
    V, T, P, d = F_S.shape
    x = F_S.mean(axis=2)
    if ident is not None:
        x = x + ident
    x = x.reshape(V * T, d)
    for b in range(2):
        pre = f"head_cam.{b}."
        h = layer_norm(x, params[pre + "attn.ln_g"], params[pre + "attn.ln_b"])
        proj = {k: params[pre + "attn." + k] for k in ("wq", "wk", "wv", "wo", "bo")}
        x = x + multi_head_attention(h, h, h, None, heads, proj)
        x = x + feed_forward(layer_norm(x, params[pre + "ffn.ln_g"], params[pre + "ffn.ln_b"]),
                             params, pre + "ffn.")
    x = layer_norm(x, params["head_cam.out_g"], params["head_cam.out_b"])
    raw = x @ params["head_cam.out_w"] + params["head_cam.out_bias"]
    return encode_camera(raw).reshape(V, T, 9)


def quat_to_rotmat(q):
    """Unit quaternions ``[..., 4]`` (w, x, y, z) to rotation matrices ``[..., 3, 3]``."""
    w, x, y, z = (q[..., i] for i in range(4))
    rows = [
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ]
    return stack([stack(r, axis=-1) for r in rows], axis=-2)


# ------------------------------------------------------------------- dense


def bilinear_matrix(n_out, n_in):
    """Half-pixel-centred linear interpolation matrix ``[n_out, n_in]``."""
    src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    A = np.zeros((n_out, n_in))
    A[np.arange(n_out), lo] += 1.0 - frac
    A[np.arange(n_out), hi] += frac
    return A


def init_dense_head(rng, cfg):
    c_in, c1, c2 = 2 * cfg.d, 2 * cfg.dense_dim, cfg.dense_dim
    p = {
        "head_dense.up1_w": init_linear(rng, c_in, 4 * c1), "head_dense.up1_b": zeros(c1),
        "head_dense.ref1_w": init_linear(rng, 9 * c1, c1, 0.5), "head_dense.ref1_b": zeros(c1),
        "head_dense.up2_w": init_linear(rng, c1, 4 * c2), "head_dense.up2_b": zeros(c2),
        "head_dense.ref2_w": init_linear(rng, 9 * c2, c2, 0.5), "head_dense.ref2_b": zeros(c2),
        "head_dense.depth_w": init_linear(rng, c2, 1, 0.1),
        "head_dense.depth_b": Tensor([_inv_softplus(4.0)], requires_grad=True),
        "head_dense.mask_w": init_linear(rng, c2, 1, 0.1), "head_dense.mask_b": zeros(1),
        "head_dense.point_w": init_linear(rng, c2, 3, 0.1),
        "head_dense.point_b": Tensor([0.0, 0.0, 4.0], requires_grad=True),
    }
    return p


def _upsample2(x, w, b):
    B, h, wd, _ = x.shape
    C = b.shape[0]
    y = (x @ w).reshape(B, h, wd, 2, 2, C).transpose(0, 1, 3, 2, 4, 5)
    return y.reshape(B, 2 * h, 2 * wd, C) + b


def conv3x3(x, w, b):
    """Same-padded 3x3 convolution on channel-last maps via shifted slices."""
    B, H, W, C = x.shape
    xp = pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = [xp[:, i:i + H, j:j + W, :] for i in range(3) for j in range(3)]
    return concat(cols, axis=-1) @ w + b


def dense_decoder(F_S, F_T, params, grid_shape, patch=8):
    """Full-resolution dense features ``F_D`` ``[V*T, H, W, C]`` (channel-last).

    Token features are concatenated, laid out on the patch grid, upsampled
    twice by learned stride-2 blocks with 3x3 refinement and finally
    interpolated bilinearly to image size.
    """
    if F_S.shape != F_T.shape:
        raise ValueError(f"F_S {F_S.shape} and F_T {F_T.shape} differ")
    if patch % 4:
        raise ValueError("patch size must be divisible by 4")
    V, T, P, d = F_S.shape
    rows, cols = grid_shape
    if rows * cols != P:
        raise ValueError(f"{P} tokens cannot be laid out on a {rows}x{cols} patch grid")
    x = concat([F_S, F_T], axis=-1).reshape(V * T, rows, cols, 2 * d)
    p = params
    x = silu(_upsample2(x, p["head_dense.up1_w"], p["head_dense.up1_b"]))
    x = x + conv3x3(x, p["head_dense.ref1_w"], p["head_dense.ref1_b"])
    x = silu(_upsample2(x, p["head_dense.up2_w"], p["head_dense.up2_b"]))
    x = x + conv3x3(x, p["head_dense.ref2_w"], p["head_dense.ref2_b"])
    scale = patch // 4
    if scale == 1:
        return x
    h, w = 4 * rows, 4 * cols
    Ah = Tensor(bilinear_matrix(h * scale, h))
    Aw = Tensor(bilinear_matrix(w * scale, w).T.copy())
    y = Ah @ x.transpose(0, 3, 1, 2) @ Aw
    return y.transpose(0, 2, 3, 1)


def depth_head(F_D, params):
    return softplus(F_D @ params["head_dense.depth_w"] + params["head_dense.depth_b"])[..., 0]


def mask_head(F_D, params):
    return sigmoid(F_D @ params["head_dense.mask_w"] + params["head_dense.mask_b"])[..., 0]


def point_head(F_D, params):
    return (F_D @ params["head_dense.point_w"] + params["head_dense.point_b"]).transpose(0, 3, 1, 2)


# ---------------------------------------------------------------- tracking


def init_track_head(rng, cfg):
    return {
        "head_track.coarse_w": init_linear(rng, cfg.d, cfg.track_dim),
        "head_track.fine_w": init_linear(rng, cfg.dense_dim, cfg.track_dim),
    }


def _l2_normalize(x):
    return x * (tsum(x * x, axis=-1, keepdims=True) + 1e-12) ** -0.5


def bilinear_sample(fmap, coords):
    """Sample ``fmap [B, h, w, C]`` at ``coords [B, N, 2]`` (x, y) in cell units.

    Coordinates are clamped to the map; gradients reach both the map and,
    when ``coords`` is a Tensor, the coordinates.
    """
    coords = as_tensor(coords)
    B, h, w, _ = fmap.shape
    x = clip(coords[..., 0], 0.0, w - 1) if w > 1 else coords[..., 0] * 0.0
    y = clip(coords[..., 1], 0.0, h - 1) if h > 1 else coords[..., 1] * 0.0
    x0 = np.clip(np.floor(x.data), 0, max(w - 2, 0)).astype(int)
    y0 = np.clip(np.floor(y.data), 0, max(h - 2, 0)).astype(int)
    x1, y1 = np.minimum(x0 + 1, w - 1), np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    b = np.arange(B)[:, None]
    f00, f01 = fmap[b, y0, x0], fmap[b, y0, x1]
    f10, f11 = fmap[b, y1, x0], fmap[b, y1, x1]
    top = f00 + (f01 - f00) * fx
    bot = f10 + (f11 - f10) * fx
    return top + (bot - top) * fy


def token_centers(rows, cols, patch):
    j, i = np.meshgrid(np.arange(cols), np.arange(rows))
    return np.stack([(j.ravel() + 0.5) * patch - 0.5, (i.ravel() + 0.5) * patch - 0.5], axis=-1)


def soft_argmax(scores, coords, temperature):
    """Expected coordinate under ``softmax(scores / temperature)``."""
    w = masked_softmax(scores * (1.0 / temperature))
    return w @ coords


def unproject_pixels(uv, depth, cameras, H, W):
    """Back-project pixels through predicted depth and cameras.

    ``uv [T, N, 2]``, ``depth [T, N]``, ``cameras [T, 9]`` (world-to-camera
    quaternion, translation, normalised focal). Returns ``[T, N, 3]`` in the
    reference frame.
    """
    uv, depth, cameras = as_tensor(uv), as_tensor(depth), as_tensor(cameras)
    R = quat_to_rotmat(cameras[:, 0:4])
    t = cameras[:, 4:7].reshape(-1, 1, 3)
    fx = cameras[:, 7:8] * float(W)
    fy = cameras[:, 8:9] * float(H)
    cx, cy = (W - 1) / 2.0, (H - 1) / 2.0
    rx = (uv[..., 0] - cx) / fx
    ry = (uv[..., 1] - cy) / fy
    ray = stack([rx, ry, Tensor(np.ones(rx.shape))], axis=-1)
    p_cam = ray * depth[..., None]
    return (p_cam - t) @ R


def tracking_head(F_T, F_D, queries, cameras, depth, params, patch, grid_shape,
                  view=0, source_frame=0, temperature=SOFTARGMAX_TEMPERATURE):
    """Coarse-to-fine 2D tracks plus 3D tracks for one view.

    ``F_T [V, T, P, d]``; ``F_D [V*T, H, W, C]``; ``queries [N, 2]`` pixels
    in ``source_frame``; ``cameras [V, T, 9]``; ``depth [V*T, H, W]``.
    Returns a dict with ``coarse`` and ``fine`` ``[T, N, 2]`` and ``xyz``
    ``[T, N, 3]``.
    """
    V, T, P, d = F_T.shape
    rows, cols = grid_shape
    H, W = rows * patch, cols * patch
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim != 2 or queries.shape[1] != 2:
        raise ValueError("queries must be [N, 2]")
    if (queries < 0).any() or (queries[:, 0] > W - 1).any() or (queries[:, 1] > H - 1).any():
        raise ValueError("query outside source frame bounds")
    N = queries.shape[0]
    frames = slice(view * T, (view + 1) * T)

    # coarse: correlate against token maps
    keys = _l2_normalize(F_T[view] @ params["head_track.coarse_w"])          # [T, P, c]
    kmap = keys.reshape(T, rows, cols, -1)
    qcell = ((queries + 0.5) / patch - 0.5)[None]
    qc = _l2_normalize(bilinear_sample(kmap[source_frame:source_frame + 1], qcell))[0]
    scores = qc[None] @ keys.transpose(0, 2, 1)                              # [T, N, P]
    coarse = soft_argmax(scores, Tensor(token_centers(rows, cols, patch)), temperature)

    # fine: correlate inside a 3x3-token-sized window of the dense map
    dmap = _l2_normalize(F_D[frames] @ params["head_track.fine_w"])           # [T, H, W, c]
    qf = _l2_normalize(bilinear_sample(dmap[source_frame:source_frame + 1], queries[None]))[0]
    wh, ww = min(3 * patch, H), min(3 * patch, W)
    # window centred on the coarse estimate so the soft-argmax prior sits there
    r0 = np.clip(np.rint(coarse.data[..., 1]).astype(int) - wh // 2, 0, H - wh)
    c0 = np.clip(np.rint(coarse.data[..., 0]).astype(int) - ww // 2, 0, W - ww)
    ry = r0[..., None] + np.arange(wh)                                       # [T, N, wh]
    rx = c0[..., None] + np.arange(ww)
    tt = np.arange(T)[:, None, None, None]
    win = dmap[tt, ry[..., :, None], rx[..., None, :]].reshape(T, N, wh * ww, -1)
    fine_scores = tsum(win * qf[None, :, None, :], axis=-1)                   # [T, N, K]
    wcoords = np.stack(np.broadcast_arrays(rx[..., None, :], ry[..., :, None]), axis=-1)
    wcoords = wcoords.reshape(T, N, wh * ww, 2).astype(np.float64)
    w = masked_softmax(fine_scores * (1.0 / temperature))
    fine = tsum(w[..., None] * Tensor(wcoords), axis=-2)

    # 3D: unproject through predicted depth and camera
    d_at = bilinear_sample(depth[frames][..., None], fine)[..., 0]
    xyz = unproject_pixels(fine, d_at, cameras[view], H, W)
    return {"coarse": coarse, "fine": fine, "xyz": xyz}
