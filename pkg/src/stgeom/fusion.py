"""Cross-view global fusion and cross-time local fusion."""
from dataclasses import dataclass

import numpy as np

from .grid_masks import MaskKind, frame_mask
from .numerics.functional import (
    feed_forward,
    gru_step,
    init_linear,
    layer_norm,
    multi_head_attention,
    ones,
    zeros,
)
from .numerics.tensor import Tensor, getitem, stack, where


@dataclass(frozen=True)
class FusionConfig:
    L: int = 4
    S: int = 3
    d: int = 64
    heads: int = 4
    ctlf_single_kv: bool = False
    ffn_mult: int = 4

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if self.S < 1 or self.S % 2 == 0:
            raise ValueError(f"S must be odd and >= 1, got {self.S}")
        if self.d % self.heads:
            raise ValueError(f"d={self.d} not divisible by heads={self.heads}")


def _attn_params(rng, prefix, d):
    return {
        prefix + "ln_g": ones(d), prefix + "ln_b": zeros(d),
        prefix + "wq": init_linear(rng, d, d), prefix + "wk": init_linear(rng, d, d),
        prefix + "wv": init_linear(rng, d, d), prefix + "wo": init_linear(rng, d, d, 0.5),
        prefix + "bo": zeros(d),
    }


def _ffn_params(rng, prefix, d, mult):
    return {
        prefix + "ln_g": ones(d), prefix + "ln_b": zeros(d),
        prefix + "w1": init_linear(rng, d, mult * d), prefix + "b1": zeros(mult * d),
        prefix + "w2": init_linear(rng, mult * d, d, 0.5), prefix + "b2": zeros(d),
    }


def _proj(p, prefix):
    return {k: p[prefix + k] for k in ("wq", "wk", "wv", "wo", "bo")}


def init_cvgf(rng, cfg):
    p = {}
    for layer in range(cfg.L):
        p.update(_attn_params(rng, f"cvgf.{layer}.intra.", cfg.d))
        p.update(_attn_params(rng, f"cvgf.{layer}.inter.", cfg.d))
        p.update(_ffn_params(rng, f"cvgf.{layer}.ffn.", cfg.d, cfg.ffn_mult))
    p["cvgf.out_g"], p["cvgf.out_b"] = ones(cfg.d), zeros(cfg.d)
    return p


def init_ctlf(rng, cfg):
    d = cfg.d
    p = {"ctlf.in_g": ones(d), "ctlf.in_b": zeros(d)}
    for gate in ("z", "r", "h"):
        p[f"ctlf.gru.w{gate}"] = init_linear(rng, d, d)
        p[f"ctlf.gru.u{gate}"] = init_linear(rng, d, d)
        p[f"ctlf.gru.b{gate}"] = zeros(d)
    p.update(_attn_params(rng, "ctlf.attn.", d))
    p.update(_ffn_params(rng, "ctlf.ffn.", d, cfg.ffn_mult))
    p["ctlf.out_g"], p["ctlf.out_b"] = ones(d), zeros(d)
    return p


def _check_mask(grid, mask, kind):
    if mask.kind is not kind:
        raise ValueError(f"expected a {kind.value} mask, got {mask.kind.value}")
    if mask.layout != grid.layout or mask.n != grid.layout.n:
        raise ValueError(f"mask layout {mask.layout} does not match grid {grid.layout}")


def _sublayer(x, p, prefix, mask, heads):
    h = layer_norm(x, p[prefix + "ln_g"], p[prefix + "ln_b"])
    return x + multi_head_attention(h, h, h, mask, heads, _proj(p, prefix))


def cross_view_global_fusion(grid, mask, cfg, params):
    """Spatial features ``F_S`` of shape ``[V, T, P, d]``.

    Each of the ``L`` layers runs intra-frame attention (restricted to one
    (view, time) cell), inter-frame attention under ``mask``, then a
    feed-forward block; all pre-norm with residuals. Only view identifiers
    are added to the tokens.
    """
    _check_mask(grid, mask, MaskKind.SPATIAL)
    L = grid.layout
    intra = mask.bits & frame_mask(L)
    x = (grid.patch_tokens + grid.view_tokens()).reshape(L.n, grid.d)
    for layer in range(cfg.L):
        x = _sublayer(x, params, f"cvgf.{layer}.intra.", intra, cfg.heads)
        x = _sublayer(x, params, f"cvgf.{layer}.inter.", mask.bits, cfg.heads)
        pre = f"cvgf.{layer}.ffn."
        x = x + feed_forward(layer_norm(x, params[pre + "ln_g"], params[pre + "ln_b"]),
                             params, pre)
    x = layer_norm(x, params["cvgf.out_g"], params["cvgf.out_b"])
    return x.reshape(L.V, L.T, L.P, grid.d)


def window_index(bits):
    """Admissible key indices per query row, in flat (time) order.

    Returns ``idx[n, K]`` padded with 0, a validity matrix, and the slot
    where each query finds itself.
    """
    n = bits.shape[0]
    counts = bits.sum(axis=1)
    K = int(counts.max())
    rows, cols = np.nonzero(bits)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    slot = np.arange(rows.size) - starts[rows]
    idx = np.zeros((n, K), dtype=np.intp)
    valid = np.zeros((n, K), dtype=bool)
    idx[rows, slot] = cols
    valid[rows, slot] = True
    self_slot = np.full(n, -1)
    hit = cols == rows
    self_slot[rows[hit]] = slot[hit]
    return idx, valid, self_slot


def cross_time_local_fusion(grid, mask, cfg, params):
    """Temporal features ``F_T`` of shape ``[V, T, P, d]``.

    For every query token the admissible keys of ``mask`` (its temporal
    window, clamped at sequence ends) are fed through a GRU in time order;
    the query plus its time identifier attends over the resulting hidden
    states. With ``cfg.ctlf_single_kv`` only the hidden state at the query's
    own time step is used as key and value.
    """
    _check_mask(grid, mask, MaskKind.TEMPORAL)
    if mask.window is not None and mask.window != cfg.S:
        raise ValueError(f"mask window {mask.window} != configured S={cfg.S}")
    L = grid.layout
    p = params
    z = (grid.patch_tokens + grid.time_tokens()).reshape(L.n, grid.d)
    zin = layer_norm(z, p["ctlf.in_g"], p["ctlf.in_b"])
    idx, valid, self_slot = window_index(mask.bits)
    gru = {k: p["ctlf.gru." + k] for k in
           ("wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh")}
    h = Tensor(np.zeros((L.n, grid.d)))
    states = []
    for k in range(idx.shape[1]):
        step = gru_step(getitem(zin, idx[:, k]), h, gru)
        h = step if valid[:, k].all() else where(valid[:, k:k + 1], step, h)
        states.append(h)
    hs = stack(states, axis=1)                                    # [n, K, d]
    if cfg.ctlf_single_kv:
        hs = getitem(hs, (np.arange(L.n), self_slot)).reshape(L.n, 1, grid.d)
        kv_mask = np.ones((L.n, 1, 1), dtype=bool)
    else:
        kv_mask = valid[:, None, :]
    pre = "ctlf.attn."
    q = layer_norm(z, p[pre + "ln_g"], p[pre + "ln_b"]).reshape(L.n, 1, grid.d)
    attn = multi_head_attention(q, hs, hs, kv_mask, cfg.heads, _proj(p, pre))
    x = z + attn.reshape(L.n, grid.d)
    x = x + feed_forward(layer_norm(x, p["ctlf.ffn.ln_g"], p["ctlf.ffn.ln_b"]), p, "ctlf.ffn.")
    x = layer_norm(x, p["ctlf.out_g"], p["ctlf.out_b"])
    return x.reshape(L.V, L.T, L.P, grid.d)
