"""Network building blocks composed from the tape primitives."""
import numpy as np

from .tensor import (
    NonFiniteError,
    Tensor,
    as_tensor,
    masked_softmax,
    mean,
    sigmoid,
    swapaxes,
    tanh,
)


def linear(x, w, b=None):
    y = x @ w
    return y if b is None else y + b


def silu(x):
    return x * sigmoid(x)


def layer_norm(x, gain, bias, eps=1e-5):
    mu = mean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = mean(xc * xc, axis=-1, keepdims=True)
    return xc * (var + eps) ** -0.5 * gain + bias


def feed_forward(x, p, prefix):
    h = silu(linear(x, p[prefix + "w1"], p[prefix + "b1"]))
    return linear(h, p[prefix + "w2"], p[prefix + "b2"])


def _split_heads(x, heads):
    *lead, n, d = x.shape
    x = x.reshape(tuple(lead) + (n, heads, d // heads))
    return swapaxes(x, -2, -3)


def _merge_heads(x):
    x = swapaxes(x, -2, -3)
    *lead, n, h, dh = x.shape
    return x.reshape(tuple(lead) + (n, h * dh))


def multi_head_attention(queries, keys, values, mask, heads, proj=None):
    """Masked scaled dot-product attention over ``heads`` heads.

    ``queries`` is ``[..., nq, d]``, ``keys``/``values`` ``[..., nk, d]`` and
    ``mask`` a boolean array broadcastable to ``[..., nq, nk]``. ``proj``
    optionally maps ``wq, wk, wv, wo`` (and ``bq``... biases) to tensors; when
    absent the projections are the identity.
    """
    queries, keys, values = as_tensor(queries), as_tensor(keys), as_tensor(values)
    d = queries.shape[-1]
    if d % heads:
        raise ValueError(f"model dim {d} not divisible by {heads} heads")
    if keys.shape[-1] != d or values.shape[-1] != d or keys.shape[-2] != values.shape[-2]:
        raise ValueError("query/key/value dimension mismatch")
    nq, nk = queries.shape[-2], keys.shape[-2]
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape[-2:] != (nq, nk):
            raise ValueError(f"mask shape {mask.shape} does not match ({nq}, {nk})")
    if proj is not None:
        queries = linear(queries, proj["wq"], proj.get("bq"))
        keys = linear(keys, proj["wk"], proj.get("bk"))
        values = linear(values, proj["wv"], proj.get("bv"))
    q = _split_heads(queries, heads)
    k = _split_heads(keys, heads)
    v = _split_heads(values, heads)
    scores = (q @ swapaxes(k, -1, -2)) * (1.0 / np.sqrt(d // heads))
    if mask is not None:
        # heads axis sits just before the (nq, nk) pair
        mask = np.expand_dims(mask, -3)
    weights = masked_softmax(scores, mask)
    out = _merge_heads(weights @ v)
    if proj is not None:
        out = linear(out, proj["wo"], proj.get("bo"))
    return out


def gru_step(x, h, w):
    """One GRU update, ``h' = (1 - z) * h + z * h_cand``.

    ``w`` holds ``wz, uz, bz, wr, ur, br, wh, uh, bh``; inputs may carry
    leading batch dimensions.
    """
    x, h = as_tensor(x), as_tensor(h)
    for t in (x, h):
        if not np.all(np.isfinite(t.data)):
            raise NonFiniteError("non-finite GRU input")
    if h.ndim == 1 and x.ndim == 1:
        return gru_step(x.reshape(1, -1), h.reshape(1, -1), w).reshape(h.shape)
    z = sigmoid(x @ w["wz"] + h @ w["uz"] + w["bz"])
    r = sigmoid(x @ w["wr"] + h @ w["ur"] + w["br"])
    cand = tanh(x @ w["wh"] + (r * h) @ w["uh"] + w["bh"])
    return (1.0 - z) * h + z * cand


def init_linear(rng, fan_in, fan_out, scale=1.0):
    std = scale / np.sqrt(fan_in)
    return Tensor(rng.normal(0.0, std, size=(fan_in, fan_out)), requires_grad=True)


def zeros(*shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def ones(*shape):
    return Tensor(np.ones(shape), requires_grad=True)
