import numpy as np

from .tensor import GradTape


class NonDeterministicLoss(RuntimeError):
    pass


def _value(loss):
    if loss.size != 1:
        raise ValueError("loss_fn must return a scalar")
    return loss.data.item()


def finite_diff_check(loss_fn, params, eps=1e-5, entries=None, rng=None):
    """Compare tape gradients against central differences.

    ``loss_fn`` takes no arguments and returns a scalar Tensor computed from
    the tensors in ``params`` (name -> Tensor). The error of each parameter
    tensor is ``max|analytic - numeric| / (max|numeric| + 1e-8)``; the worst
    one is returned. ``entries`` caps how many elements per tensor are probed
    (chosen with ``rng``); by default every element is.
    """
    base = _value(loss_fn())
    if _value(loss_fn()) != base:
        raise NonDeterministicLoss("loss_fn disagrees with itself at one point")
    with GradTape() as tape:
        loss = loss_fn()
    analytic = tape.gradient(loss, params)

    worst = 0.0
    for name, p in params.items():
        if not (p.data.flags.c_contiguous and p.data.flags.writeable):
            p.data = p.data.copy()
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if entries is not None and flat.size > entries:
            rng = rng if rng is not None else np.random.default_rng(0)
            idx = np.sort(rng.choice(flat.size, entries, replace=False))
        numeric = np.empty(idx.size)
        for k, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            up = _value(loss_fn())
            flat[i] = orig - eps
            down = _value(loss_fn())
            flat[i] = orig
            numeric[k] = (up - down) / (2.0 * eps)
        a = analytic[name].reshape(-1)[idx]
        err = np.max(np.abs(a - numeric)) / (np.max(np.abs(numeric)) + 1e-8)
        worst = max(worst, float(err))
    return worst
