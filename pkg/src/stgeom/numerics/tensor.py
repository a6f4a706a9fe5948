"""Dense float64 tensors with a reverse-mode gradient tape.

Forward evaluation is plain numpy. Operations are recorded only while a
:class:`GradTape` is active on the current thread and at least one input
requires a gradient, so forward passes over frozen parameters stay free of
shared mutable state.
"""
import threading

import numpy as np

_local = threading.local()


class NonFiniteError(FloatingPointError):
    pass


class DegenerateAttentionError(ValueError):
    pass


def _tape():
    return getattr(_local, "tape", None)


class Tensor:
    __slots__ = ("data", "requires_grad", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return len(self.data)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("op", "out", "parents", "backward")

    def __init__(self, op, out, parents, backward):
        self.op = op
        self.out = out
        self.parents = parents
        self.backward = backward


class GradTape:
    """Ordered record of primitive ops for one backward pass.

    Use as a context manager around the forward computation, then call
    :meth:`gradient`. A tape is single-use and owned by one thread.
    """

    def __init__(self):
        self.ops = []
        self.params = {}
        self._prev = None
        self._done = False

    def watch(self, name, tensor):
        if not tensor.requires_grad:
            raise ValueError(f"parameter {name!r} does not require grad")
        self.params[name] = tensor
        return tensor

    def __enter__(self):
        self._prev = _tape()
        _local.tape = self
        return self

    def __exit__(self, *exc):
        _local.tape = self._prev
        return False

    def _record(self, op, out, parents, backward):
        self.ops.append(_Node(op, out, parents, backward))

    def gradient(self, loss, wrt=None):
        """Backpropagate from a scalar ``loss``.

        ``wrt`` may be a dict name->Tensor, a list of tensors, or None for
        the watched parameter registry. Tensors unreachable from ``loss``
        get zero gradients.
        """
        if self._done:
            raise RuntimeError("tape already consumed")
        if loss.size != 1:
            raise ValueError("gradient() needs a scalar loss")
        if wrt is None:
            wrt = self.params
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.ops):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for parent, gp in zip(node.parents, node.backward(g)):
                if gp is None or not parent.requires_grad:
                    continue
                key = id(parent)
                prev = grads.get(key)
                grads[key] = gp if prev is None else prev + gp
        self._done = True
        self.ops = []

        def lookup(t):
            g = grads.get(id(t))
            if g is None:
                return np.zeros_like(t.data)
            return np.array(np.broadcast_to(g, t.shape))

        if isinstance(wrt, dict):
            return {k: lookup(t) for k, t in wrt.items()}
        return [lookup(t) for t in wrt]


class no_grad:
    """Suspend recording on this thread."""

    def __enter__(self):
        self._prev = _tape()
        _local.tape = None

    def __exit__(self, *exc):
        _local.tape = self._prev
        return False


def _emit(op, data, parents, backward):
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by {op}")
    out = Tensor(data)
    tape = _tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape._record(op, out, parents, backward)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _emit("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _emit("div", out, (a, b), backward)


def neg(a):
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


def power(a, p):
    p = float(p)
    out = a.data ** p
    return _emit("pow", out, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _emit("matmul", a.data @ b.data, (a, b), backward)


# ------------------------------------------------------------- elementwise


def exp(a):
    out = np.exp(a.data)
    return _emit("exp", out, (a,), lambda g: (g * out,))


def log(a):
    return _emit("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a):
    out = np.tanh(a.data)
    return _emit("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a):
    out = _sigmoid(a.data)
    return _emit("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a):
    return _emit("softplus", np.logaddexp(0.0, a.data), (a,),
                 lambda g: (g * _sigmoid(a.data),))


def absolute(a):
    return _emit("abs", np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def clip(a, lo, hi):
    inside = (a.data > lo) & (a.data < hi)
    return _emit("clip", np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def where(cond, a, b):
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    return _emit("where", np.where(cond, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                            _unbroadcast(np.where(cond, 0.0, g), b.shape)))


# -------------------------------------------------------------- reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def tsum(a, axis=None, keepdims=False):
    axes = _norm_axis(axis, a.ndim)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return _emit("sum", a.data.sum(axis=axes, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims=False):
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return tsum(a, axes, keepdims) * (1.0 / count)


def tmin(a, axis):
    """Minimum along one axis; the gradient goes to the first minimiser."""
    axis %= a.ndim
    idx = np.expand_dims(np.argmin(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, idx, axis=axis)

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _emit("min", np.squeeze(out, axis), (a,), backward)


def masked_softmax(scores, mask=None, axis=-1):
    """Softmax with inadmissible entries forced to exactly zero weight.

    ``mask`` is a boolean array broadcastable to ``scores``; masked entries
    are replaced by -inf before exponentiation.
    """
    x = scores.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not np.all(np.any(np.broadcast_to(mask, x.shape), axis=axis)):
            raise DegenerateAttentionError("degenerate attention row")
        x = np.where(mask, x, -np.inf)
    x = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(x)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", out, (scores,), backward)


# ------------------------------------------------------------------- shape


def reshape(a, shape):
    return _emit("reshape", a.data.reshape(shape), (a,),
                 lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _emit("transpose", a.data.transpose(axes), (a,),
                 lambda g: (g.transpose(inv),))


def swapaxes(a, i, j):
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, tuple(axes))


def _is_advanced(index):
    if not isinstance(index, tuple):
        index = (index,)
    return any(isinstance(ix, (np.ndarray, list)) for ix in index)


def getitem(a, index):
    """Basic and fancy indexing (gather); repeated indices accumulate."""
    advanced = _is_advanced(index)

    def backward(g):
        full = np.zeros_like(a.data)
        if advanced:
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return _emit("gather", a.data[index], (a,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    axis %= tensors[0].ndim
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _emit("concat", np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), backward)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    axis %= tensors[0].ndim + 1

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _emit("stack", np.stack([t.data for t in tensors], axis=axis),
                 tuple(tensors), backward)


def pad(a, widths):
    """Zero padding; ``widths`` as for :func:`numpy.pad`."""
    slices = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, a.shape))
    return _emit("pad", np.pad(a.data, widths), (a,), lambda g: (g[slices],))


def broadcast_to(a, shape):
    return _emit("broadcast", np.broadcast_to(a.data, shape).copy(), (a,),
                 lambda g: (_unbroadcast(g, a.shape),))
