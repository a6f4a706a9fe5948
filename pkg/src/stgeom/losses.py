"""Task losses and the weighted multi-task objective."""
from dataclasses import asdict, dataclass

import numpy as np

from .numerics.tensor import (
    Tensor,
    absolute,
    as_tensor,
    clip,
    log,
    tmin,
    tsum,
    where,
)

BCE_CLAMP = 1e-7
TASKS = ("cam", "depth", "mask", "point", "track")


@dataclass(frozen=True)
class LossWeights:
    cam: float = 1.0
    depth: float = 0.8
    mask: float = 0.8
    point: float = 0.9
    track: float = 0.1
    huber_delta: float = 1.0

    def __post_init__(self):
        for task in TASKS:
            if getattr(self, task) < 0:
                raise ValueError(f"loss weight for {task} is negative")
        if self.huber_delta <= 0:
            raise ValueError("huber_delta must be positive")

    def only(self, task):
        """Weights selecting a single task (stage-1 per-task objective)."""
        return LossWeights(**{t: (1.0 if t == task else 0.0) for t in TASKS},
                           huber_delta=self.huber_delta)

    def to_dict(self):
        return asdict(self)


@dataclass
class LossReport:
    components: dict       # task -> scalar Tensor
    total: Tensor

    def floats(self):
        out = {k: float(v.data) for k, v in self.components.items()}
        out["total"] = float(self.total.data)
        return out


def huber(r, delta=1.0):
    a = absolute(r)
    return where(a.data <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))


def camera_loss(pred, gt, delta=1.0, sum_reduction=False):
    """Huber loss summed over the 9 components, averaged (or summed) over frames."""
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.shape[-1] != 9:
        raise ValueError(f"camera sets do not match: {pred.shape} vs {gt.shape}")
    per_frame = tsum(huber(pred - gt, delta), axis=-1)
    return per_frame.sum() if sum_reduction else per_frame.mean()


def _valid_count(valid):
    n = int(valid.sum())
    if n == 0:
        raise ValueError("no valid pixels")
    return n


def dense_loss(pred, gt, valid, channel_axis=None, sum_reduction=False):
    """Masked L2 plus L1 image-gradient consistency.

    ``pred``/``gt`` are ``[..., H, W]`` or, with ``channel_axis``, carry a
    channel dimension that is summed per pixel. Pixels outside ``valid``
    never enter either term; the gradient term uses only pixel pairs that
    are both valid.
    """
    gt = np.asarray(gt, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    n = _valid_count(valid)
    vmask = valid if channel_axis is None else np.expand_dims(valid, channel_axis)
    diff = where(vmask, pred - gt, 0.0)
    l2 = tsum(diff * diff)
    terms = []
    pairs = 0
    for axis in (-1, -2):
        lo = [slice(None)] * diff.ndim
        hi = [slice(None)] * diff.ndim
        lo[axis], hi[axis] = slice(None, -1), slice(1, None)
        vlo = [slice(None)] * valid.ndim
        vhi = [slice(None)] * valid.ndim
        vlo[axis], vhi[axis] = slice(None, -1), slice(1, None)
        both = valid[tuple(vlo)] & valid[tuple(vhi)]
        if not both.any():
            continue
        pairs += int(both.sum())
        if channel_axis is not None:
            both = np.expand_dims(both, channel_axis)
        step = diff[tuple(hi)] - diff[tuple(lo)]
        terms.append(tsum(absolute(where(both, step, 0.0))))
    grad = terms[0] if terms else Tensor(0.0)
    for t in terms[1:]:
        grad = grad + t
    if sum_reduction:
        return l2 + grad
    return l2 * (1.0 / n) + grad * (1.0 / max(pairs, 1))


def depth_loss(pred, gt, valid, sum_reduction=False):
    return dense_loss(pred, gt, valid, None, sum_reduction)


def point_loss(pred, gt, valid, sum_reduction=False):
    """``pred``/``gt`` are ``[..., 3, H, W]``; ``valid`` is ``[..., H, W]``."""
    return dense_loss(pred, gt, valid, -3, sum_reduction)


def mask_loss(pred, gt, sum_reduction=False):
    gt = np.asarray(gt, dtype=np.float64)
    if not np.all((gt == 0) | (gt == 1)):
        raise ValueError("dynamic-mask ground truth must be binary")
    p = clip(as_tensor(pred), BCE_CLAMP, 1.0 - BCE_CLAMP)
    ll = gt * log(p) + (1.0 - gt) * log(1.0 - p)
    return -(ll.sum() if sum_reduction else ll.mean())


def chamfer(a, b):
    """Symmetric Chamfer distance with squared Euclidean point distances.

    ``a [..., n, k]`` and ``b [..., m, k]``; returns one value per leading
    batch index.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-2] == 0 or b.shape[-2] == 0:
        raise ValueError("empty point set")
    diff = a[..., :, None, :] - b[..., None, :, :]
    d2 = tsum(diff * diff, axis=-1)
    return tmin(d2, -1).mean(axis=-1) + tmin(d2, -2).mean(axis=-1)


def tracking_loss(pred, gt, image_size, mode="chamfer", coarse_weight=1.0,
                  sum_reduction=False):
    """Per-frame 2D + 3D track loss.

    ``pred`` maps ``fine``/``coarse`` ``[T, N, 2]`` and ``xyz`` ``[T, N, 3]``
    Tensors; ``gt`` is a :class:`~stgeom.heads.TrackSet`. 2D positions are
    measured in units of image size (u / W, v / H). ``mode="l2"`` replaces
    the set distance with per-query squared error.
    """
    H, W = image_size
    if pred["fine"].shape[0] != gt.T:
        raise ValueError("prediction and ground truth cover different frame counts")
    scale = np.array([1.0 / W, 1.0 / H])
    g2 = gt.tracks_2d * scale
    g3 = gt.tracks_3d
    levels = [(pred["fine"], 1.0)]
    if coarse_weight and "coarse" in pred:
        levels.append((pred["coarse"], coarse_weight))

    def dist(p, g):
        if mode == "chamfer":
            return chamfer(p, g)
        if mode == "l2":
            diff = p - g
            return tsum(diff * diff, axis=-1).mean(axis=-1)
        raise ValueError(f"unknown tracking loss mode {mode!r}")

    per_frame = dist(pred["xyz"], g3)
    for p2, w in levels:
        per_frame = per_frame + dist(p2 * scale, g2) * w
    return per_frame.sum() if sum_reduction else per_frame.mean()


def total_loss(components, weights):
    """Weighted sum of per-task losses; tasks absent from ``components`` count as 0."""
    for task in TASKS:
        if getattr(weights, task) < 0:
            raise ValueError(f"negative weight for {task}")
    comps = {k: as_tensor(v) for k, v in components.items()}
    total = Tensor(0.0)
    for task in TASKS:
        if task in comps:
            total = total + comps[task] * getattr(weights, task)
    return LossReport(comps, total)
