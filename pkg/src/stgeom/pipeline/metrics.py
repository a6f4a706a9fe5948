"""Evaluation metrics and alignment utilities (plain numpy, no gradients)."""
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..scenes.geometry import camera_centers, quat_to_rotmat

HORIZONS = (12, 24)
NORMAL_K = 8


class DegenerateAlignmentError(ValueError):
    pass


def umeyama_align(A, B):
    """Similarity ``(s, R, t)`` minimising ``sum ||B_i - (s R A_i + t)||^2``.

    ``det(R) = +1`` is enforced with the usual sign correction.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape or A.ndim != 2 or A.shape[1] != 3:
        raise ValueError(f"point sets must both be [n, 3], got {A.shape} and {B.shape}")
    n = A.shape[0]
    if n < 3:
        raise DegenerateAlignmentError("need at least 3 corresponding points")
    mu_a, mu_b = A.mean(0), B.mean(0)
    a, b = A - mu_a, B - mu_b
    var_a = (a * a).sum() / n
    cov = b.T @ a / n
    U, D, Vt = np.linalg.svd(cov)
    scale_ref = max(D[0], 1e-300)
    if var_a <= 1e-14 * max(1.0, float(np.abs(A).max()) ** 2) or D[1] <= 1e-12 * scale_ref:
        raise DegenerateAlignmentError("covariance has rank < 2")
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    s = float(np.trace(np.diag(D) @ S) / var_a)
    t = mu_b - s * R @ mu_a
    return s, R, t


def apply_sim3(s, R, t, X):
    return s * np.asarray(X) @ R.T + t


def _rotation_angle_deg(R):
    # atan2 keeps precision near 0 where arccos of the trace loses half the digits
    c = (np.trace(R, axis1=-2, axis2=-1) - 1.0) / 2.0
    w = np.stack([R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0],
                  R[..., 1, 0] - R[..., 0, 1]], axis=-1)
    return np.degrees(np.arctan2(np.linalg.norm(w, axis=-1) / 2.0, c))


def _align_centers(cp, cg):
    """Sim(3) aligning predicted to ground-truth centres.

    Falls back to a pure translation when the ground-truth trajectory is
    degenerate (e.g. a static camera).
    """
    try:
        return umeyama_align(cp, cg)
    except DegenerateAlignmentError:
        return 1.0, np.eye(3), cg.mean(0) - cp.mean(0)


def pose_metrics(pred_R, pred_t, gt_R, gt_t):
    """ATE, RTE and RRE (degrees) for world->camera poses ``[V, T, 3, 3]``/``[V, T, 3]``.

    Relative poses are taken between consecutive time steps of each view.
    """
    pred_R, gt_R = np.asarray(pred_R, dtype=np.float64), np.asarray(gt_R, dtype=np.float64)
    pred_t, gt_t = np.asarray(pred_t, dtype=np.float64), np.asarray(gt_t, dtype=np.float64)
    if pred_R.shape != gt_R.shape or pred_t.shape != gt_t.shape:
        raise ValueError(f"trajectory shapes differ: {pred_R.shape} vs {gt_R.shape}")
    if pred_R.ndim == 3:
        pred_R, gt_R, pred_t, gt_t = pred_R[None], gt_R[None], pred_t[None], gt_t[None]
    V, T = pred_R.shape[:2]
    if V * T < 2:
        raise ValueError("pose metrics need at least 2 frames")
    cp = camera_centers(pred_R, pred_t).reshape(-1, 3)
    cg = camera_centers(gt_R, gt_t).reshape(-1, 3)
    s, Ra, ta = _align_centers(cp, cg)
    ate = float(np.sqrt(np.mean(np.sum((apply_sim3(s, Ra, ta, cp) - cg) ** 2, axis=-1))))
    if T < 2:
        return ate, 0.0, 0.0

    def relative(R, t):
        Rr = R[:, 1:] @ np.swapaxes(R[:, :-1], -1, -2)
        tr = t[:, 1:] - np.einsum("vtij,vtj->vti", Rr, t[:, :-1])
        return Rr, tr

    Rp, tp = relative(pred_R, pred_t)
    Rg, tg = relative(gt_R, gt_t)
    rte = float(np.mean(np.linalg.norm(s * tp - tg, axis=-1)))
    rre = float(np.mean(_rotation_angle_deg(np.swapaxes(Rp, -1, -2) @ Rg)))
    return ate, rte, rre


def pose_metrics_from_encoding(pred, gt):
    pred, gt = np.asarray(pred), np.asarray(gt)
    return pose_metrics(quat_to_rotmat(pred[..., 0:4]), pred[..., 4:7],
                        quat_to_rotmat(gt[..., 0:4]), gt[..., 4:7])


def depth_metrics(pred, gt, valid=None, align=True, align_disparity=False):
    """AbsRel and the ``delta < 1.25`` inlier ratio after a scale-shift fit."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    valid = np.ones(gt.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if pred.shape != gt.shape or valid.shape != gt.shape:
        raise ValueError("depth shapes differ")
    p, g = pred[valid], gt[valid]
    if p.size == 0:
        raise ValueError("no valid pixels")
    if np.any(g <= 0):
        raise ValueError("ground-truth depth must be positive on valid pixels")
    if align:
        if align_disparity:
            if np.any(p <= 0):
                raise ValueError("disparity alignment needs positive predicted depth")
            x, y = 1.0 / p, 1.0 / g
        else:
            x, y = p, g
        A = np.stack([x, np.ones_like(x)], axis=1)
        (s, b), *_ = np.linalg.lstsq(A, y, rcond=None)
        fit = s * x + b
        p = 1.0 / np.maximum(fit, 1e-12) if align_disparity else fit
    p = np.maximum(p, 1e-12)
    abs_rel = float(np.mean(np.abs(p - g) / g))
    delta = float(np.mean(np.maximum(p / g, g / p) < 1.25))
    return abs_rel, delta


def seg_metrics(pred, gt, threshold=0.5):
    """J_M (mean IoU) and J_R (fraction of frames with IoU > 0.5).

    Frames are the leading axes; the last two are pixels. Frames where both
    masks are empty score IoU 1.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError("mask shapes differ")
    pb = (pred >= threshold).reshape(-1, *pred.shape[-2:])
    gb = (gt >= 0.5).reshape(pb.shape)
    inter = (pb & gb).sum(axis=(1, 2))
    union = (pb | gb).sum(axis=(1, 2))
    iou = np.where(union == 0, 1.0, inter / np.maximum(union, 1))
    return float(iou.mean()), float(np.mean(iou > 0.5))


def estimate_normals(points, k=NORMAL_K, neighbours=None):
    """Unit normals from a plane fit to each point and its ``k`` nearest neighbours.

    ``neighbours`` (``[n, k + 1]`` indices) overrides the k-NN search.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[0] < k + 1:
        raise ValueError(f"need at least {k + 1} points for normal estimation")
    idx = neighbours if neighbours is not None else cKDTree(pts).query(pts, k=k + 1)[1]
    nb = pts[idx]
    nb = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", nb, nb)
    _, vecs = np.linalg.eigh(cov)
    return vecs[:, :, 0]


def pointmap_metrics(pred, gt, align=True):
    """Accuracy, completion and normal consistency, each as (mean, median).

    With ``align`` the prediction is first mapped onto the ground truth by a
    Umeyama similarity over index-corresponded points, and both clouds take
    their normals over the ground-truth neighbourhood graph so that round-off
    cannot reorder near-tied neighbours.
    """
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    if min(len(pred), len(gt)) < NORMAL_K + 1:
        raise ValueError(f"point clouds need at least {NORMAL_K + 1} points")
    if align:
        if pred.shape != gt.shape:
            raise ValueError("alignment needs index-corresponded clouds")
        pred = apply_sim3(*umeyama_align(pred, gt), pred)
    d_acc, i_acc = cKDTree(gt).query(pred)
    d_comp, i_comp = cKDTree(pred).query(gt)
    graph = cKDTree(gt).query(gt, k=NORMAL_K + 1)[1] if align else None
    n_pred, n_gt = estimate_normals(pred, neighbours=graph), estimate_normals(gt, neighbours=graph)
    nc_acc = np.abs(np.sum(n_pred * n_gt[i_acc], axis=-1))
    nc_comp = np.abs(np.sum(n_gt * n_pred[i_comp], axis=-1))
    return {
        "acc": (float(d_acc.mean()), float(np.median(d_acc))),
        "comp": (float(d_comp.mean()), float(np.median(d_comp))),
        "nc": (float((nc_acc.mean() + nc_comp.mean()) / 2),
               float((np.median(nc_acc) + np.median(nc_comp)) / 2)),
    }


def tracking_metrics(pred, gt, horizons=HORIZONS):
    """Percent deviation per horizon and mean pixel error.

    ``pred``/``gt`` are ``[T, N, 2]``. For each query the mean error over the
    first ``h`` frames is divided by the extent of its ground-truth track
    (longer bounding-box side, floored at 1 px). Horizons beyond ``T`` are
    clamped to ``T``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError("track shapes differ")
    T = gt.shape[0]
    err = np.linalg.norm(pred - gt, axis=-1)                       # [T, N]
    extent = np.maximum((gt.max(axis=0) - gt.min(axis=0)).max(axis=-1), 1.0)
    out = {}
    for h in horizons:
        hh = min(h, T)
        out[h] = float(np.mean(err[:hh].mean(axis=0) / extent) * 100.0)
    return out, float(err.mean())


@dataclass
class MetricsReport:
    ate: float = math.nan
    rte: float = math.nan
    rre: float = math.nan
    abs_rel: float = math.nan
    delta125: float = math.nan
    j_m: float = math.nan
    j_r: float = math.nan
    acc_mean: float = math.nan
    acc_median: float = math.nan
    comp_mean: float = math.nan
    comp_median: float = math.nan
    nc_mean: float = math.nan
    nc_median: float = math.nan
    deviation_12: float = math.nan
    deviation_24: float = math.nan
    track_px: float = math.nan

    NAMES = {
        "ate": "ATE", "rte": "RTE", "rre": "RRE", "abs_rel": "AbsRel",
        "delta125": "delta<1.25", "j_m": "J_M", "j_r": "J_R",
        "acc_mean": "Acc_mean", "acc_median": "Acc_median",
        "comp_mean": "Comp_mean", "comp_median": "Comp_median",
        "nc_mean": "NC_mean", "nc_median": "NC_median",
        "deviation_12": "deviation@12", "deviation_24": "deviation@24",
        "track_px": "track_px",
    }

    def rows(self):
        return [(self.NAMES[k], v) for k, v in asdict(self).items()]

    def check(self):
        """Raise if any populated metric leaves its admissible range."""
        ranges = {"ate": (0, math.inf), "rte": (0, math.inf), "rre": (0, 180),
                  "abs_rel": (0, math.inf), "delta125": (0, 1), "j_m": (0, 1), "j_r": (0, 1),
                  "acc_mean": (0, math.inf), "acc_median": (0, math.inf),
                  "comp_mean": (0, math.inf), "comp_median": (0, math.inf),
                  "nc_mean": (-1, 1), "nc_median": (-1, 1), "deviation_12": (0, math.inf),
                  "deviation_24": (0, math.inf), "track_px": (0, math.inf)}
        for k, (lo, hi) in ranges.items():
            v = getattr(self, k)
            if not math.isnan(v) and not (lo - 1e-12 <= v <= hi + 1e-12):
                raise ValueError(f"{self.NAMES[k]}={v} outside [{lo}, {hi}]")
        return self
