"""Inference, prediction dumps and scoring against scene ground truth."""
import csv
import json
from pathlib import Path

import numpy as np

from ..numerics.container import load, save
from ..numerics.tensor import no_grad
from ..scenes.io import read_tracks_csv, write_tracks_csv
from . import metrics as M
from .model import forward

ALL_TASKS = ("cam", "depth", "mask", "point", "track")
PRED_VERSION = 1


def predict(params, cfg, scene):
    """Numpy predictions for every task on the full grid of ``scene``."""
    with no_grad():
        out = forward(params, cfg, scene.frames, scene.config.setting, ALL_TASKS,
                      scene.gt_tracks.queries)
    return {
        "cam": out["cam"].data, "depth": out["depth"].data, "mask": out["mask"].data,
        "point": out["point"].data, "track_2d": out["track"]["fine"].data,
        "track_3d": out["track"]["xyz"].data,
    }


def check_prediction(pred):
    """Raise if a prediction violates the output type invariants."""
    q = pred["cam"][..., 0:4]
    if not np.allclose(np.linalg.norm(q, axis=-1), 1.0, atol=1e-9) or np.any(q[..., 0] < 0):
        raise ValueError("camera quaternions are not canonical unit quaternions")
    if np.any(pred["cam"][..., 7:9] <= 0):
        raise ValueError("non-positive focal length")
    if np.any(pred["depth"] <= 0):
        raise ValueError("non-positive depth")
    if np.any(pred["mask"] < 0) or np.any(pred["mask"] > 1):
        raise ValueError("mask outside [0, 1]")
    for k, v in pred.items():
        if not np.all(np.isfinite(v)):
            raise ValueError(f"non-finite values in {k}")
    return pred


def gt_as_prediction(scene):
    ts = scene.gt_tracks
    return {"cam": scene.gt_cameras, "depth": scene.depth.copy(), "mask": scene.dyn_mask.copy(),
            "point": scene.points.copy(), "track_2d": ts.tracks_2d, "track_3d": ts.tracks_3d}


def score(pred, scene, align_disparity=False):
    """:class:`MetricsReport` of numpy predictions against ``scene``."""
    r = M.MetricsReport()
    r.ate, r.rte, r.rre = M.pose_metrics_from_encoding(pred["cam"], scene.gt_cameras)
    r.abs_rel, r.delta125 = M.depth_metrics(pred["depth"], scene.depth, scene.valid,
                                            align_disparity=align_disparity)
    r.j_m, r.j_r = M.seg_metrics(pred["mask"], scene.dyn_mask)
    sel = scene.valid
    pp = np.moveaxis(pred["point"], 2, -1)[sel]
    gp = np.moveaxis(scene.points, 2, -1)[sel]
    pm = M.pointmap_metrics(pp, gp)
    r.acc_mean, r.acc_median = pm["acc"]
    r.comp_mean, r.comp_median = pm["comp"]
    r.nc_mean, r.nc_median = pm["nc"]
    dev, px = M.tracking_metrics(pred["track_2d"], scene.gt_tracks.tracks_2d)
    r.deviation_12, r.deviation_24 = dev[12], dev[24]
    r.track_px = px
    return r.check()


def write_prediction(pred, directory, name=""):
    """One Q4DG container per (view, time) frame plus ``tracks.csv``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    V, T = pred["cam"].shape[:2]
    for v in range(V):
        for t in range(T):
            save(d / f"frame_v{v}_t{t:03d}.q4dg", {
                "camera": pred["cam"][v, t], "depth": pred["depth"][v, t],
                "mask": pred["mask"][v, t], "point": pred["point"][v, t]})
    write_tracks_csv(d / "tracks.csv", pred["track_2d"], pred["track_3d"])
    (d / "prediction.json").write_text(json.dumps(
        {"format_version": PRED_VERSION, "scene": name, "V": V, "T": T}, sort_keys=True) + "\n")


def read_prediction(directory):
    d = Path(directory)
    meta = json.loads((d / "prediction.json").read_text())
    if meta.get("format_version") != PRED_VERSION:
        raise ValueError(f"unsupported prediction format {meta.get('format_version')!r}")
    V, T = meta["V"], meta["T"]
    frames = [[load(d / f"frame_v{v}_t{t:03d}.q4dg") for t in range(T)] for v in range(V)]
    stack = lambda key: np.stack([np.stack([f[key] for f in row]) for row in frames])
    uv, xyz = read_tracks_csv(d / "tracks.csv")
    return {"cam": stack("camera"), "depth": stack("depth"), "mask": stack("mask"),
            "point": stack("point"), "track_2d": uv, "track_3d": xyz}


def write_metrics_csv(path, reports):
    """``reports`` is an ordered list of (scene name, MetricsReport)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scene", "metric", "value"])
        for name, rep in reports:
            for metric, value in rep.rows():
                w.writerow([name, metric, repr(float(value))])


def read_metrics_csv(path):
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["scene"], {})[row["metric"]] = float(row["value"])
    return out
