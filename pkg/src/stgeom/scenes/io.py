"""Dataset directories: ``meta.json`` + one Q4DG container per field + ``tracks.csv``.

``meta.json`` schema (version 1)::

    {"format_version": 1, "seed": int, "config": {SceneConfig fields},
     "fx": float, "fy": float, "dynamic_ids": [int, ...]}

Containers: ``frames``, ``cameras`` (``R``, ``t``), ``depth`` (``depth``,
``valid``), ``mask`` (``dyn_mask``, ``object_id``), ``points`` and
``tracks`` (``track_points``). ``tracks.csv`` lists every view's tracks with
query ids ``v * N + n``.
"""
import csv
import json
from pathlib import Path

import numpy as np

from ..numerics.container import load, save
from .generator import SceneConfig, SceneSequence

DATASET_VERSION = 1
SUFFIX = ".q4dg"


class DatasetVersionError(ValueError):
    pass


def write_tracks_csv(path, uv, xyz, query_offset=0, mode="w"):
    """Write ``uv [T, N, 2]`` / ``xyz [T, N, 3]`` rows as frame,query,u,v,x,y,z."""
    with open(path, mode, newline="") as fh:
        w = csv.writer(fh)
        if mode == "w":
            w.writerow(["frame", "query", "u", "v", "x", "y", "z"])
        T, N = uv.shape[:2]
        for t in range(T):
            for n in range(N):
                w.writerow([t, query_offset + n, *(repr(float(c)) for c in uv[t, n]),
                            *(repr(float(c)) for c in xyz[t, n])])


def read_tracks_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    T = 1 + max(int(r["frame"]) for r in rows)
    N = 1 + max(int(r["query"]) for r in rows)
    uv, xyz = np.zeros((T, N, 2)), np.zeros((T, N, 3))
    for r in rows:
        t, n = int(r["frame"]), int(r["query"])
        uv[t, n] = float(r["u"]), float(r["v"])
        xyz[t, n] = float(r["x"]), float(r["y"]), float(r["z"])
    return uv, xyz


def write_dataset(seq, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {"format_version": DATASET_VERSION, "seed": int(seq.seed),
            "config": seq.config.to_dict(), "fx": seq.fx, "fy": seq.fy,
            "dynamic_ids": [int(i) for i in seq.dynamic_ids]}
    save(d / ("frames" + SUFFIX), {"frames": seq.frames})
    save(d / ("cameras" + SUFFIX), {"R": seq.cam_R, "t": seq.cam_t})
    save(d / ("depth" + SUFFIX), {"depth": seq.depth, "valid": seq.valid.astype(np.float64)})
    save(d / ("mask" + SUFFIX), {"dyn_mask": seq.dyn_mask,
                                 "object_id": seq.object_id.astype(np.float64)})
    save(d / ("points" + SUFFIX), {"points": seq.points})
    save(d / ("tracks" + SUFFIX), {"track_points": seq.track_points})
    N = seq.track_points.shape[2]
    for v in range(seq.V):
        ts = seq.tracks_for_view(v)
        write_tracks_csv(d / "tracks.csv", ts.tracks_2d, ts.tracks_3d, v * N,
                         "w" if v == 0 else "a")
    # meta last: a directory without it is an incomplete write
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_meta(directory):
    path = Path(directory) / "meta.json"
    if not path.exists():
        raise FileNotFoundError(f"{directory} has no meta.json")
    meta = json.loads(path.read_text())
    version = meta.get("format_version")
    if version != DATASET_VERSION:
        raise DatasetVersionError(f"unsupported dataset format version {version!r}")
    return meta


def read_dataset(directory):
    d = Path(directory)
    meta = read_meta(d)
    cfg = SceneConfig(**meta["config"])
    frames = load(d / ("frames" + SUFFIX))["frames"]
    cams = load(d / ("cameras" + SUFFIX))
    dep = load(d / ("depth" + SUFFIX))
    msk = load(d / ("mask" + SUFFIX))
    points = load(d / ("points" + SUFFIX))["points"]
    tracks = load(d / ("tracks" + SUFFIX))["track_points"]
    return SceneSequence(cfg, meta["seed"], frames, cams["R"], cams["t"], meta["fx"], meta["fy"],
                         dep["depth"], dep["valid"].astype(bool), msk["dyn_mask"],
                         msk["object_id"].astype(np.int64), points, tracks,
                         tuple(meta["dynamic_ids"]))
