"""Numpy reference for the compiled ray caster (same arithmetic, same order)."""
import numpy as np


def raycast(tris, fx, fy, cx, cy, H, W):
    tris = np.ascontiguousarray(tris, dtype=np.float64)
    jj, ii = np.meshgrid(np.arange(W, dtype=np.float64), np.arange(H, dtype=np.float64))
    dx = (jj - cx) / fx
    dy = (ii - cy) / fy
    depth = np.full((H, W), np.inf)
    ids = np.full((H, W), -1, dtype=np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        for m, (a, b, c) in enumerate(tris):
            e1 = b - a
            e2 = c - a
            s = -a
            qx = s[1] * e1[2] - s[2] * e1[1]
            qy = s[2] * e1[0] - s[0] * e1[2]
            qz = s[0] * e1[1] - s[1] * e1[0]
            px = dy * e2[2] - e2[1]
            py = e2[0] - dx * e2[2]
            pz = dx * e2[1] - dy * e2[0]
            det = e1[0] * px + e1[1] * py + e1[2] * pz
            ok = np.abs(det) > 1e-12
            inv = 1.0 / np.where(ok, det, 1.0)
            uu = (s[0] * px + s[1] * py + s[2] * pz) * inv
            vv = (dx * qx + dy * qy + qz) * inv
            tt = (e2[0] * qx + e2[1] * qy + e2[2] * qz) * inv
            hit = (ok & (uu >= 0.0) & (uu <= 1.0) & (vv >= 0.0) & (uu + vv <= 1.0)
                   & (tt > 1e-9) & (tt < depth))
            depth[hit] = tt[hit]
            ids[hit] = m
    return depth, ids
