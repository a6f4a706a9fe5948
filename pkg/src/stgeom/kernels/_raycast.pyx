# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Z-buffered ray casting of camera-space triangles, one ray per pixel."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, INFINITY

cnp.import_array()


def raycast(double[:, :, ::1] tris, double fx, double fy, double cx, double cy,
            int H, int W):
    cdef Py_ssize_t M = tris.shape[0]
    depth_arr = np.full((H, W), np.inf)
    ids_arr = np.full((H, W), -1, dtype=np.int64)
    cdef double[:, ::1] depth = depth_arr
    cdef long long[:, ::1] ids = ids_arr
    cdef Py_ssize_t m, i, j
    cdef double ax, ay, az, e1x, e1y, e1z, e2x, e2y, e2z, qx, qy, qz, sx, sy, sz
    cdef double dx, dy, px, py, pz, det, inv, uu, vv, tt
    for m in range(M):
        ax = tris[m, 0, 0]; ay = tris[m, 0, 1]; az = tris[m, 0, 2]
        e1x = tris[m, 1, 0] - ax; e1y = tris[m, 1, 1] - ay; e1z = tris[m, 1, 2] - az
        e2x = tris[m, 2, 0] - ax; e2y = tris[m, 2, 1] - ay; e2z = tris[m, 2, 2] - az
        sx = -ax; sy = -ay; sz = -az
        qx = sy * e1z - sz * e1y
        qy = sz * e1x - sx * e1z
        qz = sx * e1y - sy * e1x
        for i in range(H):
            dy = (i - cy) / fy
            for j in range(W):
                dx = (j - cx) / fx
                px = dy * e2z - e2y
                py = e2x - dx * e2z
                pz = dx * e2y - dy * e2x
                det = e1x * px + e1y * py + e1z * pz
                if fabs(det) <= 1e-12:
                    continue
                inv = 1.0 / det
                uu = (sx * px + sy * py + sz * pz) * inv
                if uu < 0.0 or uu > 1.0:
                    continue
                vv = (dx * qx + dy * qy + qz) * inv
                if vv < 0.0 or uu + vv > 1.0:
                    continue
                tt = (e2x * qx + e2y * qy + e2z * qz) * inv
                if tt > 1e-9 and tt < depth[i, j]:
                    depth[i, j] = tt
                    ids[i, j] = m
    return depth_arr, ids_arr
