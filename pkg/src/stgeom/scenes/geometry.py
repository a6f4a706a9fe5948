"""Pinhole cameras, rotations and the 9-value camera encoding."""
from dataclasses import dataclass

import numpy as np


class BehindCameraError(ValueError):
    pass


@dataclass
class Pinhole:
    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray   # world -> camera rotation
    t: np.ndarray   # world -> camera translation

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        self.R = np.asarray(self.R, dtype=np.float64)
        self.t = np.asarray(self.t, dtype=np.float64)
        if not np.allclose(self.R @ self.R.T, np.eye(3), atol=1e-9) or np.linalg.det(self.R) < 0:
            raise ValueError("R must be a proper rotation")

    @property
    def center(self):
        return -self.R.T @ self.t

    def to_camera(self, p_world):
        return np.asarray(p_world, dtype=np.float64) @ self.R.T + self.t

    def to_world(self, p_cam):
        return (np.asarray(p_cam, dtype=np.float64) - self.t) @ self.R


def project_point(p_world, cam):
    """``(u, v, depth)`` of world points ``[..., 3]``; raises for z <= 0."""
    pc = cam.to_camera(p_world)
    z = pc[..., 2]
    if np.any(z <= 0):
        raise BehindCameraError("point behind camera")
    return cam.fx * pc[..., 0] / z + cam.cx, cam.fy * pc[..., 1] / z + cam.cy, z


def unproject(u, v, depth, cam):
    u, v, depth = (np.asarray(a, dtype=np.float64) for a in (u, v, depth))
    ray = np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u)], axis=-1)
    return cam.to_world(ray * depth[..., None])


def look_at(position, target, down=(0.0, 1.0, 0.0)):
    """World->camera (R, t) for a camera at ``position`` facing ``target``.

    Camera axes follow x right, y down, z forward.
    """
    position = np.asarray(position, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - position
    fwd /= np.linalg.norm(fwd)
    right = np.cross(np.asarray(down, dtype=np.float64), fwd)
    right /= np.linalg.norm(right)
    dn = np.cross(fwd, right)
    R = np.stack([right, dn, fwd])
    return R, -R @ position


def rot_y(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotmat_to_quat(R):
    """Rotation matrices ``[..., 3, 3]`` to unit quaternions (w, x, y, z), w >= 0."""
    R = np.asarray(R, dtype=np.float64)
    flat = R.reshape(-1, 3, 3)
    out = np.empty((flat.shape[0], 4))
    for k, m in enumerate(flat):
        tr = np.trace(m)
        if tr > 0:
            s = 2.0 * np.sqrt(tr + 1.0)
            q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
            q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        elif m[1, 1] > m[2, 2]:
            s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
            q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
            q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        q = np.asarray(q)
        q /= np.linalg.norm(q)
        out[k] = -q if q[0] < 0 else q
    return out.reshape(R.shape[:-2] + (4,))


def quat_to_rotmat(q):
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    R = np.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], axis=-1)
    return R.reshape(q.shape[:-1] + (3, 3))


def encode_cameras(R, t, fx, fy, H, W):
    """9-value encodings ``[..., 9]``: quaternion, translation, fx/W, fy/H."""
    R = np.asarray(R, dtype=np.float64)
    q = rotmat_to_quat(R)
    lead = R.shape[:-2]
    focal = np.broadcast_to(np.array([fx / W, fy / H]), lead + (2,))
    return np.concatenate([q, np.asarray(t, dtype=np.float64), focal], axis=-1)


def decode_cameras(g, H, W):
    """Inverse of :func:`encode_cameras`: (R, t, fx, fy) arrays."""
    g = np.asarray(g, dtype=np.float64)
    return quat_to_rotmat(g[..., 0:4]), g[..., 4:7], g[..., 7] * W, g[..., 8] * H


def camera_centers(R, t):
    """Camera centres ``-R^T t`` for stacks of world->camera poses."""
    return -np.einsum("...ji,...j->...i", R, t)


def pinhole_from_encoding(g, H, W):
    R, t, fx, fy = decode_cameras(g, H, W)
    return Pinhole(float(fx), float(fy), (W - 1) / 2.0, (H - 1) / 2.0, R, t)
