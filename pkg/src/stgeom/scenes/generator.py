"""Procedural dynamic scenes with exact geometric ground truth.

A scene is a textured ground plane and back wall plus a few rigid boxes, a
subset of which move. Frames are ray cast per pixel with a z-buffer, so
depth, dynamic masks, point maps and tracks are exact. All ground truth is
expressed in the coordinate frame of camera (view 0, time 0).
"""
import math
from dataclasses import asdict, dataclass

import numpy as np

from .. import kernels
from ..grid_masks import CameraSetting
from ..heads import TrackSet
from .geometry import Pinhole, encode_cameras, look_at, project_point, rot_y

GROUND_Y = 1.0
WALL_Z = 10.0
EXTENT = 40.0
FOCAL_RATIO = 0.9
N_BACKGROUND = 2            # object ids 0 (ground) and 1 (wall)


@dataclass(frozen=True)
class SceneConfig:
    V: int = 1
    T: int = 8
    H: int = 32
    W: int = 32
    setting: str = "mono-d"
    n_objects: int = 3
    motion: float = 1.0
    texture_seed: int = 0
    n_queries: int = 16
    patch: int = 8

    def __post_init__(self):
        setting = CameraSetting.parse(self.setting)
        object.__setattr__(self, "setting", setting.value)
        if setting.monocular and self.V != 1:
            raise ValueError(f"{setting.value} scenes have exactly one view")
        if self.V < 1 or self.T < 1 or self.n_objects < 0 or self.motion < 0:
            raise ValueError(f"invalid scene config {self}")
        if self.H % self.patch or self.W % self.patch:
            raise ValueError("image size must be divisible by the patch size")

    @property
    def camera_setting(self):
        return CameraSetting.parse(self.setting)

    def to_dict(self):
        return asdict(self)


@dataclass
class SceneSequence:
    config: SceneConfig
    seed: int
    frames: np.ndarray          # [V, T, H, W, 3]
    cam_R: np.ndarray           # [V, T, 3, 3] reference -> camera
    cam_t: np.ndarray           # [V, T, 3]
    fx: float
    fy: float
    depth: np.ndarray           # [V, T, H, W]
    valid: np.ndarray           # [V, T, H, W] bool
    dyn_mask: np.ndarray        # [V, T, H, W] {0, 1}
    object_id: np.ndarray       # [V, T, H, W] int, -1 where nothing was hit
    points: np.ndarray          # [V, T, 3, H, W]
    track_points: np.ndarray    # [V, T, N, 3] tracked surface points per view
    dynamic_ids: tuple = ()

    @property
    def V(self):
        return self.frames.shape[0]

    @property
    def T(self):
        return self.frames.shape[1]

    @property
    def H(self):
        return self.frames.shape[2]

    @property
    def W(self):
        return self.frames.shape[3]

    @property
    def cx(self):
        return (self.W - 1) / 2.0

    @property
    def cy(self):
        return (self.H - 1) / 2.0

    def pinhole(self, v, t):
        return Pinhole(self.fx, self.fy, self.cx, self.cy, self.cam_R[v, t], self.cam_t[v, t])

    @property
    def gt_cameras(self):
        return encode_cameras(self.cam_R, self.cam_t, self.fx, self.fy, self.H, self.W)

    def tracks_for_view(self, v, source_frame=0):
        pts = self.track_points[v]
        uv = np.empty(pts.shape[:2] + (2,))
        for t in range(self.T):
            u, vv, _ = project_point(pts[t], self.pinhole(v, t))
            uv[t] = np.stack([u, vv], axis=-1)
        return TrackSet(uv[source_frame].copy(), uv, pts.copy(), source_frame)

    @property
    def gt_tracks(self):
        return self.tracks_for_view(0)

    def subset(self, views, times):
        """Sub-sequence re-expressed in the frame of camera (views[0], times[0])."""
        views, times = np.asarray(views), np.asarray(times)
        ix = np.ix_(views, times)
        R, t = self.cam_R[ix], self.cam_t[ix]
        R0, t0 = R[0, 0], t[0, 0]
        Rn = R @ R0.T
        tn = t - np.einsum("vtij,j->vti", Rn, t0)
        points = np.einsum("ij,vtjhw->vtihw", R0, self.points[ix]) + t0[:, None, None]
        tracks = self.track_points[views][:, times] @ R0.T + t0
        return SceneSequence(
            self.config, self.seed, self.frames[ix], Rn, tn, self.fx, self.fy,
            self.depth[ix], self.valid[ix], self.dyn_mask[ix], self.object_id[ix],
            points, tracks, self.dynamic_ids)


# ------------------------------------------------------------- generation


class DegenerateSceneError(ValueError):
    pass


_BOX_FACES = np.array([
    [0, 2, 1], [0, 3, 2], [4, 5, 6], [4, 6, 7], [0, 1, 5], [0, 5, 4],
    [2, 3, 7], [2, 7, 6], [1, 2, 6], [1, 6, 5], [0, 4, 7], [0, 7, 3],
])


def _box_corners(half):
    sx, sy, sz = half
    return np.array([[-sx, -sy, -sz], [sx, -sy, -sz], [sx, sy, -sz], [-sx, sy, -sz],
                     [-sx, -sy, sz], [sx, -sy, sz], [sx, sy, sz], [-sx, sy, sz]])


class _Obj:
    def __init__(self, rng, center, half, dynamic, motion, T):
        self.center = np.asarray(center, dtype=np.float64)
        self.half = np.asarray(half, dtype=np.float64)
        self.yaw0 = rng.uniform(-0.6, 0.6)
        self.dynamic = dynamic
        self.amp = motion * np.array([rng.uniform(0.4, 0.7), 0.0, rng.uniform(0.1, 0.3)])
        self.freq = rng.uniform(1.2, 2.2) * math.pi / max(T, 2)
        self.phase = rng.uniform(0, 2 * math.pi, size=2)
        self.yaw_amp = motion * rng.uniform(0.2, 0.5)

    def pose(self, t):
        if not self.dynamic:
            return rot_y(self.yaw0), self.center
        w = self.freq * t
        offset = self.amp * np.array([np.sin(w + self.phase[0]), 0.0, np.sin(w + self.phase[1])])
        return rot_y(self.yaw0 + self.yaw_amp * np.sin(w + self.phase[1])), self.center + offset


def _texture_params(rng):
    return dict(
        base=rng.uniform(0.25, 0.75, size=3),
        freq=rng.normal(0.0, 1.0, size=(5, 3)) * rng.uniform(2.0, 5.0, size=(5, 1)),
        phase=rng.uniform(0, 2 * math.pi, size=5),
        weight=rng.uniform(-0.25, 0.25, size=(5, 3)),
    )


def _texture(local, tp):
    waves = np.sin(local @ tp["freq"].T + tp["phase"])          # [..., 5]
    return tp["base"] + waves @ tp["weight"]


def _camera_paths(cfg, rng):
    """World->camera (R, t) arrays ``[V, T, ...]`` for the configured setting."""
    V, T = cfg.V, cfg.T
    setting = cfg.camera_setting
    target = np.array([0.0, 0.6, 4.2]) + rng.uniform(-0.15, 0.15, size=3)
    if setting is CameraSetting.MULTI_STATIC:
        spread = np.linspace(-0.7, 0.7, V) if V > 1 else np.zeros(1)
        base = [np.array([x, rng.uniform(-0.75, -0.6), rng.uniform(-0.2, 0.2)]) for x in spread]
        amp = 0.15
    else:
        base = [np.array([rng.uniform(-0.2, 0.2), rng.uniform(-0.75, -0.6), 0.0])]
        amp = 0.0 if setting is CameraSetting.MONO_STATIC else 0.45
    freqs = rng.uniform(0.5, 1.2, size=3) * math.pi / max(T - 1, 1)
    phases = rng.uniform(0, 2 * math.pi, size=3)
    scale = np.array([1.0, 0.25, 0.6]) * amp
    R = np.empty((V, T, 3, 3))
    tr = np.empty((V, T, 3))
    for v in range(V):
        for t in range(T):
            pos = base[v] + scale * np.sin(freqs * t + phases)
            R[v, t], tr[v, t] = look_at(pos, target)
    return R, tr


def _place_objects(cfg, rng):
    objs = []
    n_dyn = 0 if cfg.motion == 0 else max(1, (cfg.n_objects + 1) // 2)
    for k in range(cfg.n_objects):
        for _ in range(200):
            half = rng.uniform([0.4, 0.35, 0.4], [0.6, 0.6, 0.6])
            center = np.array([rng.uniform(-1.2, 1.2), GROUND_Y - half[1], rng.uniform(3.0, 5.2)])
            if all(np.linalg.norm((center - o.center)[[0, 2]]) > 1.6 for o in objs):
                break
        objs.append(_Obj(rng, center, half, k < n_dyn, cfg.motion, cfg.T))
    return objs


def _background_tris():
    E = EXTENT
    g = np.array([[-E, GROUND_Y, -E], [E, GROUND_Y, -E], [E, GROUND_Y, WALL_Z], [-E, GROUND_Y, WALL_Z]])
    w = np.array([[-E, -E, WALL_Z], [E, -E, WALL_Z], [E, GROUND_Y, WALL_Z], [-E, GROUND_Y, WALL_Z]])
    quad = lambda c: np.stack([c[[0, 1, 2]], c[[0, 2, 3]]])
    return np.concatenate([quad(g), quad(w)]), np.array([0, 0, 1, 1])


def _scene_tris(objs, t):
    tris, owner = _background_tris()
    tris, owner = [tris], [owner]
    for k, o in enumerate(objs):
        Rk, ck = o.pose(t)
        corners = _box_corners(o.half) @ Rk.T + ck
        tris.append(corners[_BOX_FACES])
        owner.append(np.full(len(_BOX_FACES), N_BACKGROUND + k))
    return np.concatenate(tris), np.concatenate(owner)


def _object_local(world, ids, objs, t):
    """World points to the owning object's local frame (background: world)."""
    local = world.copy()
    for k, o in enumerate(objs):
        sel = ids == N_BACKGROUND + k
        if sel.any():
            Rk, ck = o.pose(t)
            local[sel] = (world[sel] - ck) @ Rk
    return local


def _local_to_world(local, ids, objs, t):
    world = local.copy()
    for k, o in enumerate(objs):
        sel = ids == N_BACKGROUND + k
        if sel.any():
            Rk, ck = o.pose(t)
            world[sel] = local[sel] @ Rk.T + ck
    return world


def _render(cfg, objs, textures, R, tcam, fx, fy, t):
    H, W = cfg.H, cfg.W
    cx, cy = (W - 1) / 2.0, (H - 1) / 2.0
    tris_w, owner = _scene_tris(objs, t)
    tris_c = tris_w @ R.T + tcam
    depth, tri = kernels.raycast(tris_c, fx, fy, cx, cy, H, W)
    valid = tri >= 0
    ids = np.where(valid, owner[np.maximum(tri, 0)], -1)
    jj, ii = np.meshgrid(np.arange(W, dtype=np.float64), np.arange(H, dtype=np.float64))
    ray = np.stack([(jj - cx) / fx, (ii - cy) / fy, np.ones_like(jj)], axis=-1)
    d = np.where(valid, depth, 0.0)
    p_cam = ray * d[..., None]
    world = (p_cam - tcam) @ R
    local = _object_local(world, ids, objs, t)
    n = np.cross(tris_w[:, 1] - tris_w[:, 0], tris_w[:, 2] - tris_w[:, 0])
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    light = np.array([0.4, -0.8, -0.45])
    light /= np.linalg.norm(light)
    shade = 0.55 + 0.45 * np.abs(n @ light)
    img = np.zeros((H, W, 3))
    for oid, tp in enumerate(textures):
        sel = ids == oid
        if sel.any():
            coords = local[sel] * (0.5 if oid < N_BACKGROUND else 1.0)
            img[sel] = _texture(coords, tp) * shade[tri[sel]][:, None]
    return np.clip(img, 0.0, 1.0), depth, valid, ids, world


def _sample_queries(cfg, rng, ids, world, dynamic_ids, objs, cams, fx, fy):
    """Pick query pixels whose tracks stay inside the image for every frame."""
    H, W, N = cfg.H, cfg.W, cfg.n_queries
    flat_ids = ids.ravel()
    pix = np.flatnonzero(flat_ids >= 0)
    dyn = pix[np.isin(flat_ids[pix], dynamic_ids)]
    static = pix[~np.isin(flat_ids[pix], dynamic_ids)]
    want_dyn = min(len(dyn), math.ceil(N / 2)) if len(dyn) else 0
    local = _object_local(world.reshape(-1, 3), flat_ids, objs, 0)

    def trajectory(i):
        pts = np.stack([_local_to_world(local[i:i + 1], flat_ids[i:i + 1], objs, t)[0]
                        for t in range(cfg.T)])
        return pts

    def in_bounds(pts):
        for t, (R, tc) in enumerate(cams):
            pc = pts[t] @ R.T + tc
            if pc[2] <= 0.1:
                return False
            u, v = fx * pc[0] / pc[2] + (W - 1) / 2.0, fy * pc[1] / pc[2] + (H - 1) / 2.0
            if not (0 <= u <= W - 1 and 0 <= v <= H - 1):
                return False
        return True

    chosen = []
    for pool, quota in ((dyn, want_dyn), (static, N)):
        taken = 0
        for i in rng.permutation(pool):
            if len(chosen) >= N or taken >= quota:
                break
            pts = trajectory(i)
            if in_bounds(pts):
                chosen.append(pts)
                taken += 1
    if not chosen:
        raise DegenerateSceneError("no trackable query pixels")
    return np.stack(chosen, axis=1)                      # [T, N, 3] world


def generate_scene(config, seed):
    """Render a :class:`SceneSequence` deterministically from ``(config, seed)``."""
    cfg = config
    rng = np.random.default_rng([seed, cfg.texture_seed])
    fx = fy = FOCAL_RATIO * cfg.W
    R, tc = _camera_paths(cfg, rng)
    objs = _place_objects(cfg, rng)
    tex_rng = np.random.default_rng([cfg.texture_seed, 17])
    textures = [_texture_params(tex_rng) for _ in range(N_BACKGROUND + len(objs))]
    dynamic_ids = tuple(N_BACKGROUND + k for k, o in enumerate(objs) if o.dynamic)

    V, T, H, W = cfg.V, cfg.T, cfg.H, cfg.W
    frames = np.empty((V, T, H, W, 3))
    depth = np.empty((V, T, H, W))
    valid = np.empty((V, T, H, W), dtype=bool)
    ids = np.empty((V, T, H, W), dtype=np.int64)
    world = np.empty((V, T, H, W, 3))
    for v in range(V):
        for t in range(T):
            frames[v, t], depth[v, t], valid[v, t], ids[v, t], world[v, t] = _render(
                cfg, objs, textures, R[v, t], tc[v, t], fx, fy, t)
    if not valid.any():
        raise DegenerateSceneError("no geometry in front of any camera")
    depth = np.where(valid, depth, 0.0)

    tracks_world = np.stack([
        _sample_queries(cfg, rng, ids[v, 0], world[v, 0], dynamic_ids, objs,
                        [(R[v, t], tc[v, t]) for t in range(T)], fx, fy)
        for v in range(V)])
    n_min = min(tr.shape[1] for tr in tracks_world) if V > 1 else tracks_world.shape[2]
    tracks_world = tracks_world[:, :, :n_min]

    # re-express everything in the frame of camera (0, 0)
    R0, t0 = R[0, 0], tc[0, 0]
    Rn = R @ R0.T
    tn = tc - np.einsum("vtij,j->vti", Rn, t0)
    points = np.where(valid[..., None], world @ R0.T + t0, 0.0).transpose(0, 1, 4, 2, 3)
    track_points = tracks_world @ R0.T + t0
    dyn_mask = np.isin(ids, dynamic_ids).astype(np.float64)
    return SceneSequence(cfg, seed, frames, Rn, tn, fx, fy, depth, valid, dyn_mask, ids,
                         np.ascontiguousarray(points), track_points, dynamic_ids)
