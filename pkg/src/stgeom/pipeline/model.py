"""Model assembly: parameter groups, forward pass and per-task losses."""
import hashlib
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .. import heads as H
from ..fusion import (
    FusionConfig,
    cross_time_local_fusion,
    cross_view_global_fusion,
    init_ctlf,
    init_cvgf,
)
from ..grid_masks import (
    T_MAX,
    V_MAX,
    GridLayout,
    MaskKind,
    build_grid,
    build_spatial_mask,
    build_temporal_mask,
    full_mask,
)
from ..losses import (
    camera_loss,
    depth_loss,
    mask_loss,
    point_loss,
    tracking_loss,
)
from ..numerics.container import load, save
from ..numerics.functional import init_linear
from ..numerics.tensor import Tensor

GROUPS = ("encoder", "cvgf", "ctlf", "head_cam", "head_dense", "head_track")
TASK_GROUP = {"cam": "head_cam", "depth": "head_dense", "mask": "head_dense",
              "point": "head_dense", "track": "head_track"}
MAX_PATCHES = 64


@dataclass(frozen=True)
class ModelConfig:
    d: int = 64
    heads: int = 4
    L: int = 4
    S: int = 3
    patch: int = 8
    dense_dim: int = 16
    track_dim: int = 16
    ctlf_single_kv: bool = False
    use_cvgf: bool = True
    use_ctlf: bool = True
    spatial_mask: bool = True
    temporal_mask: bool = True
    track_loss: str = "chamfer"
    track_coarse_weight: float = 1.0

    @property
    def fusion(self):
        return FusionConfig(L=self.L, S=self.S, d=self.d, heads=self.heads,
                            ctlf_single_kv=self.ctlf_single_kv)

    @property
    def head(self):
        return H.HeadConfig(d=self.d, heads=self.heads, dense_dim=self.dense_dim,
                            track_dim=self.track_dim, patch=self.patch)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def group_of(name):
    g = name.split(".", 1)[0]
    if g not in GROUPS:
        raise KeyError(f"parameter {name!r} belongs to no group")
    return g


@dataclass
class ModelParams:
    """All learnable tensors, keyed ``<group>.<...>``."""
    tensors: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def keys(self):
        return self.tensors.keys()

    def names(self, groups=GROUPS):
        groups = set(groups)
        return [k for k in self.tensors if group_of(k) in groups]

    def subset(self, groups):
        return {k: self.tensors[k] for k in self.names(groups)}

    def set_trainable(self, groups):
        """``requires_grad`` on exactly the parameters of ``groups``."""
        groups = set(groups)
        for k, t in self.tensors.items():
            t.requires_grad = group_of(k) in groups

    def checksum(self, groups=GROUPS):
        h = hashlib.sha256()
        for k in sorted(self.names(groups)):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.tensors[k].data).tobytes())
        return h.hexdigest()

    def arrays(self):
        return {k: t.data for k, t in self.tensors.items()}

    def copy(self):
        return ModelParams({k: Tensor(t.data.copy(), requires_grad=t.requires_grad)
                            for k, t in self.tensors.items()})

    def save(self, path, extra=None):
        arrays = dict(self.arrays())
        for k, v in (extra or {}).items():
            arrays["meta." + k] = np.asarray(v, dtype=np.float64)
        save(path, arrays)

    @classmethod
    def load(cls, path):
        arrays = load(path)
        meta = {k[5:]: v for k, v in arrays.items() if k.startswith("meta.")}
        tensors = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()
                   if not k.startswith("meta.")}
        for k in tensors:
            group_of(k)
        return cls(tensors), meta


def init_params(cfg, seed):
    rng = np.random.default_rng(seed)
    d = cfg.d
    p = {
        "encoder.patch_w": init_linear(rng, cfg.patch * cfg.patch * 3, d),
        "encoder.patch_b": Tensor(np.zeros(d), requires_grad=True),
        "encoder.pos": Tensor(rng.normal(0, 0.1, (MAX_PATCHES, d)), requires_grad=True),
        "encoder.view": Tensor(rng.normal(0, 0.1, (V_MAX, d)), requires_grad=True),
        "encoder.time": Tensor(rng.normal(0, 0.1, (T_MAX, d)), requires_grad=True),
    }
    p.update(init_cvgf(rng, cfg.fusion))
    p.update(init_ctlf(rng, cfg.fusion))
    p.update(H.init_camera_head(rng, cfg.head))
    p.update(H.init_dense_head(rng, cfg.head))
    p.update(H.init_track_head(rng, cfg.head))
    return ModelParams(p)


def layout_for(frames, cfg, setting):
    V, T, Hh, W, _ = frames.shape
    return GridLayout(V, T, Hh // cfg.patch, W // cfg.patch, setting)


def masks_for(layout, cfg):
    spatial = (build_spatial_mask(layout) if cfg.spatial_mask
               else full_mask(layout, MaskKind.SPATIAL))
    temporal = (build_temporal_mask(layout, cfg.S) if cfg.temporal_mask
                else full_mask(layout, MaskKind.TEMPORAL, cfg.S))
    return spatial, temporal


@dataclass
class Features:
    """Fused token features shared by all heads."""
    layout: GridLayout
    F_S: Tensor
    F_T: Tensor
    ident: Tensor       # [V, T, d] view + time identifiers


def encode(params, cfg, frames, setting, need_temporal=True):
    """Grid embedding followed by both fusion modules.

    Disabled fusion modules are bypassed by their identifier-augmented input
    tokens; disabled masks become all-true.
    """
    frames = np.asarray(frames, dtype=np.float64)
    V, T = frames.shape[:2]
    layout = layout_for(frames, cfg, setting)
    grid = build_grid(frames, layout, params, cfg.patch)
    spatial, temporal = masks_for(layout, cfg)
    fcfg = cfg.fusion
    F_S = (cross_view_global_fusion(grid, spatial, fcfg, params) if cfg.use_cvgf
           else grid.patch_tokens + grid.view_tokens())
    F_T = None
    if need_temporal:
        F_T = (cross_time_local_fusion(grid, temporal, fcfg, params) if cfg.use_ctlf
               else grid.patch_tokens + grid.time_tokens())
    ident = (grid.view_tokens() + grid.time_tokens()).reshape(V, T, cfg.d)
    return Features(layout, F_S, F_T, ident)


def predict_heads(params, cfg, feats, tasks, queries=None, source_frame=0):
    """Head outputs for ``tasks`` from precomputed :class:`Features`."""
    tasks = set(tasks)
    L = feats.layout
    V, T = L.V, L.T
    Hh, W = L.patch_rows * cfg.patch, L.patch_cols * cfg.patch
    out = {}
    if tasks & {"cam", "track"}:
        out["cam"] = H.camera_head(feats.F_S, params, cfg.heads, feats.ident)
    if not tasks & {"depth", "mask", "point", "track"}:
        return out
    shape = (L.patch_rows, L.patch_cols)
    F_D = H.dense_decoder(feats.F_S, feats.F_T, params, shape, cfg.patch)
    if tasks & {"depth", "track"}:
        depth = H.depth_head(F_D, params)
        out["depth"] = depth.reshape(V, T, Hh, W)
    if "mask" in tasks:
        out["mask"] = H.mask_head(F_D, params).reshape(V, T, Hh, W)
    if "point" in tasks:
        out["point"] = H.point_head(F_D, params).reshape(V, T, 3, Hh, W)
    if "track" in tasks:
        if queries is None:
            raise ValueError("tracking needs query pixels")
        out["track"] = H.tracking_head(feats.F_T, F_D, queries, out["cam"], depth, params,
                                       cfg.patch, shape, 0, source_frame)
    return out


def forward(params, cfg, frames, setting, tasks, queries=None, source_frame=0):
    """Predictions for ``tasks`` on frames ``[V, T, H, W, 3]``.

    Returns a dict with any of ``cam [V, T, 9]``, ``depth [V, T, H, W]``,
    ``mask [V, T, H, W]``, ``point [V, T, 3, H, W]`` and ``track`` (view 0
    tracks of ``queries``).
    """
    tasks = set(tasks)
    feats = encode(params, cfg, frames, setting,
                   need_temporal=bool(tasks & {"depth", "mask", "point", "track"}))
    return predict_heads(params, cfg, feats, tasks, queries, source_frame)


def task_losses(pred, scene, cfg, tasks, sum_reduction=False):
    """Per-task scalar losses of ``pred`` against a :class:`SceneSequence`."""
    out = {}
    if "cam" in tasks:
        out["cam"] = camera_loss(pred["cam"], scene.gt_cameras, sum_reduction=sum_reduction)
    if "depth" in tasks:
        out["depth"] = depth_loss(pred["depth"], scene.depth, scene.valid, sum_reduction)
    if "mask" in tasks:
        out["mask"] = mask_loss(pred["mask"], scene.dyn_mask, sum_reduction)
    if "point" in tasks:
        out["point"] = point_loss(pred["point"], scene.points, scene.valid, sum_reduction)
    if "track" in tasks:
        out["track"] = tracking_loss(pred["track"], scene.gt_tracks, (scene.H, scene.W),
                                     cfg.track_loss, cfg.track_coarse_weight, sum_reduction)
    return out


def with_ablation(cfg, **flags):
    return replace(cfg, **flags)
