"""View-by-time token grid, subgrid sampling and attention masks."""
import enum
from dataclasses import dataclass

import numpy as np

from .numerics.tensor import Tensor, getitem

V_MAX = 8
T_MAX = 32


class CameraSetting(enum.Enum):
    MONO_STATIC = "mono-s"
    MONO_DYNAMIC = "mono-d"
    MULTI_STATIC = "multi-s"

    @property
    def monocular(self):
        return self is not CameraSetting.MULTI_STATIC

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).lower()
        for member in cls:
            if key in (member.value, member.name.lower()):
                return member
        raise ValueError(f"unknown camera setting {value!r}")


class MaskKind(enum.Enum):
    SPATIAL = "spatial"
    TEMPORAL = "temporal"


@dataclass(frozen=True)
class GridLayout:
    V: int
    T: int
    patch_rows: int
    patch_cols: int
    setting: CameraSetting = CameraSetting.MULTI_STATIC

    def __post_init__(self):
        object.__setattr__(self, "setting", CameraSetting.parse(self.setting))
        if self.V < 1 or self.T < 1 or self.patch_rows < 1 or self.patch_cols < 1:
            raise ValueError(f"grid dimensions must be positive: {self}")
        if self.setting.monocular and self.V != 1:
            raise ValueError(f"{self.setting.value} requires a single view, got V={self.V}")

    @property
    def P(self):
        return self.patch_rows * self.patch_cols

    @property
    def n(self):
        return self.V * self.T * self.P

    def flat_id(self, v, t, p):
        return (v * self.T + t) * self.P + p

    def cell_of(self, flat):
        vt, p = divmod(flat, self.P)
        v, t = divmod(vt, self.T)
        return v, t, p

    def coords(self):
        """Per-token (v, t, p) index arrays in flat order."""
        v, t, p = np.meshgrid(np.arange(self.V), np.arange(self.T), np.arange(self.P),
                              indexing="ij")
        return v.ravel(), t.ravel(), p.ravel()

    def with_dims(self, V, T):
        setting = self.setting
        return GridLayout(V, T, self.patch_rows, self.patch_cols, setting)


@dataclass
class TokenGrid:
    layout: GridLayout
    patch_tokens: Tensor          # [V, T, P, d]
    view_embed: Tensor            # [V_MAX, d]
    time_embed: Tensor            # [T_MAX, d]
    source_views: np.ndarray = None
    source_times: np.ndarray = None

    def __post_init__(self):
        L = self.layout
        if self.patch_tokens.shape[:3] != (L.V, L.T, L.P):
            raise ValueError(f"token shape {self.patch_tokens.shape} does not match layout {L}")
        if L.V > self.view_embed.shape[0] or L.T > self.time_embed.shape[0]:
            raise ValueError("grid exceeds embedding table capacity")
        if self.source_views is None:
            self.source_views = np.arange(L.V)
        if self.source_times is None:
            self.source_times = np.arange(L.T)

    @property
    def d(self):
        return self.patch_tokens.shape[-1]

    def flat_tokens(self):
        return self.patch_tokens.reshape(self.layout.n, self.d)

    def view_tokens(self):
        """View identifier for every cell, ``[V, 1, 1, d]`` (dense indices)."""
        return getitem(self.view_embed, slice(0, self.layout.V)).reshape(
            self.layout.V, 1, 1, self.d)

    def time_tokens(self):
        return getitem(self.time_embed, slice(0, self.layout.T)).reshape(
            1, self.layout.T, 1, self.d)


def patchify(frames, patch):
    """``[V, T, H, W, C]`` images to ``[V, T, P, patch*patch*C]`` patch vectors."""
    V, T, H, W, C = frames.shape
    if H % patch or W % patch:
        raise ValueError(f"image {H}x{W} not divisible by patch size {patch}")
    r, c = H // patch, W // patch
    x = frames.reshape(V, T, r, patch, c, patch, C).transpose(0, 1, 2, 4, 3, 5, 6)
    return x.reshape(V, T, r * c, patch * patch * C)


def build_grid(frames, layout, params, patch=8):
    """Embed frames into a :class:`TokenGrid`.

    ``params`` supplies ``encoder.patch_w``, ``encoder.patch_b``,
    ``encoder.pos`` and the identifier tables ``encoder.view`` and
    ``encoder.time``. Identifiers are carried on the grid and only added to
    tokens when a fusion module consumes them.
    """
    frames = np.asarray(frames, dtype=np.float64)
    V, T, H, W, _ = frames.shape
    if H % patch or W % patch:
        raise ValueError(f"image {H}x{W} not divisible by patch size {patch}")
    if (V, T, H // patch, W // patch) != (layout.V, layout.T, layout.patch_rows, layout.patch_cols):
        raise ValueError(f"frames {frames.shape} do not match layout {layout}")
    view_tab, time_tab = params["encoder.view"], params["encoder.time"]
    if V > view_tab.shape[0] or T > time_tab.shape[0]:
        raise ValueError(f"V={V}, T={T} exceed embedding tables "
                         f"({view_tab.shape[0]}, {time_tab.shape[0]})")
    pos = params["encoder.pos"]
    if layout.P > pos.shape[0]:
        raise ValueError(f"{layout.P} patches exceed position table {pos.shape[0]}")
    x = Tensor(patchify(frames, patch))
    tokens = x @ params["encoder.patch_w"] + params["encoder.patch_b"]
    tokens = tokens + getitem(pos, slice(0, layout.P))
    return TokenGrid(layout, tokens, view_tab, time_tab)


# ---------------------------------------------------------------- sampling


@dataclass
class SamplePolicy:
    min_views: int = 1
    max_views: int = None
    min_times: int = 1
    max_times: int = None
    seed: int = 0

    def bounds(self, V, T):
        hi_v = V if self.max_views is None else min(self.max_views, V)
        hi_t = T if self.max_times is None else min(self.max_times, T)
        if not (1 <= self.min_views <= hi_v and 1 <= self.min_times <= hi_t):
            raise ValueError(f"policy {self} incompatible with a {V}x{T} grid")
        return (self.min_views, hi_v), (self.min_times, hi_t)

    def rng(self):
        return np.random.default_rng(self.seed)


def draw_subgrid(V, T, policy, rng):
    """Pick sorted view indices and a contiguous time window."""
    (lo_v, hi_v), (lo_t, hi_t) = policy.bounds(V, T)
    k = int(rng.integers(lo_v, hi_v + 1))
    views = np.sort(rng.choice(V, size=k, replace=False))
    length = int(rng.integers(lo_t, hi_t + 1))
    start = int(rng.integers(0, T - length + 1))
    return views, np.arange(start, start + length)


def take_subgrid(grid, views, times):
    views, times = np.asarray(views), np.asarray(times)
    if views.size == 0 or times.size == 0:
        raise ValueError("empty subgrid")
    tokens = getitem(grid.patch_tokens, (views[:, None], times[None, :]))
    layout = grid.layout.with_dims(len(views), len(times))
    return TokenGrid(layout, tokens, grid.view_embed, grid.time_embed,
                     grid.source_views[views], grid.source_times[times])


def sample_subgrid(grid, policy, rng):
    views, times = draw_subgrid(grid.layout.V, grid.layout.T, policy, rng)
    return take_subgrid(grid, views, times)


# ------------------------------------------------------------------- masks


@dataclass(frozen=True, eq=False)
class AttentionMask:
    bits: np.ndarray
    kind: MaskKind
    layout: GridLayout
    window: int = None

    @property
    def n(self):
        return self.bits.shape[0]

    def __eq__(self, other):
        return (isinstance(other, AttentionMask) and self.kind == other.kind
                and self.layout == other.layout and self.window == other.window
                and np.array_equal(self.bits, other.bits))

    __hash__ = None


def build_spatial_mask(layout):
    """Tokens interact iff they share a time step (any view, any patch)."""
    _, t, _ = layout.coords()
    return AttentionMask(t[:, None] == t[None, :], MaskKind.SPATIAL, layout)


def build_temporal_mask(layout, S):
    """Per-patch temporal tubes: same view, same patch, ``|dt| <= S // 2``."""
    if S < 1 or S % 2 == 0:
        raise ValueError(f"temporal window must be odd and positive, got {S}")
    v, t, p = layout.coords()
    bits = ((v[:, None] == v[None, :]) & (p[:, None] == p[None, :])
            & (np.abs(t[:, None] - t[None, :]) <= S // 2))
    return AttentionMask(bits, MaskKind.TEMPORAL, layout, S)


def frame_mask(layout):
    """Same (view, time) cell; the intra-frame restriction of a spatial mask."""
    v, t, _ = layout.coords()
    cell = v * layout.T + t
    return cell[:, None] == cell[None, :]


def full_mask(layout, kind, window=None):
    n = layout.n
    return AttentionMask(np.ones((n, n), dtype=bool), kind, layout, window)


# ------------------------------------------------------------ text format


def format_mask(mask, window, setting):
    L = mask.layout
    setting = CameraSetting.parse(setting)
    lines = [f"{L.V} {L.T} {L.P} {window} {setting.value} {mask.kind.value}"]
    lines.extend("".join("1" if b else "0" for b in row) for row in mask.bits)
    return "\n".join(lines) + "\n"


def parse_mask(text):
    """Inverse of :func:`format_mask`: returns (header dict, bits)."""
    lines = text.strip("\n").split("\n")
    V, T, P, S, setting, kind = lines[0].split()
    header = dict(V=int(V), T=int(T), P=int(P), S=int(S),
                  setting=CameraSetting.parse(setting), kind=MaskKind(kind))
    bits = np.array([[c == "1" for c in row] for row in lines[1:]], dtype=bool)
    n = header["V"] * header["T"] * header["P"]
    if bits.shape != (n, n):
        raise ValueError(f"mask body {bits.shape} does not match header n={n}")
    return header, bits
