"""14-parameter Gaussians, ray-embedded feature maps and pixel-aligned decoding.

Raw grid channel layout (per pixel, 14 unconstrained reals)::

    0       depth along the pixel ray        -> near + (far - near) * sigmoid
    1, 2    in-plane offset (camera x, y)    -> offset_scale * tanh
    3..5    per-axis scale                   -> scale_min + (scale_max - scale_min) * sigmoid
    6..9    rotation quaternion (w, x, y, z) -> normalize(raw + (1, 0, 0, 0))
    10      opacity                          -> sigmoid
    11..13  color                            -> sigmoid
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, logit

from . import io as sio
from .geometry import Camera, pixel_rays

N_RAW = 14
CH_DEPTH = 0
CH_OFFSET = slice(1, 3)
CH_SCALE = slice(3, 6)
CH_ROT = slice(6, 10)
CH_OPACITY = 10
CH_COLOR = slice(11, 14)

PLY_FIELDS = (
    "x", "y", "z", "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3", "opacity", "r", "g", "b",
)


@dataclass(frozen=True)
class Gaussian3D:
    mean: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    opacity: float
    color: np.ndarray

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.mean, self.scale, self.rotation, [self.opacity], self.color])


@dataclass
class GaussianSet:
    """Structure-of-arrays container for ``n`` Gaussians."""

    means: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64).reshape(-1, 3)
        self.scales = np.asarray(self.scales, dtype=np.float64).reshape(-1, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(-1, 4)
        self.opacities = np.asarray(self.opacities, dtype=np.float64).reshape(-1)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        n = len(self.means)
        if not all(len(x) == n for x in (self.scales, self.rotations, self.opacities, self.colors)):
            raise ValueError("GaussianSet arrays have inconsistent lengths")

    def __len__(self):
        return len(self.means)

    def __getitem__(self, i) -> Gaussian3D:
        return Gaussian3D(self.means[i], self.scales[i], self.rotations[i], float(self.opacities[i]), self.colors[i])

    @classmethod
    def empty(cls) -> "GaussianSet":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0), np.zeros((0, 3)))

    @classmethod
    def from_gaussians(cls, items) -> "GaussianSet":
        items = list(items)
        if not items:
            return cls.empty()
        return cls.from_array(np.stack([g.to_vector() for g in items]))

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "GaussianSet":
        arr = np.asarray(arr, dtype=np.float64).reshape(-1, 14)
        return cls(arr[:, 0:3], arr[:, 3:6], arr[:, 6:10], arr[:, 10], arr[:, 11:14])

    def to_array(self) -> np.ndarray:
        return np.concatenate(
            [self.means, self.scales, self.rotations, self.opacities[:, None], self.colors], axis=1
        )

    def subset(self, idx) -> "GaussianSet":
        return GaussianSet(self.means[idx], self.scales[idx], self.rotations[idx], self.opacities[idx], self.colors[idx])

    def copy(self) -> "GaussianSet":
        return GaussianSet.from_array(self.to_array().copy())

    def validate(self, scale_min: float = 0.0, scale_max: float = np.inf) -> None:
        arr = self.to_array()
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite Gaussian parameters")
        if np.any((self.scales < scale_min) | (self.scales > scale_max)):
            raise ValueError("scale outside allowed range")
        if np.any((self.opacities < 0) | (self.opacities > 1)) or np.any((self.colors < 0) | (self.colors > 1)):
            raise ValueError("opacity/color outside [0, 1]")
        if len(self) and np.max(np.abs(np.linalg.norm(self.rotations, axis=1) - 1.0)) > 1e-6:
            raise ValueError("rotation quaternions are not unit length")


# ---------------------------------------------------------------------------
# ray embeddings
# ---------------------------------------------------------------------------

def ray_embedding(cam: Camera) -> np.ndarray:
    """Per-pixel Plücker embedding ``(H, W, 6)``: unit direction then moment ``o x d``."""
    o, d = pixel_rays(cam)
    return np.concatenate([d, np.cross(o, d)], axis=-1)


def ray_feature_map(image: np.ndarray, cam: Camera) -> np.ndarray:
    """RGB concatenated with the ray embedding of ``cam``: ``(H, W, 9)``."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (cam.height, cam.width, 3):
        raise ValueError(f"image shape {image.shape} does not match camera {cam.height}x{cam.width}")
    if np.any(image < 0) or np.any(image > 1):
        raise ValueError("image values must lie in [0, 1]")
    return np.concatenate([image, ray_embedding(cam)], axis=-1)


# ---------------------------------------------------------------------------
# pixel-aligned grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecodeConfig:
    near: float = 1.2
    far: float = 4.2
    offset_scale: float = 0.05
    scale_min: float = 1e-4
    scale_max: float = 0.3

    @classmethod
    def for_radius(cls, radius: float, **kw) -> "DecodeConfig":
        return cls(near=radius - 1.5, far=radius + 1.5, **kw)


@dataclass
class PixelGaussianGrid:
    raw: np.ndarray
    cameras: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=np.float64)
        self.cameras = tuple(self.cameras)
        if self.raw.ndim != 4 or self.raw.shape[-1] != N_RAW:
            raise ValueError(f"raw grid must be (V, H, W, {N_RAW}), got {self.raw.shape}")
        if len(self.cameras) != self.raw.shape[0]:
            raise ValueError("one camera per grid view is required")

    @property
    def shape(self):
        return self.raw.shape

    @property
    def n_gaussians(self) -> int:
        v, h, w, _ = self.raw.shape
        return v * h * w

    def copy(self) -> "PixelGaussianGrid":
        return PixelGaussianGrid(self.raw.copy(), self.cameras)

    def save(self, path) -> None:
        v, h, w, c = self.raw.shape
        sio.write_flat(path, self.raw, views=v, H=h, W=w, channels=c,
                       cameras=[cam.to_json() for cam in self.cameras])

    @classmethod
    def load(cls, path) -> "PixelGaussianGrid":
        arr, meta = sio.read_flat(path)
        return cls(arr.astype(np.float64), tuple(Camera.from_json(c) for c in meta["cameras"]))


@dataclass
class DecodeCache:
    """Intermediates of a decode, reused by :func:`decode_vjp`."""

    dirs: np.ndarray
    axes: np.ndarray
    quat_raw: np.ndarray
    quat_norm: np.ndarray
    fallback: np.ndarray
    set: GaussianSet


def _grid_rays(grid: PixelGaussianGrid):
    v, h, w, _ = grid.raw.shape
    origins = np.empty((v, h, w, 3))
    dirs = np.empty((v, h, w, 3))
    axes = np.empty((v, 2, 3))
    for i, cam in enumerate(grid.cameras):
        o, d = pixel_rays(cam.resized(w, h))
        origins[i], dirs[i] = o, d
        axes[i] = cam.rotation[:2]
    return origins, dirs, axes


def decode_pixel_gaussians(grid: PixelGaussianGrid, cfg: DecodeConfig | None = None, *, return_cache: bool = False):
    """Decode every grid pixel into one Gaussian, concatenated view by view."""
    cfg = cfg or DecodeConfig()
    raw = grid.raw
    if not np.all(np.isfinite(raw)):
        bad = np.argwhere(~np.isfinite(raw))[0]
        raise ValueError(f"non-finite raw value at view {bad[0]}, pixel ({bad[1]}, {bad[2]}), channel {bad[3]}")
    v, h, w, _ = raw.shape
    origins, dirs, axes = _grid_rays(grid)
    t = cfg.near + (cfg.far - cfg.near) * expit(raw[..., CH_DEPTH])
    off = cfg.offset_scale * np.tanh(raw[..., CH_OFFSET])
    means = (
        origins + t[..., None] * dirs
        + off[..., 0:1] * axes[:, None, None, 0, :]
        + off[..., 1:2] * axes[:, None, None, 1, :]
    )
    scales = cfg.scale_min + (cfg.scale_max - cfg.scale_min) * expit(raw[..., CH_SCALE])
    qb = raw[..., CH_ROT].copy()
    qb[..., 0] += 1.0
    qn = np.linalg.norm(qb, axis=-1)
    fallback = qn < 1e-12
    rot = np.where(fallback[..., None], np.array([1.0, 0.0, 0.0, 0.0]), qb / np.where(fallback, 1.0, qn)[..., None])
    gs = GaussianSet(
        means.reshape(-1, 3), scales.reshape(-1, 3), rot.reshape(-1, 4),
        expit(raw[..., CH_OPACITY]).reshape(-1), expit(raw[..., CH_COLOR]).reshape(-1, 3),
    )
    if return_cache:
        return gs, DecodeCache(dirs, axes, qb, qn, fallback, gs)
    return gs


def decode_vjp(grid: PixelGaussianGrid, cache: DecodeCache, grads, cfg: DecodeConfig | None = None) -> np.ndarray:
    """Pull post-activation Gaussian gradients back to raw grid space.

    ``grads`` is any object with ``means, scales, rotations, opacities,
    colors`` arrays shaped like the decoded set.
    """
    cfg = cfg or DecodeConfig()
    raw = grid.raw
    v, h, w, _ = raw.shape
    out = np.zeros_like(raw)
    g_mean = grads.means.reshape(v, h, w, 3)
    sd = expit(raw[..., CH_DEPTH])
    out[..., CH_DEPTH] = np.sum(g_mean * cache.dirs, axis=-1) * (cfg.far - cfg.near) * sd * (1 - sd)
    th = np.tanh(raw[..., CH_OFFSET])
    for k in range(2):
        proj = np.sum(g_mean * cache.axes[:, None, None, k, :], axis=-1)
        out[..., 1 + k] = proj * cfg.offset_scale * (1 - th[..., k] ** 2)
    ss = expit(raw[..., CH_SCALE])
    out[..., CH_SCALE] = grads.scales.reshape(v, h, w, 3) * (cfg.scale_max - cfg.scale_min) * ss * (1 - ss)
    g_rot = grads.rotations.reshape(v, h, w, 4)
    qn = np.where(cache.fallback, 1.0, cache.quat_norm)[..., None]
    q = cache.quat_raw / qn
    g_q = (g_rot - q * np.sum(q * g_rot, axis=-1, keepdims=True)) / qn
    out[..., CH_ROT] = np.where(cache.fallback[..., None], 0.0, g_q)
    so = expit(raw[..., CH_OPACITY])
    out[..., CH_OPACITY] = grads.opacities.reshape(v, h, w) * so * (1 - so)
    sc = expit(raw[..., CH_COLOR])
    out[..., CH_COLOR] = grads.colors.reshape(v, h, w, 3) * sc * (1 - sc)
    return out


def init_grid_from_images(cameras, images, masks, grid_hw, cfg: DecodeConfig | None = None,
                          *, scale: float = 0.02, opacity_in: float = 0.6, opacity_out: float = 0.05) -> PixelGaussianGrid:
    """Pixel-aligned starting grid built from each view's RGB feature channels.

    Colors come from the downsampled image, opacity from the downsampled
    silhouette, depth starts at the mid-range plane and rotation at identity.
    """
    cfg = cfg or DecodeConfig()
    gh, gw = grid_hw
    raw = np.zeros((len(cameras), gh, gw, N_RAW))
    for i, (cam, img, m) in enumerate(zip(cameras, images, masks)):
        feat = ray_feature_map(img, cam)
        rgb = _area_resize(feat[..., :3], gh, gw)
        cover = _area_resize(np.asarray(m, dtype=np.float64)[..., None], gh, gw)[..., 0]
        raw[i, ..., CH_COLOR] = logit(np.clip(rgb, 0.02, 0.98))
        op = opacity_out + (opacity_in - opacity_out) * cover
        raw[i, ..., CH_OPACITY] = logit(op)
    s = (scale - cfg.scale_min) / (cfg.scale_max - cfg.scale_min)
    raw[..., CH_SCALE] = logit(s)
    return PixelGaussianGrid(raw, tuple(cameras))


def _area_resize(img: np.ndarray, h: int, w: int) -> np.ndarray:
    H, W, C = img.shape
    if H % h or W % w:
        raise ValueError(f"cannot area-resize {H}x{W} to {h}x{w}")
    return img.reshape(h, H // h, w, W // w, C).mean(axis=(1, 3))


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------

class PlyError(ValueError):
    pass


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1", "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2", "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def ply_write(gset: GaussianSet, path, binary: bool = True) -> None:
    arr = gset.to_array()
    fmt = "binary_little_endian" if binary else "ascii"
    header = ["ply", f"format {fmt} 1.0", f"element vertex {len(arr)}"]
    header += [f"property double {name}" for name in PLY_FIELDS]
    header.append("end_header")
    head = ("\n".join(header) + "\n").encode("ascii")
    with open(path, "wb") as f:
        f.write(head)
        if binary:
            f.write(arr.astype("<f8").tobytes())
        else:
            for row in arr:
                f.write((" ".join(repr(float(x)) for x in row) + "\n").encode("ascii"))


def ply_read(path) -> GaussianSet:
    data = Path(path).read_bytes()
    pos = 0
    lines = []
    while True:
        end = data.find(b"\n", pos)
        if end < 0:
            raise PlyError(f"{path}: header not terminated by end_header (line {len(lines) + 1})")
        line = data[pos:end].decode("ascii", errors="replace").strip()
        pos = end + 1
        lines.append(line)
        if line == "end_header":
            break
    if lines[0] != "ply":
        raise PlyError(f"{path}: line 1: expected 'ply', got {lines[0]!r}")
    fmt, count, props, element = None, None, [], None
    for ln, line in enumerate(lines[1:-1], start=2):
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) != 3 or tok[1] not in ("ascii", "binary_little_endian", "binary_big_endian"):
                raise PlyError(f"{path}: line {ln}: unsupported format {line!r}")
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise PlyError(f"{path}: line {ln}: malformed element {line!r}")
            element = tok[1]
            if element == "vertex":
                count = int(tok[2])
            elif int(tok[2]) != 0:
                raise PlyError(f"{path}: line {ln}: only a vertex element is supported")
        elif tok[0] == "property":
            if len(tok) != 3 or tok[1] not in _PLY_TYPES:
                raise PlyError(f"{path}: line {ln}: unsupported property {line!r}")
            if element == "vertex":
                props.append((tok[2], _PLY_TYPES[tok[1]]))
        else:
            raise PlyError(f"{path}: line {ln}: unexpected header keyword {tok[0]!r}")
    if fmt is None or count is None:
        raise PlyError(f"{path}: header lacks format or vertex element")
    names = [p[0] for p in props]
    missing = [f for f in PLY_FIELDS if f not in names]
    if missing:
        raise PlyError(f"{path}: vertex element lacks properties {missing}")
    body = data[pos:]
    if fmt == "ascii":
        rows = body.decode("ascii", errors="replace").splitlines()
        rows = [r for r in rows if r.strip()]
        if len(rows) < count:
            raise PlyError(f"{path}: expected {count} vertex lines, found {len(rows)}")
        vals = np.empty((count, len(props)))
        for i in range(count):
            tok = rows[i].split()
            if len(tok) != len(props):
                raise PlyError(f"{path}: line {len(lines) + i + 1}: expected {len(props)} values, got {len(tok)}")
            try:
                vals[i] = [float(t) for t in tok]
            except ValueError as exc:
                raise PlyError(f"{path}: line {len(lines) + i + 1}: {exc}") from None
        table = {n: vals[:, k] for k, n in enumerate(names)}
    else:
        order = "<" if fmt == "binary_little_endian" else ">"
        dt = np.dtype([(n, order + t) for n, t in props])
        if len(body) < dt.itemsize * count:
            raise PlyError(f"{path}: binary body holds {len(body)} bytes, need {dt.itemsize * count}")
        rec = np.frombuffer(body, dtype=dt, count=count)
        table = {n: rec[n].astype(np.float64) for n in names}
    arr = np.stack([table[f] for f in PLY_FIELDS], axis=1) if count else np.zeros((0, 14))
    return GaussianSet.from_array(arr)
