"""Analytic capsule humanoid: exact SDF, sphere-traced reference renders,
surface distances and surface sampling."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from . import io as sio
from .geometry import Camera, normalize, pixel_rays

# Key light fixed in world space (from above and in front, in the x = 0 plane).
LIGHT_DIR = np.array([0.0, 0.6, 0.8])
AMBIENT = 0.25

JOINT_NAMES = (
    "pelvis", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle",
    "spine", "thorax", "neck", "head", "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
)
PARENTS = (0, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15)

# Rest pose, y up, subject facing +z, feet at y = -0.9 and crown at y = +0.9.
_REST_JOINTS = np.array([
    [0.0, 0.0, 0.0],
    [-0.1, -0.02, 0.0], [-0.1, -0.45, 0.01], [-0.1, -0.845, 0.0],
    [0.1, -0.02, 0.0], [0.1, -0.45, 0.01], [0.1, -0.845, 0.0],
    [0.0, 0.22, 0.0], [0.0, 0.47, 0.0], [0.0, 0.6, 0.0], [0.0, 0.8, 0.0],
    [0.19, 0.5, 0.0], [0.3, 0.24, 0.02], [0.37, 0.0, 0.04],
    [-0.19, 0.5, 0.0], [-0.3, 0.24, 0.02], [-0.37, 0.0, 0.04],
])

# Capsule radius of the bone ending at each joint (index 0 unused).
_BONE_RADII = np.array([
    0.0, 0.09, 0.075, 0.055, 0.09, 0.075, 0.055,
    0.13, 0.13, 0.05, 0.1, 0.06, 0.045, 0.038, 0.06, 0.045, 0.038,
])


class SceneError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Skeleton:
    joints: np.ndarray
    parents: tuple

    def __post_init__(self):
        j = np.array(self.joints, dtype=np.float64)
        if j.ndim != 2 or j.shape[1] != 3 or len(j) != len(self.parents) or len(j) == 0:
            raise SceneError("skeleton joints must be (J, 3) with one parent per joint")
        parents = tuple(int(p) for p in self.parents)
        if parents[0] != 0:
            raise SceneError("joint 0 must be the root (its own parent)")
        for i, p in enumerate(parents[1:], start=1):
            if not 0 <= p < i:
                raise SceneError(f"joint {i} has parent {p}; parents must precede children")
            if np.linalg.norm(j[i] - j[p]) <= 0.0:
                raise SceneError(f"bone {p}->{i} has zero length")
        if not np.all(np.isfinite(j)):
            raise SceneError("non-finite joint coordinates")
        j.setflags(write=False)
        object.__setattr__(self, "joints", j)
        object.__setattr__(self, "parents", parents)

    @property
    def bones(self) -> list[tuple[int, int]]:
        return [(p, i) for i, p in enumerate(self.parents) if i != 0]

    def descendants(self, joint: int) -> list[int]:
        out = []
        for i in range(joint + 1, len(self.parents)):
            if self.parents[i] == joint or self.parents[i] in out:
                out.append(i)
        return out

    def rotate_subtree(self, joint: int, axis, angle_deg: float) -> "Skeleton":
        """Rotate every descendant of ``joint`` about that joint."""
        axis = normalize(axis)
        a = math.radians(angle_deg)
        k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
        rot = np.eye(3) + math.sin(a) * k + (1 - math.cos(a)) * (k @ k)
        j = self.joints.copy()
        idx = self.descendants(joint)
        j[idx] = (j[idx] - j[joint]) @ rot.T + j[joint]
        return Skeleton(j, self.parents)

    def to_json(self) -> dict:
        return {"joints": self.joints.tolist(), "parents": list(self.parents)}


def rest_skeleton() -> Skeleton:
    return Skeleton(_REST_JOINTS.copy(), PARENTS)


def posed_skeleton(seed: int | None) -> Skeleton:
    """Rest pose, or for a non-None seed a mildly perturbed pose (arms and legs)."""
    skel = rest_skeleton()
    if seed is None:
        return skel
    rng = np.random.default_rng(seed)
    for joint, lim in ((11, 35.0), (14, 35.0), (12, 30.0), (15, 30.0), (1, 15.0), (4, 15.0)):
        skel = skel.rotate_subtree(joint, rng.normal(size=3), float(rng.uniform(-lim, lim)))
    return skel


@dataclass(frozen=True, eq=False)
class CapsuleScene:
    a: np.ndarray
    b: np.ndarray
    radii: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        arrs = [np.array(x, dtype=np.float64) for x in (self.a, self.b, self.radii, self.colors)]
        a, b, r, c = arrs
        a, b, c = a.reshape(-1, 3), b.reshape(-1, 3), c.reshape(-1, 3)
        r = r.reshape(-1)
        if not (len(a) == len(b) == len(r) == len(c)):
            raise SceneError("capsule arrays must have equal length")
        if np.any(r <= 0):
            raise SceneError("capsule radii must be positive")
        if np.any((c < 0) | (c > 1)):
            raise SceneError("capsule colors must lie in [0, 1]")
        for name, x in zip(("a", "b", "radii", "colors"), (a, b, r, c)):
            x.setflags(write=False)
            object.__setattr__(self, name, x)

    def __len__(self):
        return len(self.radii)

    @classmethod
    def from_bones(cls, bones) -> "CapsuleScene":
        bones = list(bones)
        if not bones:
            return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)))
        a, b, r, c = zip(*bones)
        return cls(np.array(a), np.array(b), np.array(r), np.array(c))

    def bounding_radius(self) -> float:
        ends = np.concatenate([self.a, self.b])
        rr = np.concatenate([self.radii, self.radii])
        return float(np.max(np.linalg.norm(ends, axis=1) + rr))

    def to_json(self) -> dict:
        return {
            "bones": [
                {"a": self.a[i].tolist(), "b": self.b[i].tolist(), "radius": float(self.radii[i]),
                 "color": self.colors[i].tolist()}
                for i in range(len(self))
            ]
        }

    @classmethod
    def from_json(cls, d: dict) -> "CapsuleScene":
        return cls.from_bones((x["a"], x["b"], x["radius"], x["color"]) for x in d["bones"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path) -> "CapsuleScene":
        return cls.from_json(json.loads(Path(path).read_text()))


def _bone_colors(n: int) -> np.ndarray:
    # evenly spaced hues, alternating value so neighbours stay distinct
    hues = (np.arange(n) * 0.61803398875) % 1.0
    out = np.empty((n, 3))
    for i, h in enumerate(hues):
        v = 0.9 if i % 2 == 0 else 0.7
        s = 0.65
        k = (np.array([5.0, 3.0, 1.0]) + h * 6.0) % 6.0
        out[i] = v - v * s * np.clip(np.minimum(k, 4.0 - k), 0.0, 1.0)
    return out


def default_humanoid(pose: Skeleton | None = None) -> CapsuleScene:
    """One capsule per bone with fixed anthropometric radii and distinct colors."""
    pose = rest_skeleton() if pose is None else pose
    if len(pose.parents) != len(PARENTS):
        raise SceneError(f"default humanoid needs the {len(PARENTS)}-joint topology, got {len(pose.parents)} joints")
    if tuple(pose.parents) != PARENTS:
        raise SceneError("skeleton topology does not match the default 17-joint tree")
    colors = _bone_colors(len(PARENTS) - 1)
    bones = []
    for k, (p, i) in enumerate(pose.bones):
        bones.append((pose.joints[p], pose.joints[i], _BONE_RADII[i], colors[k]))
    return CapsuleScene.from_bones(bones)


# ---------------------------------------------------------------------------
# signed distances
# ---------------------------------------------------------------------------

def capsule_sdf(p, a, b, r) -> np.ndarray:
    """Exact signed distance to a capsule; ``p`` may be ``(..., 3)``."""
    p = np.asarray(p, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    ba = np.asarray(b, dtype=np.float64) - a
    pa = p - a
    denom = float(ba @ ba)
    h = np.zeros(pa.shape[:-1]) if denom == 0.0 else np.clip(pa @ ba / denom, 0.0, 1.0)
    return np.linalg.norm(pa - h[..., None] * ba, axis=-1) - r


def _check_nonempty(scene: CapsuleScene):
    if len(scene) == 0:
        raise SceneError("scene has no capsules")


def scene_sdf(scene: CapsuleScene, p) -> tuple[np.ndarray, np.ndarray]:
    """Union SDF and the index of the nearest capsule (lowest index on ties)."""
    _check_nonempty(scene)
    p = np.asarray(p, dtype=np.float64)
    d = np.stack([capsule_sdf(p, scene.a[i], scene.b[i], scene.radii[i]) for i in range(len(scene))], axis=-1)
    idx = np.argmin(d, axis=-1)
    return np.take_along_axis(d, idx[..., None], axis=-1)[..., 0], idx


def surface_distance(scene: CapsuleScene, p) -> np.ndarray:
    return np.abs(scene_sdf(scene, p)[0])


def _capsule_gradient(p, a, b) -> np.ndarray:
    ba = b - a
    pa = p - a
    denom = float(ba @ ba)
    h = np.zeros(len(p)) if denom == 0.0 else np.clip(pa @ ba / denom, 0.0, 1.0)
    return normalize(pa - h[:, None] * ba)


def sample_surface(scene: CapsuleScene, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Area-weighted samples on the union surface, with outward unit normals.

    Points falling inside another capsule are rejected, so every sample lies
    on the boundary of the union.
    """
    _check_nonempty(scene)
    if n < 1:
        raise SceneError("n must be >= 1")
    rng = np.random.default_rng(seed)
    lengths = np.linalg.norm(scene.b - scene.a, axis=1)
    r = scene.radii
    cyl = 2 * np.pi * r * lengths
    sph = 4 * np.pi * r * r
    probs = (cyl + sph) / np.sum(cyl + sph)
    pts_out, nrm_out, have = [], [], 0
    while have < n:
        m = max(2 * (n - have), 256)
        k = rng.choice(len(scene), size=m, p=probs)
        a, b, rr, L = scene.a[k], scene.b[k], r[k], lengths[k]
        axis = np.where(L[:, None] > 0, (b - a) / np.where(L > 0, L, 1.0)[:, None], np.array([0.0, 1.0, 0.0]))
        # orthonormal frame around the axis
        helper = np.where(np.abs(axis[:, :1]) < 0.9, np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]))
        e1 = normalize(np.cross(axis, helper))
        e2 = np.cross(axis, e1)
        on_cyl = rng.random(m) < cyl[k] / (cyl[k] + sph[k])
        theta = rng.uniform(0, 2 * np.pi, m)
        radial = np.cos(theta)[:, None] * e1 + np.sin(theta)[:, None] * e2
        t = rng.random(m)
        p_cyl = a + t[:, None] * (b - a) + rr[:, None] * radial
        d = normalize(rng.normal(size=(m, 3)))
        up = (d * axis).sum(1) >= 0
        p_sph = np.where(up[:, None], b, a) + rr[:, None] * d
        pts = np.where(on_cyl[:, None], p_cyl, p_sph)
        keep = np.ones(m, dtype=bool)
        for i in range(len(scene)):
            other = capsule_sdf(pts, scene.a[i], scene.b[i], scene.radii[i])
            keep &= (k == i) | (other >= 0.0)
        pts, k = pts[keep], k[keep]
        normals = np.empty_like(pts)
        for i in np.unique(k):
            sel = k == i
            normals[sel] = _capsule_gradient(pts[sel], scene.a[i], scene.b[i])
        pts_out.append(pts)
        nrm_out.append(normals)
        have += len(pts)
    return np.concatenate(pts_out)[:n], np.concatenate(nrm_out)[:n]


# ---------------------------------------------------------------------------
# sphere tracing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RaymarchConfig:
    max_steps: int = 256
    hit_eps: float = 1e-4
    max_distance: float = 5.4
    shading: str = "lambert"  # or "flat"
    background: tuple = (0.0, 0.0, 0.0)
    normal_eps: float = 1e-5


@dataclass
class ReferenceRender:
    rgb: np.ndarray
    alpha: np.ndarray
    depth: np.ndarray
    normal: np.ndarray

    def save(self, stem) -> None:
        stem = str(stem)
        sio.save_rgb_png(stem + "_rgb.png", self.rgb)
        sio.save_gray_png(stem + "_alpha.png", self.alpha)
        sio.write_flat(stem + "_depth.bin", self.depth.astype(np.float32), kind="depth", units="scene")


@numba.njit(cache=True, nogil=True)
def _sdf_point(px, py, pz, a, b, r):
    best = np.inf
    arg = 0
    for i in range(a.shape[0]):
        bax = b[i, 0] - a[i, 0]
        bay = b[i, 1] - a[i, 1]
        baz = b[i, 2] - a[i, 2]
        pax = px - a[i, 0]
        pay = py - a[i, 1]
        paz = pz - a[i, 2]
        den = bax * bax + bay * bay + baz * baz
        h = 0.0
        if den > 0.0:
            h = (pax * bax + pay * bay + paz * baz) / den
            h = min(max(h, 0.0), 1.0)
        dx = pax - h * bax
        dy = pay - h * bay
        dz = paz - h * baz
        d = math.sqrt(dx * dx + dy * dy + dz * dz) - r[i]
        if d < best:
            best = d
            arg = i
    return best, arg


@numba.njit(cache=True, nogil=True)
def _raymarch_kernel(origins, dirs, forward, a, b, r, colors, light, ambient, flat,
                     max_steps, hit_eps, max_dist, nrm_eps, bg, rgb, alpha, depth, normal):
    h, w = dirs.shape[0], dirs.shape[1]
    for y in range(h):
        for x in range(w):
            ox, oy, oz = origins[y, x, 0], origins[y, x, 1], origins[y, x, 2]
            dx, dy, dz = dirs[y, x, 0], dirs[y, x, 1], dirs[y, x, 2]
            t = 0.0
            hit = False
            idx = 0
            if a.shape[0] > 0:
                for _ in range(max_steps):
                    d, idx = _sdf_point(ox + t * dx, oy + t * dy, oz + t * dz, a, b, r)
                    if d < hit_eps:
                        hit = True
                        break
                    t += d
                    if t > max_dist:
                        break
            if not hit:
                for c in range(3):
                    rgb[y, x, c] = bg[c]
                continue
            px, py, pz = ox + t * dx, oy + t * dy, oz + t * dz
            e = nrm_eps
            gx = _sdf_point(px + e, py, pz, a, b, r)[0] - _sdf_point(px - e, py, pz, a, b, r)[0]
            gy = _sdf_point(px, py + e, pz, a, b, r)[0] - _sdf_point(px, py - e, pz, a, b, r)[0]
            gz = _sdf_point(px, py, pz + e, a, b, r)[0] - _sdf_point(px, py, pz - e, a, b, r)[0]
            gn = math.sqrt(gx * gx + gy * gy + gz * gz)
            if gn > 0.0:
                gx /= gn
                gy /= gn
                gz /= gn
            normal[y, x, 0] = gx
            normal[y, x, 1] = gy
            normal[y, x, 2] = gz
            shade = 1.0
            if not flat:
                lam = max(0.0, gx * light[0] + gy * light[1] + gz * light[2])
                shade = ambient + (1.0 - ambient) * lam
            for c in range(3):
                rgb[y, x, c] = colors[idx, c] * shade
            alpha[y, x] = 1.0
            depth[y, x] = t * (dx * forward[0] + dy * forward[1] + dz * forward[2])


def raymarch_render(scene: CapsuleScene, cam: Camera, cfg: RaymarchConfig | None = None) -> ReferenceRender:
    """Sphere-traced reference render with exact hit silhouettes.

    Colors are Lambert-shaded under a world-fixed key light plus ambient
    (``cfg.shading == "flat"`` returns the raw bone colors).  Misses get the
    background color, zero depth and zero normal.
    """
    cfg = cfg or RaymarchConfig()
    o, d = pixel_rays(cam)
    h, w = cam.height, cam.width
    rgb = np.zeros((h, w, 3))
    alpha = np.zeros((h, w))
    depth = np.zeros((h, w))
    normal = np.zeros((h, w, 3))
    _raymarch_kernel(
        o, d, cam.optical_axis, np.ascontiguousarray(scene.a), np.ascontiguousarray(scene.b),
        np.ascontiguousarray(scene.radii), np.ascontiguousarray(scene.colors), normalize(LIGHT_DIR),
        AMBIENT, cfg.shading == "flat", cfg.max_steps, cfg.hit_eps, cfg.max_distance, cfg.normal_eps,
        np.asarray(cfg.background, dtype=np.float64), rgb, alpha, depth, normal,
    )
    return ReferenceRender(rgb, alpha, depth, normal)
