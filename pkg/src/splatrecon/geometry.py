"""Camera models, quaternions and perspective projection.

Conventions: right-handed world with +y up; cameras look down their local
+z axis with +x to the right and +y pointing down the image (v grows
downward).  Pixel ``(u, v)`` covers ``[u, u+1) x [v, v+1)`` and is sampled at
its center ``(u + 0.5, v + 0.5)``.  Scene units are meters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    """Raised for degenerate geometric inputs (bad FOV, point behind camera...)."""


def normalize(v: np.ndarray, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v, axis=axis, keepdims=True)


def quat_to_rotmat(q) -> np.ndarray:
    """Rotation matrix of a unit quaternion ``(w, x, y, z)``.

    Accepts a single quaternion ``(4,)`` or a batch ``(..., 4)``.  The
    quadratic form is used as-is (no renormalization), so ``q`` and ``-q``
    give identical matrices.
    """
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    r = np.empty(q.shape[:-1] + (3, 3))
    r[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    r[..., 0, 1] = 2.0 * (x * y - w * z)
    r[..., 0, 2] = 2.0 * (x * z + w * y)
    r[..., 1, 0] = 2.0 * (x * y + w * z)
    r[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    r[..., 1, 2] = 2.0 * (y * z - w * x)
    r[..., 2, 0] = 2.0 * (x * z - w * y)
    r[..., 2, 1] = 2.0 * (y * z + w * x)
    r[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return r


def rotation_about_y(angle_deg: float) -> np.ndarray:
    a = math.radians(angle_deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass(frozen=True)
class CameraIntrinsics:
    width: int
    height: int
    fov_y: float
    fx: float
    fy: float
    cx: float
    cy: float

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


def intrinsics_from_fov(fov_y: float, width: int, height: int, min_size: int = 8) -> CameraIntrinsics:
    """Pinhole intrinsics with square pixels and a centered principal point."""
    if not (0.0 < fov_y < 180.0) or not math.isfinite(fov_y):
        raise GeometryError(f"fov_y must lie in (0, 180) degrees, got {fov_y}")
    if width < min_size or height < min_size:
        raise GeometryError(f"image must be at least {min_size}x{min_size} pixels, got {width}x{height}")
    f = (height / 2.0) / math.tan(fov_y * math.pi / 360.0)
    return CameraIntrinsics(int(width), int(height), float(fov_y), f, f, width / 2.0, height / 2.0)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def sample(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass(frozen=True, eq=False)
class Camera:
    """Perspective camera; ``rotation`` maps world directions to camera axes."""

    intrinsics: CameraIntrinsics
    rotation: np.ndarray
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        pos = np.array(self.position, dtype=np.float64).reshape(3)
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(rot) - 1.0) > 1e-6:
            raise GeometryError("camera rotation must be orthonormal with determinant +1")
        rot.setflags(write=False)
        pos.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "position", pos)

    def __eq__(self, other):
        if not isinstance(other, Camera):
            return NotImplemented
        return (
            self.intrinsics == other.intrinsics
            and np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.position, other.position)
        )

    def __hash__(self):
        return hash((self.intrinsics, self.rotation.tobytes(), self.position.tobytes()))

    @property
    def width(self) -> int:
        return self.intrinsics.width

    @property
    def height(self) -> int:
        return self.intrinsics.height

    @property
    def optical_axis(self) -> np.ndarray:
        """World-space viewing direction (camera +z)."""
        return self.rotation[2].copy()

    def same_pose(self, other: "Camera", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol)
            and np.allclose(self.position, other.position, atol=atol)
        )

    def world_to_camera(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        return (p - self.position) @ self.rotation.T

    def resized(self, width: int, height: int) -> "Camera":
        """Same pose and vertical FOV at a different resolution."""
        intr = intrinsics_from_fov(self.intrinsics.fov_y, width, height, min_size=1)
        return Camera(intr, self.rotation, self.position)

    def to_json(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "fov_y_deg": self.intrinsics.fov_y,
            "rotation": [float(v) for v in self.rotation.reshape(-1)],
            "position": [float(v) for v in self.position],
        }

    @classmethod
    def from_json(cls, d: dict) -> "Camera":
        intr = intrinsics_from_fov(float(d["fov_y_deg"]), int(d["width"]), int(d["height"]), min_size=1)
        return cls(intr, np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3), np.asarray(d["position"]))


def look_at_rotation(position, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """World-to-camera rotation for a camera at ``position`` looking at ``target``."""
    position = np.asarray(position, dtype=np.float64)
    forward = normalize(np.asarray(target, dtype=np.float64) - position)
    up = np.asarray(up, dtype=np.float64)
    down = -(up - np.dot(up, forward) * forward)
    n = np.linalg.norm(down)
    if n < 1e-9:
        raise GeometryError("look-at is degenerate: viewing direction parallel to the up vector")
    down = down / n
    right = np.cross(down, forward)
    return np.stack([right, down, forward])


def project_point(cam: Camera, p) -> tuple[float, float, float]:
    """Pixel coordinates ``(u, v)`` and camera depth of a world point."""
    xc, yc, zc = cam.world_to_camera(p)
    if zc <= 0.0:
        raise GeometryError(f"point is behind the camera (depth {zc:.6g})")
    k = cam.intrinsics
    return k.fx * xc / zc + k.cx, k.fy * yc / zc + k.cy, float(zc)


def project_points(cam: Camera, pts: np.ndarray) -> np.ndarray:
    """Vectorized projection, ``(n, 3) -> (n, 3)`` columns ``u, v, depth``.

    No behind-camera check; callers filter on the depth column.
    """
    pc = cam.world_to_camera(pts)
    k = cam.intrinsics
    z = pc[..., 2]
    return np.stack([k.fx * pc[..., 0] / z + k.cx, k.fy * pc[..., 1] / z + k.cy, z], axis=-1)


def pixel_ray(cam: Camera, u: int, v: int) -> Ray:
    """Unit world-space ray through the center of pixel ``(u, v)``."""
    if not (0 <= u < cam.width and 0 <= v < cam.height):
        raise GeometryError(f"pixel ({u}, {v}) outside {cam.width}x{cam.height} image")
    k = cam.intrinsics
    d_cam = np.array([(u + 0.5 - k.cx) / k.fx, (v + 0.5 - k.cy) / k.fy, 1.0])
    d = cam.rotation.T @ d_cam
    return Ray(cam.position.copy(), d / np.linalg.norm(d))


def pixel_rays(cam: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Ray origins and unit directions for every pixel, each ``(H, W, 3)``."""
    k = cam.intrinsics
    u = (np.arange(cam.width) + 0.5 - k.cx) / k.fx
    v = (np.arange(cam.height) + 0.5 - k.cy) / k.fy
    d_cam = np.empty((cam.height, cam.width, 3))
    d_cam[..., 0] = u[None, :]
    d_cam[..., 1] = v[:, None]
    d_cam[..., 2] = 1.0
    d = d_cam @ cam.rotation
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(cam.position, d.shape).copy()
    return o, d
