"""Weak-perspective skeleton projection and 2D pose control images."""

from __future__ import annotations

import colorsys
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Camera, GeometryError
from .scene import Skeleton

JOINT_RADIUS = 3.0
BONE_WIDTH = 2.0


@dataclass(frozen=True, eq=False)
class Pose2D:
    joints: np.ndarray  # (J, 2) pixel coordinates (u, v)
    visibility: np.ndarray  # (J,) bool

    def __post_init__(self):
        j = np.array(self.joints, dtype=np.float64).reshape(-1, 2)
        vis = np.array(self.visibility, dtype=bool).reshape(-1)
        if len(vis) != len(j):
            raise ValueError("one visibility flag per joint is required")
        object.__setattr__(self, "joints", j)
        object.__setattr__(self, "visibility", vis)

    def to_json(self) -> dict:
        return {"joints": self.joints.tolist(), "visibility": [bool(v) for v in self.visibility]}

    @classmethod
    def from_json(cls, d: dict) -> "Pose2D":
        return cls(np.asarray(d["joints"], dtype=np.float64), np.asarray(d["visibility"], dtype=bool))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))


def weak_perspective_project(skel: Skeleton, cam: Camera) -> Pose2D:
    """Project every joint with the single scale ``f / z`` of the skeleton centroid."""
    pc = cam.world_to_camera(skel.joints)
    z = float(cam.world_to_camera(skel.joints.mean(axis=0))[2])
    if z <= 0.0:
        raise GeometryError(f"skeleton centroid is behind the camera (depth {z:.6g})")
    k = cam.intrinsics
    uv = np.stack([k.fx / z * pc[:, 0] + k.cx, k.fy / z * pc[:, 1] + k.cy], axis=1)
    vis = (uv[:, 0] >= 0) & (uv[:, 0] < cam.width) & (uv[:, 1] >= 0) & (uv[:, 1] < cam.height)
    return Pose2D(uv, vis)


def poses_for_canonical_views(skel: Skeleton, targets) -> list[Pose2D]:
    return [weak_perspective_project(skel, cam) for cam in targets]


def bone_colors(n: int) -> np.ndarray:
    return np.array([colorsys.hsv_to_rgb(i / max(n, 1), 1.0, 1.0) for i in range(n)])


def _segment_coverage(px, py, a, b, half_width):
    """Anti-aliased coverage of a thick segment: 1 inside, linear ramp over one pixel."""
    ab = b - a
    ll = float(ab @ ab)
    t = np.zeros_like(px) if ll == 0 else np.clip(((px - a[0]) * ab[0] + (py - a[1]) * ab[1]) / ll, 0.0, 1.0)
    dx = px - (a[0] + t * ab[0])
    dy = py - (a[1] + t * ab[1])
    d = np.sqrt(dx * dx + dy * dy)
    return np.clip(half_width + 0.5 - d, 0.0, 1.0)


def render_pose_image(pose: Pose2D, bones, height: int, width: int,
                      bone_width: float = BONE_WIDTH, joint_radius: float = JOINT_RADIUS) -> np.ndarray:
    """Bones in distinct colors plus white joint discs on black.

    ``bones`` is a list of ``(parent, child)`` joint pairs; a bone is drawn
    when both ends are visible.
    """
    img = np.zeros((height, width, 3))
    py, px = np.mgrid[0:height, 0:width] + 0.5
    bones = list(bones)
    colors = bone_colors(len(bones))
    for (p, c), col in zip(bones, colors):
        if not (pose.visibility[p] and pose.visibility[c]):
            continue
        cov = _segment_coverage(px, py, pose.joints[p], pose.joints[c], bone_width / 2.0)
        img = img * (1 - cov[..., None]) + cov[..., None] * col
    for j in np.nonzero(pose.visibility)[0]:
        cov = _segment_coverage(px, py, pose.joints[j], pose.joints[j], joint_radius)
        img = img * (1 - cov[..., None]) + cov[..., None] * 1.0
    return img
