"""Orbital camera rigs: the 16-view evaluation ring and the canonical four views."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import Camera, GeometryError, intrinsics_from_fov, look_at_rotation

CANONICAL_AZIMUTHS = (0.0, 90.0, 180.0, 270.0)


@dataclass(frozen=True)
class RigSpec:
    n_views: int = 16
    radius: float = 2.7
    elevation: float = 0.0
    fov_y: float = 49.1
    width: int = 512
    height: int = 512
    azimuth_offset: float = 0.0

    def __post_init__(self):
        if self.n_views < 1:
            raise GeometryError("n_views must be >= 1")
        if not self.radius > 0:
            raise GeometryError("radius must be positive")
        if not abs(self.elevation) < 90.0:
            raise GeometryError(f"elevation {self.elevation} leaves the look-at up vector undefined")

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class CameraRig:
    cameras: tuple
    spec: RigSpec
    azimuths: tuple

    def __len__(self):
        return len(self.cameras)

    def __iter__(self):
        return iter(self.cameras)

    def __getitem__(self, i):
        return self.cameras[i]

    def to_json(self) -> list:
        return [c.to_json() for c in self.cameras]


def orbit_camera(spec: RigSpec, azimuth_deg: float) -> Camera:
    """Camera on the rig orbit at the given azimuth, looking at the origin.

    Azimuth 0 sits on the +z axis; increasing azimuth moves toward +x.
    """
    if not abs(spec.elevation) < 90.0:
        raise GeometryError(f"elevation {spec.elevation} leaves the look-at up vector undefined")
    az = math.radians(azimuth_deg)
    el = math.radians(spec.elevation)
    pos = spec.radius * np.array([math.cos(el) * math.sin(az), math.sin(el), math.cos(el) * math.cos(az)])
    intr = intrinsics_from_fov(spec.fov_y, spec.width, spec.height)
    return Camera(intr, look_at_rotation(pos), pos)


def _rig(spec: RigSpec, azimuths) -> CameraRig:
    azimuths = tuple(float(a) for a in azimuths)
    return CameraRig(tuple(orbit_camera(spec, a) for a in azimuths), spec, azimuths)


def build_rig(spec: RigSpec) -> CameraRig:
    step = 360.0 / spec.n_views
    return _rig(spec, [spec.azimuth_offset + k * step for k in range(spec.n_views)])


def canonical_four(spec: RigSpec) -> CameraRig:
    return _rig(replace(spec, n_views=4), [spec.azimuth_offset + a for a in CANONICAL_AZIMUTHS])


def input_plus_targets(spec: RigSpec, input_azimuth: float) -> tuple[Camera, CameraRig]:
    """Input camera and the four canonical targets anchored at its azimuth.

    The first target is the input pose itself (the 0 degree view).
    """
    targets = canonical_four(replace(spec, azimuth_offset=input_azimuth))
    return targets.cameras[0], targets


def stereo_inputs(spec: RigSpec, input_azimuth: float, separation: float) -> tuple[Camera, Camera]:
    first, targets = input_plus_targets(spec, input_azimuth)
    for cam, az in zip(targets.cameras, targets.azimuths):
        if math.isclose((az - input_azimuth) % 360.0, separation % 360.0, abs_tol=1e-12):
            return first, cam
    return first, orbit_camera(spec, input_azimuth + separation)


def matching_view(cam: Camera, rig: CameraRig, atol: float = 1e-9):
    """Index of the rig camera sharing ``cam``'s pose, or ``None``."""
    for i, c in enumerate(rig.cameras):
        if c.same_pose(cam, atol=atol):
            return i
    return None
