"""Sources of the four canonical de-occluded views used as supervision.

``oracle_provide`` renders the analytic scene, ``file_provide`` ingests
images produced elsewhere (for example by a generative model) and
``degraded_provide`` perturbs the oracle for sensitivity studies.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io as sio
from .geometry import Camera, rotation_about_y
from .scene import CapsuleScene, RaymarchConfig, raymarch_render


class ProviderError(ValueError):
    pass


@dataclass(frozen=True)
class ProviderRequest:
    inputs: tuple  # (image, Camera) pairs, one or two
    targets: tuple  # four Cameras in canonical layout
    scene: CapsuleScene | None = None
    raymarch: RaymarchConfig = field(default_factory=RaymarchConfig)

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "targets", tuple(self.targets))
        if not 1 <= len(self.inputs) <= 2:
            raise ProviderError("a request carries one or two input views")
        if len(self.targets) != 4:
            raise ProviderError(f"expected 4 target cameras, got {len(self.targets)}")
        if not self.targets[0].same_pose(self.inputs[0][1], atol=1e-9):
            raise ProviderError("the first target must share the first input's pose")


@dataclass
class ProviderResponse:
    views: list
    silhouettes: list
    provenance: dict

    def __post_init__(self):
        if len(self.views) != len(self.silhouettes):
            raise ProviderError("one silhouette per view is required")
        for k, (v, s) in enumerate(zip(self.views, self.silhouettes)):
            if v.shape[:2] != s.shape or v.ndim != 3 or v.shape[2] != 3:
                raise ProviderError(f"view {k}: image {v.shape} and silhouette {s.shape} are inconsistent")
            if np.any(v < 0) or np.any(v > 1):
                raise ProviderError(f"view {k}: values outside [0, 1]")
            if not np.all((s == 0) | (s == 1)):
                raise ProviderError(f"view {k}: silhouette is not binary")


def oracle_provide(req: ProviderRequest) -> ProviderResponse:
    """Exact occlusion-free renders of the scene at the target cameras."""
    if req.scene is None:
        raise ProviderError("oracle provider needs the scene")
    renders = [raymarch_render(req.scene, cam, req.raymarch) for cam in req.targets]
    return ProviderResponse([r.rgb for r in renders], [r.alpha for r in renders], {"kind": "oracle"})


def file_provide(directory, req: ProviderRequest) -> ProviderResponse:
    """Load ``view_k.png``/``mask_k.png`` (k = 0..3) from ``directory``.

    A ``cameras.json`` next to the images is compared with the requested
    targets; a mismatch is recorded as a warning in the provenance.
    """
    d = Path(directory)
    views, sils = [], []
    for k, cam in enumerate(req.targets):
        vp, mp = d / f"view_{k}.png", d / f"mask_{k}.png"
        for p in (vp, mp):
            if not p.exists():
                raise ProviderError(f"missing provider file {p}")
        img = sio.load_png(vp)
        msk = sio.load_png(mp)
        if img.ndim == 2:
            img = np.repeat(img[..., None], 3, axis=2)
        want = (cam.height, cam.width)
        for name, arr in ((vp.name, img), (mp.name, msk)):
            if arr.shape[:2] != want:
                raise ProviderError(f"{name}: expected {want[1]}x{want[0]}, got {arr.shape[1]}x{arr.shape[0]}")
        views.append(img)
        sils.append((msk >= 0.5).astype(np.float64))
    prov = {"kind": "file", "directory": str(d), "warnings": []}
    cj = d / "cameras.json"
    if cj.exists():
        data = json.loads(cj.read_text())
        cams = data["cameras"] if isinstance(data, dict) else data
        stored = [Camera.from_json(c) for c in cams]
        if len(stored) != 4 or not all(a.same_pose(b, atol=1e-6) for a, b in zip(stored, req.targets)):
            prov["warnings"].append("cameras.json does not match the requested target cameras")
    return ProviderResponse(views, sils, prov)


def write_provider_dir(directory, resp: ProviderResponse, targets=None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for k, (v, s) in enumerate(zip(resp.views, resp.silhouettes)):
        sio.save_rgb_png(d / f"view_{k}.png", v)
        sio.save_mask_png(d / f"mask_{k}.png", s > 0.5)
    if targets is not None:
        (d / "cameras.json").write_text(json.dumps({"cameras": [c.to_json() for c in targets]}, indent=2))


def _jittered(cam: Camera, angle_deg: float) -> Camera:
    """Orbit ``cam`` about the world y axis through the origin."""
    r = rotation_about_y(angle_deg)
    return Camera(cam.intrinsics, cam.rotation @ r.T, r @ cam.position)


def degraded_provide(req: ProviderRequest, noise_sigma: float, pose_jitter_deg: float, seed: int) -> ProviderResponse:
    """Oracle views from azimuth-jittered cameras plus clipped Gaussian pixel noise."""
    if noise_sigma < 0 or pose_jitter_deg < 0:
        raise ProviderError("noise_sigma and pose_jitter_deg must be nonnegative")
    if req.scene is None:
        raise ProviderError("degraded provider needs the scene")
    rng = np.random.default_rng(seed)
    views, sils = [], []
    for cam in req.targets:
        jit = float(rng.uniform(-pose_jitter_deg, pose_jitter_deg)) if pose_jitter_deg > 0 else 0.0
        src = _jittered(cam, jit) if jit != 0.0 else cam
        r = raymarch_render(req.scene, src, req.raymarch)
        img = r.rgb
        if noise_sigma > 0:
            img = np.clip(img + rng.normal(0.0, noise_sigma, img.shape), 0.0, 1.0)
        views.append(img)
        sils.append(r.alpha)
    prov = {"kind": "degraded", "noise_sigma": noise_sigma, "pose_jitter_deg": pose_jitter_deg, "seed": seed}
    return ProviderResponse(views, sils, prov)
