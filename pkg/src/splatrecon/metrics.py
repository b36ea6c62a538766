"""Image and geometry metrics: PSNR, SSIM, Chamfer, point-to-surface, normal consistency."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d
from scipy.spatial import cKDTree

from .gaussians import GaussianSet
from .objective import PERCEPTUAL_NAME
from .scene import CapsuleScene, surface_distance

PSNR_CAP = 99.0
LUMA = np.array([0.299, 0.587, 0.114])


class MetricsError(ValueError):
    pass


def _same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricsError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(pred, gt, max_val: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    pred, gt = _same_shape(pred, gt)
    mse = float(np.mean((pred - gt) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val * max_val / mse)


def psnr_json(value: float) -> float:
    return PSNR_CAP if value > PSNR_CAP else value


def to_luma(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[-1] == 3:
        return img @ LUMA
    if img.ndim == 2:
        return img
    raise MetricsError(f"expected (H, W) or (H, W, 3) image, got {img.shape}")


def _gauss_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def ssim(pred, gt, k1: float = 0.01, k2: float = 0.03, win: int = 11, sigma: float = 1.5) -> float:
    """Mean structural similarity on luma over valid window positions."""
    pred, gt = _same_shape(pred, gt)
    x, y = to_luma(pred), to_luma(gt)
    if min(x.shape) < win:
        raise MetricsError(f"SSIM needs images of at least {win}x{win}, got {x.shape}")
    w = _gauss_window(win, sigma)

    def filt(a):
        return convolve2d(a, w, mode="valid")

    c1, c2 = k1**2, k2**2
    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


@dataclass
class PointCloud:
    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise MetricsError("point cloud contains non-finite points")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if self.normals.shape != self.points.shape:
                raise MetricsError("normals must match points")
            if len(self.normals) and not np.allclose(np.linalg.norm(self.normals, axis=1), 1.0, atol=1e-6):
                raise MetricsError("normals must be unit length")

    def __len__(self):
        return len(self.points)


def estimate_normals(points: np.ndarray, k: int = 16) -> np.ndarray:
    """PCA normals from the ``k`` nearest neighbors, oriented away from the centroid."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if n == 0:
        return np.zeros((0, 3))
    kk = min(k, n)
    _, idx = cKDTree(points).query(points, k=kk)
    idx = idx.reshape(n, kk)
    nb = points[idx]
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    outward = points - points.mean(axis=0)
    flip = np.sum(normals * outward, axis=1) < 0
    normals[flip] *= -1
    return normals / np.linalg.norm(normals, axis=1, keepdims=True)


def gaussians_to_points(gset: GaussianSet, opacity_threshold: float = 0.05, k: int = 16):
    """Means of sufficiently opaque Gaussians with PCA normals.

    Returns ``(cloud, empty_flag)``; an empty cloud carries the flag so the
    caller can skip geometric metrics.
    """
    if not 0.0 < opacity_threshold < 1.0:
        raise MetricsError("opacity threshold must lie in (0, 1)")
    keep = gset.opacities >= opacity_threshold
    pts = gset.means[keep]
    if len(pts) == 0:
        return PointCloud(np.zeros((0, 3)), np.zeros((0, 3))), True
    return PointCloud(pts, estimate_normals(pts, k)), False


def _nn(src: np.ndarray, dst: np.ndarray):
    """Nearest ``dst`` index and distance for each ``src`` point."""
    _, idx = cKDTree(dst).query(src, k=1)
    d = src - dst[idx]
    return idx, np.sqrt(np.sum(d * d, axis=1))


def chamfer(a: PointCloud, b: PointCloud) -> float:
    """Symmetric mean nearest-neighbor distance in cm (scene units are meters)."""
    if len(a) == 0 or len(b) == 0:
        raise MetricsError("chamfer needs two nonempty clouds")
    _, dab = _nn(a.points, b.points)
    _, dba = _nn(b.points, a.points)
    return 100.0 * (float(np.mean(dab)) + float(np.mean(dba))) / 2.0


def p2s(pred: PointCloud, scene: CapsuleScene) -> float:
    if len(pred) == 0:
        raise MetricsError("p2s needs a nonempty cloud")
    return 100.0 * float(np.mean(surface_distance(scene, pred.points)))


def normal_consistency(pred: PointCloud, ref: PointCloud) -> float:
    if pred.normals is None or ref.normals is None:
        raise MetricsError("normal consistency needs normals on both clouds")
    if len(pred) == 0 or len(ref) == 0:
        raise MetricsError("normal consistency needs nonempty clouds")
    idx, _ = _nn(pred.points, ref.points)
    return float(np.mean(np.abs(np.sum(pred.normals * ref.normals[idx], axis=1))))


@dataclass
class MetricsReport:
    views: list
    psnr: list
    ssim: list
    perceptual: list
    cd_cm: float | None = None
    p2s_cm: float | None = None
    nc: float | None = None
    geometry_skipped: bool = False
    config: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    perceptual_name: str = PERCEPTUAL_NAME

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr)) if self.psnr else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else math.nan

    @property
    def mean_perceptual(self) -> float:
        return float(np.mean(self.perceptual)) if self.perceptual else math.nan

    def to_json(self) -> dict:
        capped = [psnr_json(p) for p in self.psnr]
        return {
            "views": list(self.views),
            "psnr": capped,
            "ssim": list(self.ssim),
            self.perceptual_name: list(self.perceptual),
            "mean_psnr": float(np.mean(capped)) if capped else None,
            "mean_ssim": self.mean_ssim if self.ssim else None,
            f"mean_{self.perceptual_name}": self.mean_perceptual if self.perceptual else None,
            "psnr_infinite": [bool(math.isinf(p)) for p in self.psnr],
            "cd_cm": self.cd_cm,
            "p2s_cm": self.p2s_cm,
            "nc": self.nc,
            "geometry_skipped": self.geometry_skipped,
            "perceptual_metric": self.perceptual_name,
            "config": self.config,
            "provenance": self.provenance,
        }
