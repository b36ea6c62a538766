"""Seeded synthetic occluders sized to cover a target fraction of the subject."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

SHAPES = ("rectangles", "ellipses")
TOLERANCE = 0.02


class OcclusionError(ValueError):
    pass


@dataclass(frozen=True)
class OcclusionSpec:
    fraction: float = 0.5
    shape: str = "rectangles"
    max_pieces: int = 3
    fill: tuple = (0.5, 0.5, 0.5)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.fraction < 1.0:
            raise OcclusionError(f"fraction must lie in [0, 1), got {self.fraction}")
        if self.shape not in SHAPES:
            raise OcclusionError(f"shape must be one of {SHAPES}, got {self.shape!r}")
        if self.max_pieces < 1:
            raise OcclusionError("max_pieces must be >= 1")
        if len(self.fill) != 3 or not all(0.0 <= c <= 1.0 for c in self.fill):
            raise OcclusionError("fill must be an RGB triple in [0, 1]")

    def to_json(self) -> dict:
        d = asdict(self)
        d["fill"] = list(self.fill)
        return d


def coverage(mask, silhouette) -> float:
    """Fraction of silhouette pixels hidden by ``mask``."""
    sil = np.asarray(silhouette, dtype=bool)
    n = int(sil.sum())
    if n == 0:
        return 0.0
    return int(np.count_nonzero(np.asarray(mask, dtype=bool) & sil)) / n


def _pieces(spec: OcclusionSpec, sil: np.ndarray):
    rng = np.random.default_rng(spec.seed)
    ys, xs = np.nonzero(sil)
    y0, y1, x0, x1 = ys.min(), ys.max() + 1, xs.min(), xs.max() + 1
    count = int(rng.integers(1, spec.max_pieces + 1))
    centers = np.stack([rng.uniform(x0, x1, count), rng.uniform(y0, y1, count)], axis=1)
    aspect = rng.uniform(0.5, 1.5, size=(count, 2))
    base = np.array([x1 - x0, y1 - y0], dtype=np.float64)
    return centers, aspect * base


def _draw(shape: str, hw, centers, halfsizes) -> np.ndarray:
    h, w = hw
    py, px = np.mgrid[0:h, 0:w] + 0.5
    mask = np.zeros((h, w), dtype=bool)
    for (cx, cy), (hx, hy) in zip(centers, halfsizes):
        if hx <= 0 or hy <= 0:
            continue
        dx = (px - cx) / hx
        dy = (py - cy) / hy
        if shape == "rectangles":
            mask |= (np.abs(dx) <= 1.0) & (np.abs(dy) <= 1.0)
        else:
            mask |= dx * dx + dy * dy <= 1.0
    return mask


def generate_mask(silhouette, spec: OcclusionSpec, max_iter: int = 60) -> np.ndarray:
    """Union of up to ``max_pieces`` random primitives whose common size is
    bisected until silhouette coverage lands within ``fraction +- 0.02``."""
    sil = np.asarray(silhouette) > 0.5
    if spec.fraction == 0.0:
        return np.zeros(sil.shape, dtype=bool)
    if not sil.any():
        raise OcclusionError("silhouette is empty; cannot place occluders")
    centers, extent = _pieces(spec, sil)
    lo, hi = 0.0, 2.0 * max(sil.shape) / max(extent.min(), 1e-9)
    best_cov = -1.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        m = _draw(spec.shape, sil.shape, centers, 0.5 * mid * extent)
        c = coverage(m, sil)
        if abs(c - spec.fraction) < abs(best_cov - spec.fraction):
            best_cov = c
        if abs(c - spec.fraction) <= TOLERANCE:
            return m
        if c < spec.fraction:
            lo = mid
        else:
            hi = mid
    raise OcclusionError(
        f"could not reach coverage {spec.fraction:.3f} +- {TOLERANCE}; best achieved {best_cov:.4f}"
    )


def apply_occlusion(image, mask, fill=(0.5, 0.5, 0.5)) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if image.shape[:2] != mask.shape:
        raise OcclusionError(f"mask {mask.shape} does not match image {image.shape[:2]}")
    out = image.copy()
    out[mask] = np.asarray(fill, dtype=np.float64) if image.ndim == 3 else float(np.mean(fill))
    return out


def derived_seed(base: int, index: int) -> int:
    return int(np.random.SeedSequence([base, index]).generate_state(1)[0])


def occlusion_suite(silhouette, spec_base: OcclusionSpec, fractions=(0.25, 0.5, 0.75)):
    """One mask per fraction, each with its own seed derived from the base seed."""
    return [
        (f, generate_mask(silhouette, replace(spec_base, fraction=f, seed=derived_seed(spec_base.seed, i))))
        for i, f in enumerate(fractions)
    ]
