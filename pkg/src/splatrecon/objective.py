"""Composite reconstruction objective with exact gradients.

total = mse(rgb) + lambda1 * perceptual_proxy(rgb) + lambda2 * mse(alpha, silhouette)

``perceptual_proxy`` is a multi-scale image + gradient-magnitude pyramid
loss standing in for a learned perceptual metric; it is always reported
under its own name.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

PERCEPTUAL_NAME = "perceptual_proxy"
GRAD_EPS = 1e-3


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.5
    lambda2: float = 1.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class LossBreakdown:
    mse: float
    perceptual: float
    silhouette: float
    total: float
    per_view: list = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)


def _check_shapes(pred, gt):
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")


def mse_loss(pred, gt) -> tuple[float, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_shapes(pred, gt)
    diff = pred - gt
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def silhouette_loss(pred_alpha, gt_mask) -> tuple[float, np.ndarray]:
    gt_mask = np.asarray(gt_mask, dtype=np.float64)
    if np.any(gt_mask < 0) or np.any(gt_mask > 1):
        raise ValueError("silhouette mask must lie in [0, 1]")
    return mse_loss(pred_alpha, gt_mask)


def _pool(img):
    h, w = img.shape[0] // 2 * 2, img.shape[1] // 2 * 2
    x = img[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def _unpool(grad, shape):
    out = np.zeros(shape)
    h, w = grad.shape[0] * 2, grad.shape[1] * 2
    g = 0.25 * grad
    for dy in (0, 1):
        for dx in (0, 1):
            out[dy:h:2, dx:w:2] = g
    return out


def _grad_mag(img):
    gx = img[:-1, 1:] - img[:-1, :-1]
    gy = img[1:, :-1] - img[:-1, :-1]
    return np.sqrt(gx * gx + gy * gy + GRAD_EPS**2), gx, gy


def perceptual_proxy(pred, gt, levels: int = 3) -> tuple[float, np.ndarray]:
    """Mean over a ``levels``-deep 2x average-pool pyramid of image MSE plus
    MSE of finite-difference gradient magnitudes (per channel)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_shapes(pred, gt)
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if min(pred.shape[0], pred.shape[1]) < 2**levels:
        raise ValueError(f"image {pred.shape[:2]} too small for {levels} pyramid levels")
    ps, gs = [pred], [gt]
    for _ in range(levels - 1):
        ps.append(_pool(ps[-1]))
        gs.append(_pool(gs[-1]))
    value = 0.0
    grads = []
    for p, g in zip(ps, gs):
        d = p - g
        mp, gxp, gyp = _grad_mag(p)
        mg, _, _ = _grad_mag(g)
        dm = mp - mg
        value += np.mean(d * d) + np.mean(dm * dm)
        gp = 2.0 * d / d.size
        gmag = 2.0 * dm / dm.size
        ggx = gmag * gxp / mp
        ggy = gmag * gyp / mp
        gp[:-1, 1:] += ggx
        gp[:-1, :-1] -= ggx + ggy
        gp[1:, :-1] += ggy
        grads.append(gp)
    # back through the pyramid, coarsest first
    for lvl in range(levels - 1, 0, -1):
        grads[lvl - 1] = grads[lvl - 1] + _unpool(grads[lvl], ps[lvl - 1].shape)
    return float(value / levels), grads[0] / levels


def total_loss(renders, gts, masks, w: LossWeights | None = None, levels: int = 3):
    """Mean over views of the weighted loss.

    ``renders`` are objects with ``rgb`` and ``alpha``.  Returns the
    breakdown plus, per view, ``(grad_rgb, grad_alpha)`` of ``total``.
    """
    w = w or LossWeights()
    renders, gts, masks = list(renders), list(gts), list(masks)
    if not (len(renders) == len(gts) == len(masks)) or not renders:
        raise ValueError(f"view count mismatch: {len(renders)} renders, {len(gts)} images, {len(masks)} masks")
    n = len(renders)
    per_view, grads = [], []
    for r, gt, m in zip(renders, gts, masks):
        lm, gm = mse_loss(r.rgb, gt)
        lp, gp = perceptual_proxy(r.rgb, gt, levels)
        ls, gsil = silhouette_loss(r.alpha, m)
        per_view.append({"mse": lm, "perceptual": lp, "silhouette": ls})
        grads.append(((gm + w.lambda1 * gp) / n, (w.lambda2 * gsil) / n))
    mse = sum(v["mse"] for v in per_view) / n
    perc = sum(v["perceptual"] for v in per_view) / n
    sil = sum(v["silhouette"] for v in per_view) / n
    total = mse + w.lambda1 * perc + w.lambda2 * sil
    return LossBreakdown(mse, perc, sil, total, per_view), grads
