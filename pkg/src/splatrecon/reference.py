"""Naive reference splatter: every Gaussian against every pixel.

Shares no code with the tiled renderer beyond the data containers; used as
the oracle for tiled-forward equivalence and by the gradcheck command.
"""

from __future__ import annotations

import numpy as np

from .gaussians import GaussianSet
from .geometry import Camera, quat_to_rotmat
from .renderer import RenderConfig, RenderedImage


def reference_render(gset: GaussianSet, cam: Camera, cfg: RenderConfig | None = None) -> RenderedImage:
    cfg = cfg or RenderConfig()
    k = cam.intrinsics
    H, W = cam.height, cam.width
    bg = np.asarray(cfg.background, dtype=np.float64)
    world_to_cam = np.eye(4)
    world_to_cam[:3, :3] = cam.rotation
    world_to_cam[:3, 3] = -cam.rotation @ cam.position

    items = []
    for i in range(len(gset)):
        pc = world_to_cam @ np.append(gset.means[i], 1.0)
        z = pc[2]
        if not (cfg.near < z < cfg.far):
            continue
        hom = k.matrix() @ pc[:3]
        mean2d = hom[:2] / hom[2]
        rot = quat_to_rotmat(gset.rotations[i])
        cov3 = rot @ np.diag(gset.scales[i] ** 2) @ rot.T
        jac = np.array([[k.fx / z, 0.0, -k.fx * pc[0] / z**2], [0.0, k.fy / z, -k.fy * pc[1] / z**2]])
        t = jac @ cam.rotation
        cov2 = t @ cov3 @ t.T + cfg.eps2d * np.eye(2)
        items.append((z, i, mean2d, np.linalg.inv(cov2)))
    items.sort(key=lambda it: (it[0], it[1]))

    ys, xs = np.mgrid[0:H, 0:W]
    px = xs + 0.5
    py = ys + 0.5
    trans = np.ones((H, W))
    color = np.zeros((H, W, 3))
    depth = np.zeros((H, W))
    for z, i, m, con in items:
        dx = px - m[0]
        dy = py - m[1]
        a, b, c = con[0, 0], 0.5 * (con[0, 1] + con[1, 0]), con[1, 1]
        power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
        alpha = np.minimum(gset.opacities[i] * np.exp(power), cfg.alpha_max)
        live = (trans >= cfg.transmittance_floor) & (alpha >= cfg.alpha_cutoff)
        alpha = np.where(live, alpha, 0.0)
        w = alpha * trans
        color += w[..., None] * gset.colors[i]
        depth += w * z
        trans = trans * (1.0 - alpha)
    return RenderedImage(color + trans[..., None] * bg, 1.0 - trans, depth)
