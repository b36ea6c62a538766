"""Tile-based differentiable Gaussian splatting on the CPU.

Forward: EWA projection of each Gaussian, global stable depth sort, binning
into square tiles by footprint, then front-to-back compositing per pixel.
Inside a tile the sorted Gaussians are visited in order and each touches
only the pixels of its footprint, so every pixel sees exactly the sequence
of contributions a naive all-Gaussians loop would produce.

Backward: per tile, the forward compositing is replayed front to back into a
buffer of per-(Gaussian, pixel) transmittances, then walked in reverse to
produce exact adjoints.  Gradients are accumulated per tile-list entry and
reduced in a fixed order, so results do not depend on scheduling.
Gradients are taken with respect to post-activation parameters; the
rotation gradient differentiates the quadratic quaternion-to-matrix map.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .gaussians import Gaussian3D, GaussianSet
from .geometry import Camera


@dataclass(frozen=True)
class RenderConfig:
    background: tuple = (0.0, 0.0, 0.0)
    tile: int = 16
    near: float = 0.1
    far: float = 100.0
    alpha_cutoff: float = 1.0 / 255.0
    footprint_sigma: float = 4.0
    transmittance_floor: float = 1e-4
    alpha_max: float = 0.999
    eps2d: float = 0.3

    def __post_init__(self):
        if not 0 < self.near < self.far:
            raise ValueError("need 0 < near < far")
        if not 0 < self.alpha_cutoff <= 0.05:
            raise ValueError("alpha_cutoff must lie in (0, 0.05]")
        if not 2 <= self.footprint_sigma <= 4:
            raise ValueError("footprint_sigma must lie in [2, 4]")
        if self.tile < 1 or self.tile & (self.tile - 1):
            raise ValueError("tile size must be a power of two")


@dataclass
class RenderedImage:
    rgb: np.ndarray
    alpha: np.ndarray
    depth: np.ndarray | None = None


@dataclass
class GaussianGrads:
    means: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "GaussianGrads":
        return cls(np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, 4)), np.zeros(n), np.zeros((n, 3)))

    def to_array(self) -> np.ndarray:
        return np.concatenate(
            [self.means, self.scales, self.rotations, self.opacities[:, None], self.colors], axis=1
        )

    def __iadd__(self, other: "GaussianGrads"):
        self.means += other.means
        self.scales += other.scales
        self.rotations += other.rotations
        self.opacities += other.opacities
        self.colors += other.colors
        return self


@dataclass
class Projection:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    culled: bool


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@numba.njit(cache=True, nogil=True, inline="always")
def _quat_rot(w, x, y, z, R):
    R[0, 0] = 1.0 - 2.0 * (y * y + z * z)
    R[0, 1] = 2.0 * (x * y - w * z)
    R[0, 2] = 2.0 * (x * z + w * y)
    R[1, 0] = 2.0 * (x * y + w * z)
    R[1, 1] = 1.0 - 2.0 * (x * x + z * z)
    R[1, 2] = 2.0 * (y * z - w * x)
    R[2, 0] = 2.0 * (x * z - w * y)
    R[2, 1] = 2.0 * (y * z + w * x)
    R[2, 2] = 1.0 - 2.0 * (x * x + y * y)


@numba.njit(cache=True, nogil=True)
def _cov_terms(i, means, scales, quats, Rw, cpos, fx, fy, R, M, S3, T):
    """Camera-space mean, rotation, M = R diag(s), 3D covariance and T = J W for Gaussian i."""
    px = means[i, 0] - cpos[0]
    py = means[i, 1] - cpos[1]
    pz = means[i, 2] - cpos[2]
    tx = Rw[0, 0] * px + Rw[0, 1] * py + Rw[0, 2] * pz
    ty = Rw[1, 0] * px + Rw[1, 1] * py + Rw[1, 2] * pz
    tz = Rw[2, 0] * px + Rw[2, 1] * py + Rw[2, 2] * pz
    _quat_rot(quats[i, 0], quats[i, 1], quats[i, 2], quats[i, 3], R)
    for a in range(3):
        for b in range(3):
            M[a, b] = R[a, b] * scales[i, b]
    for a in range(3):
        for b in range(3):
            S3[a, b] = M[a, 0] * M[b, 0] + M[a, 1] * M[b, 1] + M[a, 2] * M[b, 2]
    j00 = fx / tz
    j02 = -fx * tx / (tz * tz)
    j11 = fy / tz
    j12 = -fy * ty / (tz * tz)
    for b in range(3):
        T[0, b] = j00 * Rw[0, b] + j02 * Rw[2, b]
        T[1, b] = j11 * Rw[1, b] + j12 * Rw[2, b]
    return tx, ty, tz


@numba.njit(cache=True, nogil=True)
def _cov2d(S3, T, eps):
    A = 0.0
    B = 0.0
    C = 0.0
    for a in range(3):
        for b in range(3):
            A += T[0, a] * S3[a, b] * T[0, b]
            B += T[0, a] * S3[a, b] * T[1, b]
            C += T[1, a] * S3[a, b] * T[1, b]
    return A + eps, B, C + eps


@numba.njit(cache=True, nogil=True)
def _preprocess(means, scales, quats, opac, Rw, cpos, fx, fy, cx, cy, W, H, near, far, eps2d,
                cutoff, fsig, mean2d, conic, depth, bbox, valid):
    R = np.empty((3, 3))
    M = np.empty((3, 3))
    S3 = np.empty((3, 3))
    T = np.empty((2, 3))
    for i in range(means.shape[0]):
        valid[i] = False
        if not opac[i] >= cutoff:
            continue
        tx, ty, tz = _cov_terms(i, means, scales, quats, Rw, cpos, fx, fy, R, M, S3, T)
        if not (tz > near and tz < far):
            continue
        A, B, C = _cov2d(S3, T, eps2d)
        det = A * C - B * B
        if not det > 0.0:
            continue
        lam = 0.5 * (A + C) + math.sqrt(max(0.25 * (A - C) * (A - C) + B * B, 0.0))
        k = min(fsig, math.sqrt(2.0 * math.log(opac[i] / cutoff)))
        r = k * math.sqrt(lam) * 1.0001 + 1e-6
        mx = fx * tx / tz + cx
        my = fy * ty / tz + cy
        x0 = max(int(math.ceil(mx - r - 0.5)), 0)
        x1 = min(int(math.floor(mx + r - 0.5)), W - 1)
        y0 = max(int(math.ceil(my - r - 0.5)), 0)
        y1 = min(int(math.floor(my + r - 0.5)), H - 1)
        if x0 > x1 or y0 > y1:
            continue
        mean2d[i, 0] = mx
        mean2d[i, 1] = my
        conic[i, 0] = C / det
        conic[i, 1] = -B / det
        conic[i, 2] = A / det
        depth[i] = tz
        bbox[i, 0] = x0
        bbox[i, 1] = x1
        bbox[i, 2] = y0
        bbox[i, 3] = y1
        valid[i] = True


@numba.njit(cache=True, nogil=True)
def _bin(order, bbox, tile, tiles_x, tiles_y):
    ntiles = tiles_x * tiles_y
    counts = np.zeros(ntiles + 1, dtype=np.int64)
    for g in order:
        for ty in range(bbox[g, 2] // tile, bbox[g, 3] // tile + 1):
            for tx in range(bbox[g, 0] // tile, bbox[g, 1] // tile + 1):
                counts[ty * tiles_x + tx + 1] += 1
    start = np.cumsum(counts)
    fill = start[:-1].copy()
    entries = np.empty(start[-1], dtype=np.int64)
    for g in order:
        for ty in range(bbox[g, 2] // tile, bbox[g, 3] // tile + 1):
            for tx in range(bbox[g, 0] // tile, bbox[g, 1] // tile + 1):
                t = ty * tiles_x + tx
                entries[fill[t]] = g
                fill[t] += 1
    return start, entries


@numba.njit(cache=True, nogil=True)
def _forward(start, entries, mean2d, conic, opac, colors, depth, bbox, W, H, tile, tiles_x,
             bg, cutoff, amax, floor, rgb, alpha, dimg):
    ntiles = start.shape[0] - 1
    for t in range(ntiles):
        X0 = (t % tiles_x) * tile
        Y0 = (t // tiles_x) * tile
        X1 = min(X0 + tile, W)
        Y1 = min(Y0 + tile, H)
        Tr = np.ones((Y1 - Y0, X1 - X0))
        Cr = np.zeros((Y1 - Y0, X1 - X0, 3))
        Dr = np.zeros((Y1 - Y0, X1 - X0))
        for k in range(start[t], start[t + 1]):
            g = entries[k]
            xa = max(bbox[g, 0], X0)
            xb = min(bbox[g, 1], X1 - 1)
            ya = max(bbox[g, 2], Y0)
            yb = min(bbox[g, 3], Y1 - 1)
            mx = mean2d[g, 0]
            my = mean2d[g, 1]
            ca = conic[g, 0]
            cb = conic[g, 1]
            cc = conic[g, 2]
            o = opac[g]
            for py in range(ya, yb + 1):
                dy = py + 0.5 - my
                for px in range(xa, xb + 1):
                    Tp = Tr[py - Y0, px - X0]
                    if Tp < floor:
                        continue
                    dx = px + 0.5 - mx
                    power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
                    a = o * math.exp(power)
                    if a > amax:
                        a = amax
                    if a < cutoff:
                        continue
                    w = a * Tp
                    Cr[py - Y0, px - X0, 0] += colors[g, 0] * w
                    Cr[py - Y0, px - X0, 1] += colors[g, 1] * w
                    Cr[py - Y0, px - X0, 2] += colors[g, 2] * w
                    Dr[py - Y0, px - X0] += depth[g] * w
                    Tr[py - Y0, px - X0] = Tp * (1.0 - a)
        for py in range(Y0, Y1):
            for px in range(X0, X1):
                Tp = Tr[py - Y0, px - X0]
                for c in range(3):
                    rgb[py, px, c] = Cr[py - Y0, px - X0, c] + Tp * bg[c]
                alpha[py, px] = 1.0 - Tp
                dimg[py, px] = Dr[py - Y0, px - X0]


@numba.njit(cache=True, nogil=True)
def _backward(start, entries, mean2d, conic, opac, colors, bbox, W, H, tile, tiles_x,
              bg, cutoff, amax, floor, grad_rgb, grad_alpha, eg):
    ntiles = start.shape[0] - 1
    for t in range(ntiles):
        X0 = (t % tiles_x) * tile
        Y0 = (t // tiles_x) * tile
        X1 = min(X0 + tile, W)
        Y1 = min(Y0 + tile, H)
        n_vis = 0
        for k in range(start[t], start[t + 1]):
            g = entries[k]
            xa = max(bbox[g, 0], X0)
            xb = min(bbox[g, 1], X1 - 1)
            ya = max(bbox[g, 2], Y0)
            yb = min(bbox[g, 3], Y1 - 1)
            if xb >= xa and yb >= ya:
                n_vis += (xb - xa + 1) * (yb - ya + 1)
        if n_vis == 0:
            continue
        abuf = np.zeros(n_vis)
        tbuf = np.empty(n_vis)
        gbuf = np.empty(n_vis)
        Tr = np.ones((Y1 - Y0, X1 - X0))
        # replay forward, storing per-visit alpha, Gaussian value and transmittance
        pos = 0
        for k in range(start[t], start[t + 1]):
            g = entries[k]
            xa = max(bbox[g, 0], X0)
            xb = min(bbox[g, 1], X1 - 1)
            ya = max(bbox[g, 2], Y0)
            yb = min(bbox[g, 3], Y1 - 1)
            mx = mean2d[g, 0]
            my = mean2d[g, 1]
            ca = conic[g, 0]
            cb = conic[g, 1]
            cc = conic[g, 2]
            o = opac[g]
            for py in range(ya, yb + 1):
                dy = py + 0.5 - my
                for px in range(xa, xb + 1):
                    Tp = Tr[py - Y0, px - X0]
                    if Tp >= floor:
                        dx = px + 0.5 - mx
                        power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
                        G = math.exp(power)
                        a = o * G
                        if a > amax:
                            a = amax
                        if a >= cutoff:
                            abuf[pos] = a
                            tbuf[pos] = Tp
                            gbuf[pos] = G
                            Tr[py - Y0, px - X0] = Tp * (1.0 - a)
                    pos += 1
        # reverse sweep
        Ab = np.empty((Y1 - Y0, X1 - X0, 3))
        Bb = np.ones((Y1 - Y0, X1 - X0))
        for py in range(Y0, Y1):
            for px in range(X0, X1):
                for c in range(3):
                    Ab[py - Y0, px - X0, c] = bg[c]
        pos = n_vis
        for k in range(start[t + 1] - 1, start[t] - 1, -1):
            g = entries[k]
            xa = max(bbox[g, 0], X0)
            xb = min(bbox[g, 1], X1 - 1)
            ya = max(bbox[g, 2], Y0)
            yb = min(bbox[g, 3], Y1 - 1)
            if xb < xa or yb < ya:
                continue
            mx = mean2d[g, 0]
            my = mean2d[g, 1]
            ca = conic[g, 0]
            cb = conic[g, 1]
            cc = conic[g, 2]
            o = opac[g]
            c0 = colors[g, 0]
            c1 = colors[g, 1]
            c2 = colors[g, 2]
            for py in range(yb, ya - 1, -1):
                dy = py + 0.5 - my
                for px in range(xb, xa - 1, -1):
                    pos -= 1
                    a = abuf[pos]
                    if a == 0.0:
                        continue
                    ly = py - Y0
                    lx = px - X0
                    Tp = tbuf[pos]
                    G = gbuf[pos]
                    gr0 = grad_rgb[py, px, 0]
                    gr1 = grad_rgb[py, px, 1]
                    gr2 = grad_rgb[py, px, 2]
                    w = a * Tp
                    eg[k, 6] += gr0 * w
                    eg[k, 7] += gr1 * w
                    eg[k, 8] += gr2 * w
                    A0 = Ab[ly, lx, 0]
                    A1 = Ab[ly, lx, 1]
                    A2 = Ab[ly, lx, 2]
                    Bp = Bb[ly, lx]
                    da = Tp * (gr0 * (c0 - A0) + gr1 * (c1 - A1) + gr2 * (c2 - A2)) + grad_alpha[py, px] * Tp * Bp
                    Ab[ly, lx, 0] = c0 * a + (1.0 - a) * A0
                    Ab[ly, lx, 1] = c1 * a + (1.0 - a) * A1
                    Ab[ly, lx, 2] = c2 * a + (1.0 - a) * A2
                    Bb[ly, lx] = (1.0 - a) * Bp
                    if o * G > amax:
                        continue
                    eg[k, 5] += da * G
                    dpow = da * o * G
                    dx = px + 0.5 - mx
                    eg[k, 0] += dpow * (ca * dx + cb * dy)
                    eg[k, 1] += dpow * (cb * dx + cc * dy)
                    eg[k, 2] += dpow * (-0.5 * dx * dx)
                    eg[k, 3] += dpow * (-dx * dy)
                    eg[k, 4] += dpow * (-0.5 * dy * dy)


@numba.njit(cache=True, nogil=True)
def _reduce(entries, eg, out):
    for k in range(entries.shape[0]):
        g = entries[k]
        for j in range(9):
            out[g, j] += eg[k, j]


@numba.njit(cache=True, nogil=True)
def _project_backward(valid, g2d, means, scales, quats, Rw, cpos, fx, fy, eps2d, gmean, gscale, gquat):
    R = np.empty((3, 3))
    M = np.empty((3, 3))
    S3 = np.empty((3, 3))
    T = np.empty((2, 3))
    G3 = np.empty((3, 3))
    dT = np.empty((2, 3))
    dM = np.empty((3, 3))
    dR = np.empty((3, 3))
    for i in range(means.shape[0]):
        if not valid[i]:
            continue
        dmx, dmy, dca, dcb, dcc = g2d[i, 0], g2d[i, 1], g2d[i, 2], g2d[i, 3], g2d[i, 4]
        tx, ty, tz = _cov_terms(i, means, scales, quats, Rw, cpos, fx, fy, R, M, S3, T)
        A, B, C = _cov2d(S3, T, eps2d)
        det = A * C - B * B
        d2 = det * det
        gA = (-dca * C * C + dcb * B * C - dcc * B * B) / d2
        gB = (2.0 * dca * B * C - dcb * (A * C + B * B) + 2.0 * dcc * A * B) / d2
        gC = (-dca * B * B + dcb * A * B - dcc * A * A) / d2
        g00 = gA
        g01 = 0.5 * gB
        g11 = gC
        # dL/dSigma3 = T^T G2 T
        for a in range(3):
            for b in range(3):
                G3[a, b] = (T[0, a] * (g00 * T[0, b] + g01 * T[1, b])
                            + T[1, a] * (g01 * T[0, b] + g11 * T[1, b]))
        # dL/dT = 2 G2 T Sigma3
        for b in range(3):
            s0 = T[0, 0] * S3[0, b] + T[0, 1] * S3[1, b] + T[0, 2] * S3[2, b]
            s1 = T[1, 0] * S3[0, b] + T[1, 1] * S3[1, b] + T[1, 2] * S3[2, b]
            dT[0, b] = 2.0 * (g00 * s0 + g01 * s1)
            dT[1, b] = 2.0 * (g01 * s0 + g11 * s1)
        # T = J W, so dL/dJ = dT W^T; only the four non-zero Jacobian entries matter
        dj00 = dT[0, 0] * Rw[0, 0] + dT[0, 1] * Rw[0, 1] + dT[0, 2] * Rw[0, 2]
        dj02 = dT[0, 0] * Rw[2, 0] + dT[0, 1] * Rw[2, 1] + dT[0, 2] * Rw[2, 2]
        dj11 = dT[1, 0] * Rw[1, 0] + dT[1, 1] * Rw[1, 1] + dT[1, 2] * Rw[1, 2]
        dj12 = dT[1, 0] * Rw[2, 0] + dT[1, 1] * Rw[2, 1] + dT[1, 2] * Rw[2, 2]
        iz = 1.0 / tz
        iz2 = iz * iz
        iz3 = iz2 * iz
        gtx = -dj02 * fx * iz2 + dmx * fx * iz
        gty = -dj12 * fy * iz2 + dmy * fy * iz
        gtz = (-dj00 * fx * iz2 + 2.0 * dj02 * fx * tx * iz3 - dj11 * fy * iz2 + 2.0 * dj12 * fy * ty * iz3
               - dmx * fx * tx * iz2 - dmy * fy * ty * iz2)
        for b in range(3):
            gmean[i, b] = Rw[0, b] * gtx + Rw[1, b] * gty + Rw[2, b] * gtz
        # Sigma3 = M M^T, M = R diag(s)
        for a in range(3):
            for b in range(3):
                dM[a, b] = 2.0 * (G3[a, 0] * M[0, b] + G3[a, 1] * M[1, b] + G3[a, 2] * M[2, b])
        for b in range(3):
            gscale[i, b] = dM[0, b] * R[0, b] + dM[1, b] * R[1, b] + dM[2, b] * R[2, b]
            for a in range(3):
                dR[a, b] = dM[a, b] * scales[i, b]
        w, x, y, z = quats[i, 0], quats[i, 1], quats[i, 2], quats[i, 3]
        gquat[i, 0] = 2.0 * (-z * dR[0, 1] + y * dR[0, 2] + z * dR[1, 0] - x * dR[1, 2] - y * dR[2, 0] + x * dR[2, 1])
        gquat[i, 1] = 2.0 * (y * dR[0, 1] + z * dR[0, 2] + y * dR[1, 0] - 2.0 * x * dR[1, 1] - w * dR[1, 2]
                             + z * dR[2, 0] + w * dR[2, 1] - 2.0 * x * dR[2, 2])
        gquat[i, 2] = 2.0 * (-2.0 * y * dR[0, 0] + x * dR[0, 1] + w * dR[0, 2] + x * dR[1, 0] + z * dR[1, 2]
                             - w * dR[2, 0] + z * dR[2, 1] - 2.0 * y * dR[2, 2])
        gquat[i, 3] = 2.0 * (-2.0 * z * dR[0, 0] - w * dR[0, 1] + x * dR[0, 2] + w * dR[1, 0] - 2.0 * z * dR[1, 1]
                             + y * dR[1, 2] + x * dR[2, 0] + y * dR[2, 1])


# ---------------------------------------------------------------------------
# Python API
# ---------------------------------------------------------------------------

class RenderContext:
    """Projected, sorted and binned Gaussians for one camera; reusable by backward."""

    def __init__(self, gset: GaussianSet, cam: Camera, cfg: RenderConfig):
        self.gset, self.cam, self.cfg = gset, cam, cfg
        n = len(gset)
        k = cam.intrinsics
        self.W, self.H = cam.width, cam.height
        self.tiles_x = -(-self.W // cfg.tile)
        self.tiles_y = -(-self.H // cfg.tile)
        self.means = np.ascontiguousarray(gset.means)
        self.scales = np.ascontiguousarray(gset.scales)
        self.quats = np.ascontiguousarray(gset.rotations)
        self.opac = np.ascontiguousarray(gset.opacities)
        self.colors = np.ascontiguousarray(gset.colors)
        self.Rw = np.ascontiguousarray(cam.rotation)
        self.cpos = np.ascontiguousarray(cam.position)
        self.fx, self.fy = k.fx, k.fy
        self.mean2d = np.zeros((n, 2))
        self.conic = np.zeros((n, 3))
        self.depth = np.zeros(n)
        self.bbox = np.zeros((n, 4), dtype=np.int64)
        self.valid = np.zeros(n, dtype=np.bool_)
        self.bg = np.asarray(cfg.background, dtype=np.float64)
        if n:
            _preprocess(self.means, self.scales, self.quats, self.opac, self.Rw, self.cpos, k.fx, k.fy, k.cx, k.cy,
                        self.W, self.H, cfg.near, cfg.far, cfg.eps2d, cfg.alpha_cutoff, cfg.footprint_sigma,
                        self.mean2d, self.conic, self.depth, self.bbox, self.valid)
        idx = np.flatnonzero(self.valid)
        self.order = idx[np.argsort(self.depth[idx], kind="stable")]
        self.start, self.entries = _bin(self.order, self.bbox, cfg.tile, self.tiles_x, self.tiles_y)

    def forward(self) -> RenderedImage:
        cfg = self.cfg
        rgb = np.empty((self.H, self.W, 3))
        alpha = np.empty((self.H, self.W))
        depth = np.empty((self.H, self.W))
        _forward(self.start, self.entries, self.mean2d, self.conic, self.opac, self.colors, self.depth, self.bbox,
                 self.W, self.H, cfg.tile, self.tiles_x, self.bg, cfg.alpha_cutoff, cfg.alpha_max,
                 cfg.transmittance_floor, rgb, alpha, depth)
        return RenderedImage(rgb, alpha, depth)

    def backward(self, grad_rgb, grad_alpha=None) -> GaussianGrads:
        cfg = self.cfg
        n = len(self.gset)
        grad_rgb = np.ascontiguousarray(grad_rgb, dtype=np.float64)
        if grad_rgb.shape != (self.H, self.W, 3):
            raise ValueError(f"grad_rgb must be {(self.H, self.W, 3)}, got {grad_rgb.shape}")
        if grad_alpha is None:
            grad_alpha = np.zeros((self.H, self.W))
        grad_alpha = np.ascontiguousarray(grad_alpha, dtype=np.float64)
        if grad_alpha.shape != (self.H, self.W):
            raise ValueError(f"grad_alpha must be {(self.H, self.W)}, got {grad_alpha.shape}")
        if not (np.all(np.isfinite(grad_rgb)) and np.all(np.isfinite(grad_alpha))):
            raise ValueError("upstream image gradients must be finite")
        out = GaussianGrads.zeros(n)
        if n == 0 or len(self.entries) == 0:
            return out
        eg = np.zeros((len(self.entries), 9))
        _backward(self.start, self.entries, self.mean2d, self.conic, self.opac, self.colors, self.bbox,
                  self.W, self.H, cfg.tile, self.tiles_x, self.bg, cfg.alpha_cutoff, cfg.alpha_max,
                  cfg.transmittance_floor, grad_rgb, grad_alpha, eg)
        g2d = np.zeros((n, 9))
        _reduce(self.entries, eg, g2d)
        _project_backward(self.valid, g2d, self.means, self.scales, self.quats, self.Rw, self.cpos,
                          self.fx, self.fy, cfg.eps2d, out.means, out.scales, out.rotations)
        out.opacities[:] = g2d[:, 5]
        out.colors[:] = g2d[:, 6:9]
        return out


def render(gset: GaussianSet, cam: Camera, cfg: RenderConfig | None = None) -> RenderedImage:
    return RenderContext(gset, cam, cfg or RenderConfig()).forward()


def render_backward(gset: GaussianSet, cam: Camera, cfg: RenderConfig | None, grad_rgb, grad_alpha=None) -> GaussianGrads:
    """Gradients of ``sum(grad_rgb * rgb) + sum(grad_alpha * alpha)`` w.r.t. every Gaussian parameter."""
    return RenderContext(gset, cam, cfg or RenderConfig()).backward(grad_rgb, grad_alpha)


def render_views(gset: GaussianSet, cameras, cfg: RenderConfig | None = None, workers: int = 1) -> list[RenderedImage]:
    """Render each camera independently; ``workers > 1`` renders views on a thread pool."""
    cfg = cfg or RenderConfig()
    cameras = list(cameras)
    if workers <= 1:
        return [render(gset, c, cfg) for c in cameras]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(lambda c: render(gset, c, cfg), cameras))


def project_gaussian(cam: Camera, g: Gaussian3D, cfg: RenderConfig | None = None, regularize: bool = True) -> Projection:
    """EWA projection of a single Gaussian to image-plane mean and covariance."""
    cfg = cfg or RenderConfig()
    gs = GaussianSet.from_gaussians([g])
    R = np.empty((3, 3))
    M = np.empty((3, 3))
    S3 = np.empty((3, 3))
    T = np.empty((2, 3))
    k = cam.intrinsics
    tx, ty, tz = _cov_terms(0, gs.means, gs.scales, gs.rotations, np.ascontiguousarray(cam.rotation),
                            np.ascontiguousarray(cam.position), k.fx, k.fy, R, M, S3, T)
    if not (tz > cfg.near and tz < cfg.far):
        return Projection(np.full(2, np.nan), np.full((2, 2), np.nan), float(tz), True)
    A, B, C = _cov2d(S3, T, cfg.eps2d if regularize else 0.0)
    mean2d = np.array([k.fx * tx / tz + k.cx, k.fy * ty / tz + k.cy])
    return Projection(mean2d, np.array([[A, B], [B, C]]), float(tz), False)
