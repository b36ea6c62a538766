from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from splatrecon.gaussians import (N_RAW, DecodeConfig, GaussianSet, PixelGaussianGrid, PlyError, decode_pixel_gaussians,
                                  decode_vjp, init_grid_from_images, ply_read, ply_write, ray_embedding,
                                  ray_feature_map)
from splatrecon.geometry import Camera, intrinsics_from_fov, look_at_rotation, pixel_ray
from splatrecon.renderer import GaussianGrads
from splatrecon.rig import RigSpec, build_rig, orbit_camera


def _cam(pos=(0.5, 0.2, 2.5), size=8):
    pos = np.asarray(pos, dtype=np.float64)
    return Camera(intrinsics_from_fov(49.1, size, size), look_at_rotation(pos), pos)


def _random_set(rng, n):
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return GaussianSet(rng.normal(size=(n, 3)), rng.uniform(0.01, 0.3, (n, 3)), q, rng.uniform(0, 1, n),
                       rng.uniform(0, 1, (n, 3)))


def test_origin_camera_has_zero_moment():
    cam = Camera(intrinsics_from_fov(50.0, 16, 12), np.eye(3), np.zeros(3))
    emb = ray_embedding(cam)
    assert emb.shape == (12, 16, 6)
    assert np.all(emb[..., 3:] == 0.0)


def test_plucker_invariants_on_rig():
    for cam in build_rig(RigSpec(width=32, height=32)).cameras:
        emb = ray_embedding(cam)
        d, m = emb[..., :3], emb[..., 3:]
        assert np.max(np.abs(np.linalg.norm(d, axis=-1) - 1)) < 1e-6
        assert np.max(np.abs(np.sum(d * m, axis=-1))) < 1e-6


def test_moment_invariant_under_translation_along_ray():
    cam = _cam()
    u, v = 3, 5
    ray = pixel_ray(cam, u, v)
    moved = Camera(cam.intrinsics, cam.rotation, cam.position + 0.7 * ray.direction)
    a = ray_embedding(cam)[v, u]
    b = ray_embedding(moved)[v, u]
    assert np.allclose(a, b, atol=1e-12)


def test_feature_map_layout():
    cam = _cam()
    img = np.random.default_rng(0).uniform(0, 1, (8, 8, 3))
    feat = ray_feature_map(img, cam)
    assert feat.shape == (8, 8, 9)
    assert np.array_equal(feat[..., :3], img)
    assert np.array_equal(feat[..., 3:], ray_embedding(cam))
    with pytest.raises(ValueError):
        ray_feature_map(img * 2, cam)
    with pytest.raises(ValueError):
        ray_feature_map(img[:4], cam)


def test_zero_raw_fixed_points():
    cfg = DecodeConfig()
    cam = _cam(size=8)
    grid = PixelGaussianGrid(np.zeros((1, 2, 3, N_RAW)), (cam,))
    gs = decode_pixel_gaussians(grid, cfg)
    assert len(gs) == 6
    assert np.all(gs.opacities == 0.5)
    assert np.all(gs.colors == 0.5)
    assert np.all(gs.rotations == [1.0, 0.0, 0.0, 0.0])
    assert np.allclose(gs.scales, (cfg.scale_min + cfg.scale_max) / 2)
    dist = np.linalg.norm(gs.means - cam.position, axis=1)
    assert np.allclose(dist, (cfg.near + cfg.far) / 2)


def test_quaternion_bias_cancel_falls_back_to_identity():
    raw = np.zeros((1, 1, 1, N_RAW))
    raw[..., 6] = -1.0
    gs = decode_pixel_gaussians(PixelGaussianGrid(raw, (_cam(),)))
    assert np.array_equal(gs.rotations[0], [1.0, 0.0, 0.0, 0.0])


@pytest.mark.parametrize("shape", [(1, 1, 1), (5, 4, 3), (6, 2, 2)])
def test_gaussian_count(shape):
    v, h, w = shape
    grid = PixelGaussianGrid(np.zeros((v, h, w, N_RAW)), tuple(_cam() for _ in range(v)))
    assert len(decode_pixel_gaussians(grid)) == v * h * w == grid.n_gaussians


def test_non_finite_raw_reports_location():
    raw = np.zeros((2, 3, 3, N_RAW))
    raw[1, 2, 0, 7] = np.nan
    with pytest.raises(ValueError, match=r"view 1, pixel \(2, 0\), channel 7"):
        decode_pixel_gaussians(PixelGaussianGrid(raw, (_cam(), _cam())))


def test_decode_is_elementwise():
    rng = np.random.default_rng(1)
    raw = rng.normal(size=(2, 3, 3, N_RAW))
    grid = PixelGaussianGrid(raw, (_cam(), _cam((0, 0, 2.7))))
    a = decode_pixel_gaussians(grid).to_array()
    raw2 = raw.copy()
    raw2[1, 1, 2] += 0.5
    b = decode_pixel_gaussians(PixelGaussianGrid(raw2, grid.cameras)).to_array()
    changed = np.flatnonzero(np.any(a != b, axis=1))
    assert changed.tolist() == [1 * 9 + 1 * 3 + 2]


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (1, 2, 2, N_RAW), elements=st.floats(-1e6, 1e6)))
def test_decode_always_valid(raw):
    cfg = DecodeConfig()
    gs = decode_pixel_gaussians(PixelGaussianGrid(raw, (_cam(),)), cfg)
    gs.validate(cfg.scale_min, cfg.scale_max)


def test_decode_vjp_matches_finite_differences():
    rng = np.random.default_rng(7)
    cfg = DecodeConfig()
    raw = rng.normal(size=(2, 2, 3, N_RAW))
    grid = PixelGaussianGrid(raw, (_cam(), _cam((-1.0, 0.3, 2.4))))
    weights = rng.normal(size=(len(decode_pixel_gaussians(grid)), 14))

    def f(r):
        return float(np.sum(weights * decode_pixel_gaussians(PixelGaussianGrid(r, grid.cameras), cfg).to_array()))

    gs, cache = decode_pixel_gaussians(grid, cfg, return_cache=True)
    g = GaussianGrads(weights[:, 0:3], weights[:, 3:6], weights[:, 6:10], weights[:, 10], weights[:, 11:14])
    ana = decode_vjp(grid, cache, g, cfg)
    h = 1e-6
    for idx in np.ndindex(raw.shape):
        p, m = raw.copy(), raw.copy()
        p[idx] += h
        m[idx] -= h
        fd = (f(p) - f(m)) / (2 * h)
        assert ana[idx] == pytest.approx(fd, rel=1e-5, abs=1e-7)


def test_grid_validation():
    with pytest.raises(ValueError):
        PixelGaussianGrid(np.zeros((1, 2, 2, 13)), (_cam(),))
    with pytest.raises(ValueError):
        PixelGaussianGrid(np.zeros((2, 2, 2, N_RAW)), (_cam(),))


def test_grid_save_load(tmp_path):
    rng = np.random.default_rng(2)
    grid = PixelGaussianGrid(rng.normal(size=(2, 3, 4, N_RAW)), (_cam(), _cam((0, 1, 2))))
    grid.save(tmp_path / "g.bin")
    back = PixelGaussianGrid.load(tmp_path / "g.bin")
    assert np.array_equal(back.raw, grid.raw)
    assert back.cameras == grid.cameras


def test_init_grid_from_images():
    cams = [orbit_camera(RigSpec(width=16, height=16), a) for a in (0.0, 90.0)]
    img = np.full((16, 16, 3), 0.25)
    mask = np.zeros((16, 16))
    mask[:8] = 1.0
    grid = init_grid_from_images(cams, [img, img], [mask, mask], (4, 4), scale=0.02)
    gs = decode_pixel_gaussians(grid)
    assert np.allclose(gs.colors, 0.25)
    assert np.allclose(gs.scales, 0.02)
    op = gs.opacities.reshape(2, 4, 4)
    assert np.allclose(op[:, :2], 0.6) and np.allclose(op[:, 2:], 0.05)


@pytest.mark.parametrize("binary", [True, False])
def test_ply_round_trip(tmp_path, binary):
    gs = _random_set(np.random.default_rng(4), 1000)
    ply_write(gs, tmp_path / "g.ply", binary=binary)
    back = ply_read(tmp_path / "g.ply")
    assert np.array_equal(back.to_array(), gs.to_array())


def test_ply_empty(tmp_path):
    ply_write(GaussianSet.empty(), tmp_path / "e.ply")
    assert len(ply_read(tmp_path / "e.ply")) == 0


def test_ply_big_endian_float(tmp_path):
    gs = _random_set(np.random.default_rng(5), 10)
    head = ["ply", "format binary_big_endian 1.0", "element vertex 10"]
    head += [f"property float {n}" for n in ("x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1",
                                             "rot_2", "rot_3", "opacity", "r", "g", "b")]
    head.append("end_header")
    body = gs.to_array().astype(">f4").tobytes()
    (tmp_path / "b.ply").write_bytes(("\n".join(head) + "\n").encode() + body)
    back = ply_read(tmp_path / "b.ply")
    assert np.array_equal(back.to_array(), gs.to_array().astype(np.float32).astype(np.float64))


def test_ply_malformed_reports_line(tmp_path):
    p = tmp_path / "bad.ply"
    p.write_text("ply\nformat ascii 1.0\nelement vertex 1\nproperty quad x\nend_header\n")
    with pytest.raises(PlyError, match="line 4"):
        ply_read(p)
    p.write_text("plx\n")
    with pytest.raises(PlyError):
        ply_read(p)
    ply_write(_random_set(np.random.default_rng(0), 2), p, binary=False)
    lines = p.read_text().splitlines()
    lines[-1] = "1 2 3"
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(PlyError, match="line"):
        ply_read(p)
