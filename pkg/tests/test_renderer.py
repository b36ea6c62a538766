from __future__ import annotations

import math

import numpy as np
import pytest

from splatrecon.gaussians import Gaussian3D, GaussianSet
from splatrecon.geometry import Camera, intrinsics_from_fov
from splatrecon.harness import random_scene, renderer_gradcheck
from splatrecon.reference import reference_render
from splatrecon.renderer import RenderConfig, render, render_backward, render_views, project_gaussian


def _origin_cam(size=16, fov=50.0):
    return Camera(intrinsics_from_fov(fov, size, size), np.eye(3), np.zeros(3))


def _one(mean, scale=0.1, opacity=0.8, color=(0.2, 0.4, 0.6)):
    return GaussianSet.from_gaussians([Gaussian3D(np.asarray(mean, float), np.full(3, scale),
                                                  np.array([1.0, 0, 0, 0]), opacity, np.asarray(color, float))])


def test_projection_isotropic_on_axis():
    cam = _origin_cam(32)
    g = Gaussian3D(np.array([0.0, 0.0, 2.0]), np.full(3, 0.1), np.array([1.0, 0, 0, 0]), 1.0, np.ones(3))
    p = project_gaussian(cam, g, regularize=False)
    f = cam.intrinsics.fx
    assert np.allclose(p.mean2d, [16.0, 16.0])
    assert np.allclose(p.cov2d, np.eye(2) * (f * 0.1 / 2.0) ** 2, atol=1e-12)
    eps = RenderConfig().eps2d
    assert np.allclose(project_gaussian(cam, g).cov2d - p.cov2d, np.eye(2) * eps, atol=1e-12)


def test_projection_off_axis_jacobian():
    # a thin needle along x at x0 stretches by the perspective Jacobian row fx/z
    cam = _origin_cam(32)
    z, x0, s = 3.0, 0.6, 0.2
    g = Gaussian3D(np.array([x0, 0.0, z]), np.array([s, 1e-6, 1e-6]), np.array([1.0, 0, 0, 0]), 1.0, np.ones(3))
    p = project_gaussian(cam, g, regularize=False)
    f = cam.intrinsics.fx
    assert p.cov2d[0, 0] == pytest.approx((f / z * s) ** 2, rel=1e-9)
    assert p.cov2d[1, 1] == pytest.approx(0.0, abs=1e-9)
    assert p.mean2d[0] == pytest.approx(f * x0 / z + 16.0)


def test_projection_behind_camera_is_culled():
    g = Gaussian3D(np.array([0.0, 0.0, -1.0]), np.full(3, 0.1), np.array([1.0, 0, 0, 0]), 1.0, np.ones(3))
    assert project_gaussian(_origin_cam(), g).culled


def test_empty_set_renders_background():
    cfg = RenderConfig(background=(0.1, 0.2, 0.3))
    out = render(GaussianSet.empty(), _origin_cam(), cfg)
    assert np.all(out.alpha == 0)
    assert np.allclose(out.rgb, [0.1, 0.2, 0.3])


def test_single_gaussian_center_pixel():
    # mean on the centre of pixel (8, 8): weight is exactly the opacity
    cam = _origin_cam(16)
    f = cam.intrinsics.fx
    z = 2.0
    mean = [(8.5 - 8.0) * z / f, (8.5 - 8.0) * z / f, z]
    out = render(_one(mean, opacity=0.7), cam)
    assert out.alpha[8, 8] == pytest.approx(0.7, abs=1e-12)
    assert np.allclose(out.rgb[8, 8], 0.7 * np.array([0.2, 0.4, 0.6]), atol=1e-12)


def test_front_to_back_order():
    cam = _origin_cam(16)
    near = _one([0, 0, 2.0], opacity=0.9, color=(1, 0, 0))
    far = _one([0, 0, 3.0], opacity=0.9, color=(0, 0, 1))
    both = GaussianSet.from_array(np.concatenate([far.to_array(), near.to_array()]))
    c = render(both, cam).rgb[8, 8]
    assert c[0] > c[2]


@pytest.mark.parametrize("seed", range(8))
def test_tiled_matches_reference(seed):
    rng = np.random.default_rng(seed)
    size = int(rng.choice([16, 24, 40, 64]))
    gset, cam = random_scene(rng, int(rng.integers(1, 65)), size)
    for tile in (8, 16):
        cfg = RenderConfig(tile=tile, background=tuple(rng.uniform(0, 1, 3)))
        a, b = render(gset, cam, cfg), reference_render(gset, cam, cfg)
        assert np.max(np.abs(a.rgb - b.rgb)) < 1e-6
        assert np.max(np.abs(a.alpha - b.alpha)) < 1e-6


def test_render_ranges():
    gset, cam = random_scene(np.random.default_rng(3), 64, 32)
    out = render(gset, cam)
    assert np.all((out.alpha >= 0) & (out.alpha <= 1))
    assert np.all((out.rgb >= 0) & (out.rgb <= 1))


def test_render_views_parallel_matches_serial():
    gset, cam = random_scene(np.random.default_rng(1), 20, 24)
    a = render_views(gset, [cam, cam], workers=1)
    b = render_views(gset, [cam, cam], workers=2)
    for x, y in zip(a, b):
        assert np.array_equal(x.rgb, y.rgb)


@pytest.mark.parametrize("seed", [0, 1])
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    gset, cam = random_scene(rng, 8, 16)
    rep = renderer_gradcheck(gset, cam, rng)
    assert rep["checked"] > 50
    assert rep["ok"], rep


def test_backward_rejects_bad_upstream():
    gset, cam = random_scene(np.random.default_rng(0), 4, 16)
    with pytest.raises(ValueError):
        render_backward(gset, cam, None, np.zeros((8, 8, 3)))
    bad = np.zeros((16, 16, 3))
    bad[0, 0, 0] = math.inf
    with pytest.raises(ValueError):
        render_backward(gset, cam, None, bad)


def test_config_validation():
    with pytest.raises(ValueError):
        RenderConfig(tile=12)
    with pytest.raises(ValueError):
        RenderConfig(near=1.0, far=0.5)
    with pytest.raises(ValueError):
        RenderConfig(footprint_sigma=5.0)
