from __future__ import annotations

import math

import numpy as np
import pytest

from splatrecon import io as sio
from splatrecon.providers import (ProviderError, ProviderRequest, ProviderResponse, degraded_provide, file_provide,
                                  oracle_provide, write_provider_dir)
from splatrecon.rig import RigSpec, input_plus_targets
from splatrecon.scene import default_humanoid, raymarch_render

SPEC = RigSpec(width=128, height=128)


@pytest.fixture(scope="module")
def req():
    scene = default_humanoid()
    inp, tg = input_plus_targets(SPEC, 0.0)
    img = raymarch_render(scene, inp).rgb
    return ProviderRequest(((img, inp),), tg.cameras, scene)


def test_request_validation(req):
    img, cam = req.inputs[0]
    with pytest.raises(ProviderError):
        ProviderRequest((), req.targets)
    with pytest.raises(ProviderError):
        ProviderRequest(req.inputs, req.targets[:3])
    with pytest.raises(ProviderError):
        ProviderRequest(((img, req.targets[1]),), req.targets)


def test_response_validation():
    with pytest.raises(ProviderError):
        ProviderResponse([np.zeros((4, 4, 3))], [np.full((4, 4), 0.5)], {})
    with pytest.raises(ProviderError):
        ProviderResponse([np.full((4, 4, 3), 1.5)], [np.zeros((4, 4))], {})
    with pytest.raises(ProviderError):
        ProviderResponse([np.zeros((4, 4, 3))], [np.zeros((4, 5))], {})


def test_oracle_matches_direct_render(req):
    resp = oracle_provide(req)
    assert len(resp.views) == 4
    for cam, v, s in zip(req.targets, resp.views, resp.silhouettes):
        r = raymarch_render(req.scene, cam)
        assert np.array_equal(v, r.rgb) and np.array_equal(s, r.alpha)
    assert resp.provenance["kind"] == "oracle"


def test_file_round_trip(tmp_path, req):
    resp = oracle_provide(req)
    write_provider_dir(tmp_path, resp, req.targets)
    back = file_provide(tmp_path, req)
    for a, b, sa, sb in zip(resp.views, back.views, resp.silhouettes, back.silhouettes):
        assert np.max(np.abs(a - b)) <= 0.5 / 255 + 1e-12
        assert np.array_equal(sa, sb)
    assert back.provenance["warnings"] == []


def test_file_missing_mask(tmp_path, req):
    write_provider_dir(tmp_path, oracle_provide(req))
    (tmp_path / "mask_2.png").unlink()
    with pytest.raises(ProviderError, match="mask_2.png"):
        file_provide(tmp_path, req)


def test_file_resolution_mismatch(tmp_path, req):
    write_provider_dir(tmp_path, oracle_provide(req))
    sio.save_rgb_png(tmp_path / "view_1.png", np.zeros((32, 32, 3)))
    with pytest.raises(ProviderError, match="view_1.png: expected 128x128, got 32x32"):
        file_provide(tmp_path, req)


def test_file_camera_mismatch_warns(tmp_path, req):
    _, other = input_plus_targets(SPEC, 10.0)
    write_provider_dir(tmp_path, oracle_provide(req), other.cameras)
    assert file_provide(tmp_path, req).provenance["warnings"]


def test_noise_statistics(req):
    clean = oracle_provide(req)
    noisy = degraded_provide(req, noise_sigma=0.1, pose_jitter_deg=0.0, seed=0)
    diffs = []
    for a, b in zip(clean.views, noisy.views):
        mid = (a > 0.4) & (a < 0.6)  # four sigma from both clip bounds
        diffs.append(np.abs(b - a)[mid])
    d = np.concatenate(diffs)
    assert d.size > 1000
    assert np.mean(d) == pytest.approx(0.1 * math.sqrt(2 / math.pi), rel=0.05)
    assert all(np.array_equal(s, t) for s, t in zip(clean.silhouettes, noisy.silhouettes))


def test_pose_jitter_moves_silhouettes(req):
    clean = oracle_provide(req)
    jit = degraded_provide(req, noise_sigma=0.0, pose_jitter_deg=5.0, seed=1)
    # same draws as the provider: one uniform azimuth offset per target
    angles = np.random.default_rng(1).uniform(-5.0, 5.0, 4)
    moved = 0
    for ang, a, b in zip(angles, clean.silhouettes, jit.silhouettes):
        iou = np.sum((a > 0) & (b > 0)) / np.sum((a > 0) | (b > 0))
        if abs(ang) > 1.0:
            assert iou < 1.0
            moved += 1
    assert moved >= 2


def test_degraded_zero_equals_oracle(req):
    a, b = oracle_provide(req), degraded_provide(req, 0.0, 0.0, seed=5)
    assert all(np.array_equal(x, y) for x, y in zip(a.views, b.views))
    with pytest.raises(ProviderError):
        degraded_provide(req, -0.1, 0.0, seed=0)
