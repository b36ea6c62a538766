from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splatrecon.objective import (PERCEPTUAL_NAME, LossWeights, mse_loss, perceptual_proxy, silhouette_loss,
                                  total_loss)
from splatrecon.renderer import RenderedImage


def _fd(f, x, h):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        p, m = x.copy(), x.copy()
        p[idx] += h
        m[idx] -= h
        g[idx] = (f(p) - f(m)) / (2 * h)
    return g


def test_flat_field_values():
    a, b = np.full((16, 16, 3), 0.5), np.full((16, 16, 3), 0.6)
    assert mse_loss(a, b)[0] == pytest.approx(0.01, abs=1e-15)
    # flat images have equal gradient magnitudes, leaving only the image term at every level
    assert perceptual_proxy(a, b)[0] == pytest.approx(0.01, abs=1e-15)


def test_identical_inputs_give_zero():
    x = np.random.default_rng(0).uniform(0, 1, (16, 16, 3))
    assert mse_loss(x, x)[0] == 0.0
    assert perceptual_proxy(x, x)[0] == 0.0
    assert silhouette_loss(x[..., 0], (x[..., 0] > 0.5) * 1.0)[0] >= 0.0


def test_mse_gradient():
    rng = np.random.default_rng(1)
    p, g = rng.uniform(0, 1, (5, 6, 3)), rng.uniform(0, 1, (5, 6, 3))
    _, ana = mse_loss(p, g)
    fd = _fd(lambda x: mse_loss(x, g)[0], p, 1e-6)
    assert np.max(np.abs(ana - fd)) < 1e-8


@pytest.mark.parametrize("shape", [(16, 16, 3), (17, 19, 3), (9, 8, 1)])
def test_perceptual_gradient(shape):
    rng = np.random.default_rng(2)
    p, g = rng.uniform(0, 1, shape), rng.uniform(0, 1, shape)
    _, ana = perceptual_proxy(p, g)
    fd = _fd(lambda x: perceptual_proxy(x, g)[0], p, 1e-6)
    assert np.max(np.abs(ana - fd)) < 1e-6 * max(1.0, np.max(np.abs(fd)))


def test_perceptual_rejects_small_images():
    x = np.zeros((6, 6, 3))
    with pytest.raises(ValueError):
        perceptual_proxy(x, x, levels=3)
    with pytest.raises(ValueError):
        perceptual_proxy(x, x, levels=0)


def test_shape_mismatch_and_mask_range():
    with pytest.raises(ValueError):
        mse_loss(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(ValueError):
        silhouette_loss(np.zeros((4, 4)), np.full((4, 4), 1.5))


def test_weights_nonnegative():
    with pytest.raises(ValueError):
        LossWeights(lambda1=-1.0)


def test_default_weights():
    w = LossWeights()
    assert (w.lambda1, w.lambda2) == (1.5, 1.0)
    assert PERCEPTUAL_NAME == "perceptual_proxy"


def _views(rng, n, size=16):
    renders = [RenderedImage(rng.uniform(0, 1, (size, size, 3)), rng.uniform(0, 1, (size, size))) for _ in range(n)]
    gts = [rng.uniform(0, 1, (size, size, 3)) for _ in range(n)]
    masks = [(rng.uniform(0, 1, (size, size)) > 0.5) * 1.0 for _ in range(n)]
    return renders, gts, masks


def test_total_is_weighted_sum():
    rng = np.random.default_rng(3)
    bd, _ = total_loss(*_views(rng, 3))
    assert bd.total == bd.mse + 1.5 * bd.perceptual + 1.0 * bd.silhouette
    assert len(bd.per_view) == 3


def test_total_gradient_matches_fd():
    rng = np.random.default_rng(4)
    renders, gts, masks = _views(rng, 2, size=8)
    _, grads = total_loss(renders, gts, masks)

    def f(rgb):
        rs = [RenderedImage(rgb, renders[0].alpha), renders[1]]
        return total_loss(rs, gts, masks)[0].total

    fd = _fd(f, renders[0].rgb.copy(), 1e-6)
    assert np.max(np.abs(grads[0][0] - fd)) < 1e-6


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_total_is_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    r, g, m = _views(rng, 3, size=8)
    perm = rng.permutation(3)
    a, _ = total_loss(r, g, m)
    b, _ = total_loss([r[i] for i in perm], [g[i] for i in perm], [m[i] for i in perm])
    assert a.total == pytest.approx(b.total, rel=1e-14)


def test_view_count_mismatch():
    r, g, m = _views(np.random.default_rng(0), 2, size=8)
    with pytest.raises(ValueError):
        total_loss(r, g[:1], m)
    with pytest.raises(ValueError):
        total_loss([], [], [])
