from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from restir_ir.denoise import AtrousParams, _apply, apply_state, atrous_backward, atrous_filter, tap_offsets


def buffers(color, normal=None, pos=None, alpha=None):
    h, w = color.shape[:2]
    return SimpleNamespace(
        color=np.asarray(color, dtype=np.float64),
        normal_aov=np.tile([0.0, 0.0, 1.0], (h, w, 1)) if normal is None else normal,
        position_aov=np.zeros((h, w, 3)) if pos is None else pos,
        alpha=np.ones((h, w)) if alpha is None else alpha,
    )


def test_params_validation():
    with pytest.raises(ValueError):
        AtrousParams(sigma_n=0.0)
    with pytest.raises(ValueError):
        AtrousParams(iterations=0)
    assert AtrousParams.for_scene(2.0).sigma_x == pytest.approx(0.025)


def test_constant_image_unchanged():
    c = np.full((20, 24, 3), 0.37)
    out, _ = atrous_filter(buffers(c), AtrousParams())
    np.testing.assert_allclose(out, c, rtol=0, atol=1e-15)


@given(st.integers(0, 2**31 - 1), st.integers(1, 4))
def test_weights_normalised(seed, iterations):
    rng = np.random.default_rng(seed)
    h, w = 9, 11
    alpha = (rng.random((h, w)) > 0.2).astype(float)
    n = rng.normal(size=(h, w, 3))
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    fb = buffers(rng.random((h, w, 3)), n, rng.random((h, w, 3)), alpha)
    _, state = atrous_filter(fb, AtrousParams(iterations=iterations))
    s = state.weights.sum(axis=2).reshape(iterations, -1)
    fg = alpha.ravel() > 0
    assert np.all(s[:, ~fg] == 0)
    np.testing.assert_allclose(s[:, fg], 1.0, atol=1e-12)


def test_flat_region_mean_per_pass(rng):
    c = 0.5 + 0.01 * rng.normal(size=(64, 64, 3))
    fb = buffers(c)
    prev = c.mean()
    for it in (1, 2, 3):
        out, _ = atrous_filter(fb, AtrousParams(iterations=it, sigma_x=1.0))
        assert abs(out.mean() - prev) < 1e-5
        prev = out.mean()


def test_background_and_isolated_pixels_pass_through(rng):
    c = rng.random((10, 10, 3))
    alpha = np.zeros((10, 10))
    alpha[5, 5] = 1.0  # no foreground neighbour within reach but itself
    alpha[0:3, 0:3] = 1.0
    out, _ = atrous_filter(buffers(c, alpha=alpha), AtrousParams(iterations=1))
    assert np.array_equal(out[alpha == 0], c[alpha == 0])
    assert np.array_equal(out[5, 5], c[5, 5])


def test_normal_edge_blocks_transport(rng):
    h, w = 16, 16
    left = np.arange(w) < w // 2
    normal = np.tile([0.0, 0.0, 1.0], (h, w, 1))
    normal[:, ~left] = [1.0, 0.0, 0.0]
    c = np.where(left[None, :, None], 0.2, 0.9) + 0.05 * rng.random((h, w, 3))
    p = AtrousParams(sigma_n=1e-6, sigma_x=10.0)
    out, _ = atrous_filter(buffers(c, normal), p)
    # single-sided reference: the right plane removed from the neighbourhoods
    alpha = np.broadcast_to(left, (h, w)).astype(float)
    one_side, _ = atrous_filter(buffers(c, normal, alpha=alpha), p)
    assert np.array_equal(out[:, left], one_side[:, left])


@pytest.mark.parametrize("i", [0, 1, 2, 3])
def test_tap_offsets(i):
    s = 2**i
    assert tap_offsets(i) == [-2 * s, -s, 0, s, 2 * s]
    # impulse response of pass i lands exactly on those offsets
    n = 4 * s + 1 + 8
    fb = buffers(np.full((n, n, 3), 0.5))
    _, state = atrous_filter(fb, AtrousParams(iterations=i + 1, sigma_rt=1e3, sigma_x=1e3))
    imp = np.zeros((n, n, 1))
    c = n // 2
    imp[c, c] = 1.0
    # stored weights of pass i applied with its own spacing
    out = np.empty((n * n, 1))
    _apply(imp.reshape(-1, 1), state.weights[i], n, n, s, out)
    ys, xs = np.nonzero(out.reshape(n, n) > 0)
    assert set(ys - c) <= set(tap_offsets(i)) and set(xs - c) <= set(tap_offsets(i))
    assert set(ys - c) == set(tap_offsets(i))


def test_backward_is_transpose(rng):
    h, w = 12, 13
    n = rng.normal(size=(h, w, 3))
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    fb = buffers(rng.random((h, w, 3)), n, rng.random((h, w, 3)), (rng.random((h, w)) > 0.1).astype(float))
    _, state = atrous_filter(fb, AtrousParams())
    x = rng.normal(size=(h, w, 3))
    y = rng.normal(size=(h, w, 3))
    lhs = (apply_state(state, x) * y).sum()
    rhs = (x * atrous_backward(state, y)).sum()
    assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))


def test_apply_state_matches_filter(rng):
    fb = buffers(rng.random((10, 10, 3)))
    out, state = atrous_filter(fb, AtrousParams())
    np.testing.assert_allclose(apply_state(state, fb.color), out, atol=1e-14)


def test_extras_filtered_with_same_weights(rng):
    fb = buffers(rng.random((10, 10, 3)))
    e = rng.random((10, 10, 3))
    _, state, (fe,) = atrous_filter(fb, AtrousParams(), extra=[e])
    np.testing.assert_allclose(fe, apply_state(state, e), atol=1e-14)


def test_smooth_image_nearly_unchanged():
    h, w = 48, 48
    yy, xx = np.mgrid[0:h, 0:w] / 48.0
    c = np.stack([0.3 + 0.2 * xx, 0.4 + 0.1 * yy, 0.5 + 0.0 * xx], axis=-1)
    pos = np.stack([xx, yy, np.zeros_like(xx)], axis=-1)
    out, _ = atrous_filter(buffers(c, pos=pos), AtrousParams(sigma_x=0.05))
    assert np.mean((out - c) ** 2) / np.mean(c**2) < 0.01
