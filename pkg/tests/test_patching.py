import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clvae.patching import (TimeSeriesStack, augment, crop, default_padding, extract_patches,
                            gamma_contrast, gaussian_blur3, pad_reflect, patch_anchors,
                            replicate_post, rotate, stack_pre_series)
from clvae.raster_io import SarTile


def tile(h=64, w=64, day=1, seed=0):
    rng = np.random.default_rng(seed)
    return SarTile(rng.random((h, w)), rng.random((h, w)), acquisition_date=dt.date(2021, 1, day))


def test_stack_pre_series_shapes():
    s = stack_pre_series([tile(day=d, seed=d) for d in (1, 7, 13, 19)], 4)
    assert s.values.shape == (4, 64, 64, 3)
    assert not s.values[..., 2].any()
    assert s.dates[0] == dt.date(2021, 1, 1)
    assert stack_pre_series([tile(day=1), tile(day=7)], 2).values.shape == (2, 64, 64, 3)


def test_stack_pre_series_errors():
    with pytest.raises(ValueError, match="differ"):
        stack_pre_series([tile(day=1), tile(32, 32, day=7)], 2)
    with pytest.raises(ValueError, match="expected"):
        stack_pre_series([tile(day=1)], 2)
    with pytest.raises(ValueError, match="increasing"):
        stack_pre_series([tile(day=7), tile(day=1)], 2)


def test_replicate_post():
    t = tile()
    s = replicate_post(t, 4)
    assert s.values.shape == (4, 64, 64, 3)
    assert np.array_equal(s.values[0], s.values[3])
    assert np.array_equal(s.values[2, ..., 0], t.vv)
    assert replicate_post(t, 1).values.shape == (1, 64, 64, 3)


def test_pad_reflect_row():
    row = np.array([1.0, 2.0, 3.0, 4.0])  # a, b, c, d
    v = np.zeros((1, 4, 4, 3), np.float32)
    v[0, :, :, 0] = row
    out = pad_reflect(TimeSeriesStack(v, [None]), 2, 0).values[0, 2, :, 0]
    assert out.tolist() == [3.0, 2.0, 1.0, 2.0, 3.0, 4.0]


def test_pad_reflect_dims_and_identity():
    s = replicate_post(tile(), 2)
    assert pad_reflect(s, 8, 7).spatial_shape == (79, 79)
    assert np.array_equal(pad_reflect(s, 0, 0).values, s.values)
    with pytest.raises(ValueError):
        pad_reflect(replicate_post(tile(8, 8), 1), 8, 7)


@given(st.integers(9, 40), st.integers(9, 40), st.integers(0, 8), st.integers(0, 8))
@settings(max_examples=30)
def test_pad_then_crop_identity(h, w, a, b):
    s = TimeSeriesStack(np.random.default_rng(h * w).random((2, h, w, 3)).astype(np.float32), [None] * 2)
    assert np.array_equal(crop(pad_reflect(s, a, b), a, b).values, s.values)


def test_patch_counts():
    padded = pad_reflect(replicate_post(tile(), 1), 8, 7)
    assert len(extract_patches(padded, 16, 1)) == 64 * 64
    assert len(patch_anchors((79, 79), 16, 16)) == 16
    assert len(patch_anchors((16, 16), 16, 1)) == 1
    with pytest.raises(ValueError):
        patch_anchors((15, 40), 16, 1)


@pytest.mark.parametrize("h, w", [(32, 32), (33, 100), (129, 64), (512, 47)])
def test_one_patch_per_pixel(h, w):
    top, bottom = default_padding(16)
    anchors = patch_anchors((h + top + bottom, w + top + bottom), 16, 1)
    assert len(anchors) == h * w
    k = np.arange(h * w)
    assert np.array_equal(anchors[:, 0], k // w) and np.array_equal(anchors[:, 1], k % w)


def test_patch_is_centred_on_its_pixel():
    s = replicate_post(tile(40, 40), 1)
    padded = pad_reflect(s, 8, 7)
    batch = extract_patches(padded, 16, 1)
    k = 17 * 40 + 23
    r, c = batch.anchors[k]
    assert (r, c) == (17, 23)
    assert batch.patches[k, 0, 8, 8, 0] == s.values[0, 17, 23, 0]


def _patch(seed=0):
    p = np.random.default_rng(seed).random((4, 16, 16, 3)).astype(np.float32)
    p[..., 2] = 0
    return p


def test_augment_deterministic_and_in_range():
    p = _patch()
    for seed in range(20):
        a, b = augment(p, seed), augment(p, seed)
        assert np.array_equal(a, b)
        assert a.shape == p.shape
        assert a.min() >= 0 and a.max() <= 1


def test_augment_same_transform_for_all_timesteps():
    frame = _patch()[0]
    p = np.repeat(frame[None], 4, axis=0)
    for seed in range(10):
        out = augment(p, seed)
        for t in range(1, 4):
            assert np.array_equal(out[0], out[t])


def test_gamma_one_identity_and_flip_involution():
    p = _patch(3)
    assert np.array_equal(gamma_contrast(p, 1.0), p)
    assert np.array_equal(p[:, :, ::-1][:, :, ::-1], p)
    assert np.allclose(rotate(p, 0.0), p)


def test_blur_is_convex_combination():
    p = _patch(4)
    out = gaussian_blur3(p, 0.8)
    assert out.min() >= p.min() - 1e-7 and out.max() <= p.max() + 1e-7
    const = np.full_like(p, 0.3)
    np.testing.assert_allclose(gaussian_blur3(const, 0.8), const, atol=1e-7)
