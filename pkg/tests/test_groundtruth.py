import numpy as np
import pytest

from halfcnn.errors import DimensionError, InputError
from halfcnn.groundtruth import (Window, content_mask, gaussian_map, prepare_sample,
                                 renormalize_range)


def test_gaussian_peak_and_sigma():
    win = Window(128, 128, 96, 96)
    assert win.sigma_x == win.sigma_y == 16
    m = gaussian_map([win], 256, 256)
    assert m[0, 128, 128] == 1.0
    # one sigma out along x
    assert m[0, 128, 144] == pytest.approx(np.exp(-0.5), rel=1e-15)


def test_gaussian_max_merge():
    a, b = Window(20, 20, 12, 18), Window(40, 30, 24, 12)
    single = gaussian_map([a], 64, 64)
    np.testing.assert_array_equal(gaussian_map([a, a], 64, 64), single)
    np.testing.assert_array_equal(gaussian_map([a, b], 64, 64),
                                  np.maximum(single, gaussian_map([b], 64, 64)))


def test_window_mirror_and_validation():
    w = Window(10.0, 5.0, 8.0, 6.0).mirrored(64)
    assert (w.cx, w.cy, w.w, w.h) == (53.0, 5.0, 8.0, 6.0)
    with pytest.raises(InputError):
        Window(0, 0, 0, 5)


def test_renormalize():
    np.testing.assert_allclose(renormalize_range([[0.0, 1.0, 0.5]]), [[[0.1, 0.9, 0.5]]], atol=1e-16)
    with pytest.raises(InputError):
        renormalize_range([[1.5]])


def test_lfw_sized_image_mask():
    s = prepare_sample(np.zeros((3, 250, 250)), [Window(125, 125, 100, 100)], None, 256, 256, 4)
    assert s.target.shape == s.mask.shape == (1, 64, 64)
    assert s.mask[0, :62, :62].all() and not s.mask[0, 62:, :].any() and not s.mask[0, :, 62:].any()
    assert s.image.shape == (3, 256, 256)


def test_full_canvas_mask_and_empty_target():
    s = prepare_sample(np.zeros((1, 32, 32)), [], None, 32, 32, 4)
    assert s.mask.all()
    np.testing.assert_array_equal(s.target, 0.1)


def test_target_range_and_binary_mask():
    rng = np.random.default_rng(0)
    for _ in range(20):
        h, w = rng.integers(10, 64, size=2)
        wins = [Window(rng.uniform(0, w), rng.uniform(0, h), rng.uniform(4, 30), rng.uniform(4, 30))]
        s = prepare_sample(rng.uniform(size=(1, h, w)), wins, None, 64, 64, 4)
        assert s.target.min() >= 0.1 and s.target.max() <= 0.9
        assert set(np.unique(s.mask)) <= {0.0, 1.0}


def test_target_map_path():
    m = np.zeros((1, 8, 8))
    m[0, 0:4, 0:4] = 1.0
    s = prepare_sample(np.zeros((1, 8, 8)), None, m, 8, 8, 4)
    np.testing.assert_allclose(s.target, [[[0.9, 0.1], [0.1, 0.1]]])
    with pytest.raises(InputError):
        prepare_sample(np.zeros((1, 8, 8)), None, np.zeros((1, 4, 4)), 8, 8, 4)


def test_prepare_sample_errors():
    with pytest.raises(InputError):
        prepare_sample(np.zeros((1, 40, 8)), [], None, 32, 32, 4)
    with pytest.raises(DimensionError):
        prepare_sample(np.zeros((1, 8, 8)), [], None, 30, 30, 4)


def test_content_mask_partial_blocks_excluded():
    m = content_mask(7, 9, 16, 16, 4)
    assert m[0, :1, :2].all() and m.sum() == 2
