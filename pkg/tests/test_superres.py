"""Sparse placement grid for upscaling and its network adapter."""

import numpy as np
import numpy.testing as npt
import pytest

from pconv.errors import ConfigError, ShapeError
from pconv.network import Network, scaled_config
from pconv.superres import build_sr_input, superres


@pytest.mark.parametrize("K", [1, 2, 4])
def test_placement_exhaustive(K):
    rng = np.random.default_rng(K)
    low = rng.uniform(size=(1, 3, 5, 4))
    mt = build_sr_input(low, K)
    n, c, h, w = low.shape
    assert mt.features.shape == (n, c, K * h, K * w)
    offset = K // 2
    expected_mask = np.zeros_like(mt.features)
    for y in range(h):
        for x in range(w):
            yy, xx = K * y + offset, K * x + offset
            npt.assert_array_equal(mt.features[:, :, yy, xx], low[:, :, y, x])
            expected_mask[:, :, yy, xx] = 1.0
    npt.assert_array_equal(mt.mask, expected_mask)
    off_grid = mt.features[mt.mask == 0.0]
    assert not off_grid.any()


@pytest.mark.parametrize("K", [1, 2, 3, 4, 7])
def test_valid_count_equals_source_pixels(K):
    low = np.ones((2, 3, 6, 5))
    mt = build_sr_input(low, K)
    assert int(mt.mask[0, 0].sum()) == 6 * 5
    assert int(mt.mask.sum()) == 2 * 3 * 6 * 5


def test_factor_one_is_identity():
    low = np.random.default_rng(0).uniform(size=(1, 3, 8, 8))
    mt = build_sr_input(low, 1)
    assert mt.features.tobytes() == low.tobytes()
    assert mt.mask.min() == 1.0


def test_four_x_places_origin_at_two_two():
    low = np.zeros((1, 1, 2, 2))
    low[0, 0, 0, 0] = 1.0
    mt = build_sr_input(low, 4)
    assert mt.features[0, 0, 2, 2] == 1.0
    assert mt.features.sum() == 1.0


def test_source_recoverable_from_grid():
    rng = np.random.default_rng(1)
    low = rng.uniform(size=(1, 3, 7, 9))
    K = 3
    mt = build_sr_input(low, K)
    npt.assert_array_equal(mt.features[:, :, 1::K, 1::K], low)


def test_bad_inputs():
    with pytest.raises(ShapeError):
        build_sr_input(np.zeros((3, 8, 8)), 2)
    with pytest.raises(ConfigError):
        build_sr_input(np.zeros((1, 3, 8, 8)), 0)
    with pytest.raises(ConfigError):
        build_sr_input(np.zeros((1, 3, 8, 8)), 2.5)


def test_superres_output_shape_and_agnosticism():
    net = Network(scaled_config(3, 8), seed=0)
    rng = np.random.default_rng(2)
    low = rng.uniform(size=(1, 3, 16, 16)).astype(np.float32)
    out = superres(net, low, 2)
    assert out.shape == (1, 3, 32, 32)
    assert np.isfinite(out).all()

    # filling the unplaced positions with junk must not change anything
    mt = build_sr_input(low, 2)
    junk = mt.features.copy()
    junk[mt.mask == 0.0] = 9.5
    out_junk = net.forward(junk, mt.mask, training=False)
    assert out.tobytes() == out_junk.tobytes()


def test_superres_divisibility_error_suggests_padding():
    net = Network(scaled_config(3, 8), seed=0)
    low = np.zeros((1, 3, 10, 10), dtype=np.float32)
    with pytest.raises(ConfigError) as info:
        superres(net, low, 3)
    assert "pad" in str(info.value)
