"""Super-resolution by hole filling.

A low-resolution image is upscaled K times by placing each pixel (x, y) at
(K*x + floor(K/2), K*y + floor(K/2)) on an otherwise empty grid, marking
only those positions valid, and letting the inpainting network fill the
rest. K = 1 places every pixel at itself.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError
from .partial_conv import MaskedTensor


def build_sr_input(low_res, K):
    """Sparse K-upscaled image and its placement mask."""
    low_res = np.asarray(low_res)
    if low_res.ndim != 4:
        raise ShapeError("expected a rank-4 batch", expected=4,
                         got=low_res.ndim)
    if K < 1 or int(K) != K:
        raise ConfigError("upscale factor must be a positive integer, got %r"
                          % (K,))
    K = int(K)
    n, c, h, w = low_res.shape
    offset = K // 2
    features = np.zeros((n, c, K * h, K * w), dtype=low_res.dtype)
    mask = np.zeros_like(features)
    features[:, :, offset::K, offset::K] = low_res
    mask[:, :, offset::K, offset::K] = 1.0
    return MaskedTensor(features, mask)


def superres(net, low_res, K):
    """Inpaint the placement grid; output is (n, c, K*h, K*w)."""
    mt = build_sr_input(low_res, K)
    step = 2 ** net.depth
    h, w = mt.features.shape[2:]
    if h % step or w % step:
        raise ConfigError(
            "upscaled size %dx%d is not divisible by the encoder stride "
            "product %d; pad the input so K*H and K*W are multiples of %d"
            % (h, w, step, step))
    return net.forward(mt.features, mt.mask, training=False)
