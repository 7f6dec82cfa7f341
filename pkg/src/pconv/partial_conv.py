"""Masked, renormalized convolution with automatic mask updating.

Output at each location is conditioned only on valid (mask=1) inputs and
rescaled by capacity / valid_count, where capacity counts the window
positions that land inside the image, so magnitudes do not depend on how
much of the window is masked out. Zero-padding at the border is one more
hole: padded positions count toward neither sum, which keeps the full-mask
case exactly equal to a plain convolution. Locations whose window saw at
least one valid input become valid in the updated mask; everything else
stays a hole.

Masks are stored at full feature shape (n, c, h, w) and the window sums run
over channels as well as the spatial kernel, so the valid counts are exact
small integers and the >0 validity test has no epsilon ambiguity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import (ConvParams, check_binary, conv2d_backward, conv2d_forward,
                     conv_out_hw)


@dataclass
class MaskedTensor:
    """Feature tensor paired with a same-shape binary validity mask."""

    features: np.ndarray
    mask: np.ndarray

    def validate(self):
        if self.features.shape != self.mask.shape:
            raise ShapeError("mask shape must equal feature shape",
                             expected=self.features.shape, got=self.mask.shape)
        check_binary(self.mask)
        return self


@dataclass
class PartialConvLayer:
    """Trainable conv weights plus the implicit all-ones mask kernel.

    The mask kernel is never trained and never serialized; it exists only
    as the fixed convolution that counts valid inputs per window.

    per_channel switches the renormalization to count valid inputs within
    each input channel's spatial window separately (capacity kh*kw away
    from the border) instead of across the whole channel-inclusive window.
    The mask update is unchanged: a location is valid iff any input
    anywhere in the window was valid.
    """

    params: ConvParams
    per_channel: bool = False

    @property
    def window_size(self):
        c_out, c_in, kh, kw = self.params.weights.shape
        return c_in * kh * kw


def mask_window_sums(mask, layer: PartialConvLayer):
    """Valid-input count per output location: (n, 1, oh, ow), exact integers."""
    c_out, c_in, kh, kw = layer.params.weights.shape
    ones = ConvParams(
        weights=np.ones((1, c_in, kh, kw), dtype=mask.dtype),
        bias=np.zeros(1, dtype=mask.dtype),
        stride=layer.params.stride,
        padding=layer.params.padding,
    )
    return np.rint(conv2d_forward(mask, ones))


def window_capacity(height, width, layer: PartialConvLayer, channels=None):
    """In-bounds window positions per output location: (1, 1, oh, ow).

    The renormalization numerator: how many inputs the window could see at
    this location if nothing were masked. Padding is outside the image, so
    border windows have capacity below the nominal window size.
    """
    c_in = layer.params.weights.shape[1] if channels is None else channels
    full = np.ones((1, c_in, height, width))
    kh, kw = layer.params.weights.shape[2:]
    ones = ConvParams(np.ones((1, c_in, kh, kw)), np.zeros(1),
                      layer.params.stride, layer.params.padding)
    return np.rint(conv2d_forward(full, ones))


def _channel_slices(inp: MaskedTensor, layer: PartialConvLayer):
    """Per-input-channel (masked features, weight slice, ratio) triples."""
    params = layer.params
    c_out, c_in, kh, kw = params.weights.shape
    capacity = window_capacity(*inp.features.shape[2:], layer, channels=1)
    for c in range(c_in):
        mask_c = inp.mask[:, c:c + 1]
        ones = ConvParams(np.ones((1, 1, kh, kw), dtype=mask_c.dtype),
                          np.zeros(1, dtype=mask_c.dtype),
                          params.stride, params.padding)
        counts = np.rint(conv2d_forward(mask_c, ones))
        has = counts > 0.0
        ratio = np.where(has, capacity / np.where(has, counts, 1.0), 0.0)
        slice_params = ConvParams(params.weights[:, c:c + 1],
                                  np.zeros(c_out, dtype=params.bias.dtype),
                                  params.stride, params.padding)
        yield c, inp.features[:, c:c + 1] * mask_c, slice_params, ratio


def partial_conv_forward(inp: MaskedTensor, layer: PartialConvLayer):
    """Renormalized masked convolution followed by the mask update."""
    inp.validate()
    params = layer.params
    counts = mask_window_sums(inp.mask, layer)
    valid = counts > 0.0

    if layer.per_channel:
        raw = None
        for _, masked_c, slice_params, ratio_c in _channel_slices(inp, layer):
            term = conv2d_forward(masked_c, slice_params) * ratio_c
            raw = term if raw is None else raw + term
    else:
        capacity = window_capacity(*inp.features.shape[2:], layer)
        ratio = np.where(valid, capacity / np.where(valid, counts, 1.0), 0.0)
        raw = conv2d_forward(inp.features * inp.mask,
                             ConvParams(params.weights,
                                        np.zeros_like(params.bias),
                                        params.stride, params.padding)) * ratio
    out = raw + params.bias[None, :, None, None] * valid
    new_mask = np.broadcast_to(
        valid.astype(inp.mask.dtype), out.shape).copy()
    return MaskedTensor(out, new_mask)


def partial_conv_backward(inp: MaskedTensor, layer: PartialConvLayer, grad_out):
    """Gradients w.r.t. features, weights, bias.

    The renormalization ratio and the updated mask are functions of the
    input mask only, so both are constants of the forward pass; no gradient
    reaches the mask.
    """
    params = layer.params
    c_out = params.weights.shape[0]
    n, _, h, w = inp.features.shape
    oh, ow = conv_out_hw(h, w, *params.weights.shape[2:],
                         params.stride, params.padding)
    if grad_out.shape != (n, c_out, oh, ow):
        raise ShapeError("grad_out shape mismatch",
                         expected=(n, c_out, oh, ow), got=grad_out.shape)

    counts = mask_window_sums(inp.mask, layer)
    valid = counts > 0.0
    grad_bias = (grad_out * valid).sum(axis=(0, 2, 3))

    if layer.per_channel:
        grad_features = np.zeros_like(inp.features)
        grad_w = np.zeros_like(params.weights)
        for c, masked_c, slice_params, ratio_c in _channel_slices(inp, layer):
            gx, gw, _ = conv2d_backward(masked_c, slice_params,
                                        grad_out * ratio_c)
            grad_features[:, c:c + 1] = gx * inp.mask[:, c:c + 1]
            grad_w[:, c:c + 1] = gw
        return grad_features, grad_w, grad_bias

    capacity = window_capacity(*inp.features.shape[2:], layer)
    ratio = np.where(valid, capacity / np.where(valid, counts, 1.0), 0.0)
    grad_raw = grad_out * ratio
    masked = inp.features * inp.mask
    grad_masked, grad_w, _ = conv2d_backward(
        masked,
        ConvParams(params.weights, np.zeros_like(params.bias),
                   params.stride, params.padding),
        grad_raw)
    grad_features = grad_masked * inp.mask
    return grad_features, grad_w, grad_bias


def mask_coverage(mask):
    """Fraction of mask elements equal to 1."""
    check_binary(mask)
    if mask.size == 0:
        return 0.0
    return float(mask.mean())


def simulate_mask_update(mask2d, kernel, stride, padding):
    """Mask-only propagation oracle for one layer on a 2-D boolean grid.

    Independent of the convolution path: a location is valid iff any input
    in its receptive window is valid. Used to predict per-layer coverage.
    """
    m = np.pad(mask2d.astype(bool), padding, constant_values=False)
    win = np.lib.stride_tricks.sliding_window_view(m, (kernel, kernel))
    return win[::stride, ::stride].any(axis=(2, 3))
