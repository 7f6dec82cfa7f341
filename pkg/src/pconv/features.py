"""Fixed convolutional feature pyramid for perceptual comparisons.

A stack of blocks, each a run of 3x3 stride-1 pad-1 convolutions with ReLU
followed by a 2x2 stride-2 max pool. The pooled output of every block is a
tap. Weights are frozen: gradients flow through the stack to its input but
the stack itself is never updated.

Stacks are either randomly initialized (self-contained tests and desk-scale
training) or loaded from a weight file whose entries follow the naming
scheme vgg.conv<block>_<index>.weight / .bias with norm.mean, norm.std and
a taps entry giving cumulative conv counts per tapped block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, UserInputError
from .serialize import read_pcnv
from .tensor import ConvParams, conv2d_backward, conv2d_forward, he_init

VGG_WIDTHS = ((64, 64), (128, 128), (256, 256, 256))


@dataclass
class FeatureStack:
    """Frozen conv blocks plus the input normalization they expect."""

    blocks: list
    mean: np.ndarray
    std: np.ndarray

    @property
    def input_channels(self):
        return self.blocks[0][0].weights.shape[1]

    @classmethod
    def random(cls, seed, widths=VGG_WIDTHS, in_channels=3, dtype=np.float64):
        rng = np.random.default_rng(seed)
        blocks = []
        c_prev = in_channels
        for widths_in_block in widths:
            block = []
            for c_out in widths_in_block:
                fan_in = c_prev * 9
                w = he_init((c_out, c_prev, 3, 3), fan_in, rng, dtype=dtype)
                block.append(ConvParams(w, np.zeros(c_out, dtype=dtype),
                                        stride=1, padding=1))
                c_prev = c_out
            blocks.append(block)
        mean = np.zeros(in_channels, dtype=dtype)
        std = np.ones(in_channels, dtype=dtype)
        return cls(blocks, mean, std)

    @classmethod
    def from_pcnv(cls, path, dtype=np.float32):
        entries = read_pcnv(path)
        for needed in ("taps", "norm.mean", "norm.std"):
            if needed not in entries:
                raise UserInputError(
                    "feature weight file %s is missing entry %r" % (path, needed))
        taps = [int(t) for t in np.rint(entries["taps"])]
        if any(b <= a for a, b in zip(taps, taps[1:])) or taps[0] < 1:
            raise UserInputError(
                "feature weight file %s has a non-increasing taps entry" % path)
        counts = [taps[0]] + [b - a for a, b in zip(taps, taps[1:])]
        blocks = []
        for b, count in enumerate(counts, start=1):
            block = []
            for m in range(1, count + 1):
                try:
                    w = entries["vgg.conv%d_%d.weight" % (b, m)]
                    bias = entries["vgg.conv%d_%d.bias" % (b, m)]
                except KeyError as exc:
                    raise UserInputError(
                        "feature weight file %s is missing %s" % (path, exc))
                block.append(ConvParams(w.astype(dtype), bias.astype(dtype),
                                        stride=1, padding=1))
            blocks.append(block)
        mean = entries["norm.mean"].astype(dtype)
        std = entries["norm.std"].astype(dtype)
        return cls(blocks, mean, std)


def _maxpool2x2(x):
    """2x2 stride-2 max pool; odd trailing row/column is dropped.

    Returns the pooled output and the flat within-window argmax. argmax
    takes the first maximum in row-major window order, which fixes the
    gradient routing under ties.
    """
    n, c, h, w = x.shape
    if h < 2 or w < 2:
        raise ShapeError("max pool input must be at least 2x2",
                         expected="(>=2, >=2)", got=(h, w))
    he, we = (h // 2) * 2, (w // 2) * 2
    win = (x[:, :, :he, :we]
           .reshape(n, c, he // 2, 2, we // 2, 2)
           .transpose(0, 1, 2, 4, 3, 5)
           .reshape(n, c, he // 2, we // 2, 4))
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _maxpool2x2_backward(x_shape, idx, grad_out):
    n, c, h, w = x_shape
    he, we = (h // 2) * 2, (w // 2) * 2
    flat = np.zeros((n, c, he // 2, we // 2, 4), dtype=grad_out.dtype)
    np.put_along_axis(flat, idx[..., None], grad_out[..., None], axis=-1)
    grad_x = np.zeros(x_shape, dtype=grad_out.dtype)
    grad_x[:, :, :he, :we] = (flat
                              .reshape(n, c, he // 2, we // 2, 2, 2)
                              .transpose(0, 1, 2, 4, 3, 5)
                              .reshape(n, c, he, we))
    return grad_x


def extract_cached(stack: FeatureStack, x):
    """Run the stack, returning per-block taps and the backward cache."""
    if x.shape[1] != stack.input_channels:
        raise ShapeError("feature stack input channels",
                         expected=stack.input_channels, got=x.shape[1])
    mean = stack.mean.astype(x.dtype)[None, :, None, None]
    std = stack.std.astype(x.dtype)[None, :, None, None]
    cur = (x - mean) / std
    taps, cache = [], []
    for block in stack.blocks:
        conv_inputs, preacts = [], []
        for conv in block:
            conv_inputs.append(cur)
            pre = conv2d_forward(cur, conv)
            preacts.append(pre)
            cur = np.maximum(pre, 0.0)
        pooled, idx = _maxpool2x2(cur)
        cache.append((conv_inputs, preacts, cur.shape, idx))
        cur = pooled
        taps.append(cur)
    return taps, cache


def extract(stack: FeatureStack, x):
    """Per-block tap features for an input batch."""
    return extract_cached(stack, x)[0]


def extract_backward_cached(stack: FeatureStack, cache, tap_grads):
    """Accumulate tap gradients back to the stack input.

    tap_grads aligns with the taps from extract; a None entry contributes
    nothing for that block.
    """
    if len(tap_grads) != len(stack.blocks):
        raise ShapeError("one tap gradient per block",
                         expected=len(stack.blocks), got=len(tap_grads))
    grad_cur = None
    for block, (conv_inputs, preacts, act_shape, idx), tap_grad in zip(
            reversed(stack.blocks), reversed(cache), reversed(tap_grads)):
        if tap_grad is None and grad_cur is None:
            continue
        pooled_grad = grad_cur
        if tap_grad is not None:
            pooled_grad = tap_grad if pooled_grad is None else pooled_grad + tap_grad
        g = _maxpool2x2_backward(act_shape, idx, pooled_grad)
        for conv, conv_in, pre in zip(reversed(block), reversed(conv_inputs),
                                      reversed(preacts)):
            g = g * (pre > 0.0)
            g, _, _ = conv2d_backward(conv_in, conv, g)
        grad_cur = g
    if grad_cur is None:
        raise ShapeError("at least one tap gradient must be present",
                         expected=">=1", got=0)
    std = stack.std.astype(grad_cur.dtype)[None, :, None, None]
    return grad_cur / std


def extract_backward(stack: FeatureStack, x, tap_grads):
    """Input gradient for given per-tap gradients, recomputing the forward."""
    _, cache = extract_cached(stack, x)
    return extract_backward_cached(stack, cache, tap_grads)
