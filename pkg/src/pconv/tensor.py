"""Rank-4 tensor primitives with hand-derived backward passes.

All feature data lives in (batch, channel, height, width) numpy arrays.
Forward/backward pairs here are the building blocks for every layer in the
network; each pair is verified against central finite differences in the
test suite. Convolutions contract sliding windows with einsum, which keeps
a single fixed reduction path so repeated runs are byte-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DivergenceError, ShapeError


def tensor4(data, dtype=np.float64):
    """Validate external input as a finite (n, c, h, w) array."""
    arr = np.asarray(data, dtype=dtype)
    if arr.ndim != 4:
        raise ShapeError("tensor4 requires rank 4", expected=4, got=arr.ndim)
    if not np.all(np.isfinite(arr)):
        raise ContractError("tensor4 rejects NaN/Inf elements")
    return arr


def check_binary(mask):
    """Raise unless every element of *mask* is exactly 0 or 1."""
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise ContractError("mask must be strictly binary (0/1)")


@dataclass
class ConvParams:
    """Dense convolution parameters: weights (c_out, c_in, kh, kw)."""

    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ShapeError("conv weights must be rank 4",
                             expected=4, got=self.weights.ndim)
        kh, kw = self.weights.shape[2], self.weights.shape[3]
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"kernel dims must be odd, got {kh}x{kw}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError("bias length must equal c_out",
                             expected=(self.weights.shape[0],),
                             got=self.bias.shape)
        if self.stride < 1:
            raise ShapeError(f"stride must be positive, got {self.stride}")
        if self.padding < 0:
            raise ShapeError(f"padding must be >= 0, got {self.padding}")


def conv_out_hw(h, w, kh, kw, stride, padding):
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    return oh, ow


def _windows(xp, kh, kw, stride):
    """Strided view of all kernel windows: (n, c, oh, ow, kh, kw)."""
    view = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return view[:, :, ::stride, ::stride]


def conv2d_forward(x, params: ConvParams):
    """Standard zero-padded dense convolution."""
    w, stride, pad = params.weights, params.stride, params.padding
    c_out, c_in, kh, kw = w.shape
    n, c, h, ih = x.shape
    if c != c_in:
        raise ShapeError("input channels do not match conv weights",
                         expected=c_in, got=c)
    if h + 2 * pad < kh or ih + 2 * pad < kw:
        raise ShapeError(
            f"padded input {h + 2 * pad}x{ih + 2 * pad} smaller than kernel {kh}x{kw}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = _windows(xp, kh, kw, stride)
    out = np.einsum("nchwij,ocij->nohw", win, w, optimize=True)
    out += params.bias[None, :, None, None]
    return out


def conv2d_backward(x, params: ConvParams, grad_out):
    """Gradients of sum(grad_out * conv2d_forward(x)) w.r.t. x, weights, bias."""
    w, stride, pad = params.weights, params.stride, params.padding
    c_out, c_in, kh, kw = w.shape
    n, c, h, iw = x.shape
    oh, ow = conv_out_hw(h, iw, kh, kw, stride, pad)
    if grad_out.shape != (n, c_out, oh, ow):
        raise ShapeError("grad_out shape mismatch",
                         expected=(n, c_out, oh, ow), got=grad_out.shape)

    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = _windows(xp, kh, kw, stride)
    grad_w = np.einsum("nohw,nchwij->ocij", grad_out, win, optimize=True)
    grad_b = grad_out.sum(axis=(0, 2, 3))

    grad_xp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            contrib = np.einsum("nohw,oc->nchw", grad_out, w[:, :, i, j],
                                optimize=True)
            grad_xp[:, :, i:i + stride * oh:stride,
                    j:j + stride * ow:stride] += contrib
    if pad:
        grad_x = grad_xp[:, :, pad:-pad, pad:-pad]
    else:
        grad_x = grad_xp
    return grad_x, grad_w, grad_b


def nearest_upsample(x, factor):
    """Repeat every pixel into a factor x factor block."""
    if factor < 1:
        raise ShapeError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    return np.repeat(np.repeat(x, factor, axis=2), factor, axis=3)


def nearest_upsample_backward(grad_out, factor):
    """Sum gradients over each factor x factor block."""
    if factor == 1:
        return grad_out
    n, c, h, w = grad_out.shape
    blocks = grad_out.reshape(n, c, h // factor, factor, w // factor, factor)
    return blocks.sum(axis=(3, 5))


@dataclass
class BatchNormState:
    """Per-channel affine normalization with running statistics.

    frozen layers behave like eval mode and never change any state,
    regardless of the training flag.
    """

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.1
    frozen: bool = False

    @classmethod
    def fresh(cls, channels, dtype=np.float64, epsilon=1e-5, momentum=0.1):
        return cls(gamma=np.ones(channels, dtype=dtype),
                   beta=np.zeros(channels, dtype=dtype),
                   running_mean=np.zeros(channels, dtype=dtype),
                   running_var=np.ones(channels, dtype=dtype),
                   epsilon=epsilon, momentum=momentum)


def batchnorm_forward(x, state: BatchNormState, training):
    """Normalize per channel; returns (output, cache for the backward).

    training=True with an unfrozen state normalizes by batch statistics and
    updates the running ones; otherwise the stored running statistics are
    used and nothing changes.
    """
    n, c, h, w = x.shape
    if state.gamma.shape != (c,):
        raise ShapeError("batchnorm channel mismatch",
                         expected=state.gamma.shape, got=(c,))
    use_batch = training and not state.frozen
    if use_batch:
        if n * h * w < 2:
            raise ShapeError(
                f"batchnorm training needs >= 2 samples per channel, got {n * h * w}")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        m = state.momentum
        state.running_mean *= 1.0 - m
        state.running_mean += m * mean
        state.running_var *= 1.0 - m
        state.running_var += m * var
    else:
        mean = state.running_mean
        var = state.running_var
    inv_std = 1.0 / np.sqrt(var + state.epsilon)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = xhat * state.gamma[None, :, None, None] + state.beta[None, :, None, None]
    cache = (xhat, inv_std, state.gamma, use_batch)
    return out, cache


def batchnorm_backward(cache, grad_out):
    """Gradients w.r.t. input, gamma, beta from a forward cache."""
    xhat, inv_std, gamma, used_batch = cache
    n, c, h, w = grad_out.shape
    grad_beta = grad_out.sum(axis=(0, 2, 3))
    grad_gamma = (grad_out * xhat).sum(axis=(0, 2, 3))
    if used_batch:
        # means over (n, h, w) fold in the 1/m factors of the batch statistics
        g = grad_out * gamma[None, :, None, None]
        mean_g = g.mean(axis=(0, 2, 3))
        mean_gx = (g * xhat).mean(axis=(0, 2, 3))
        grad_x = inv_std[None, :, None, None] * (
            g - mean_g[None, :, None, None] - xhat * mean_gx[None, :, None, None])
    else:
        grad_x = grad_out * (gamma * inv_std)[None, :, None, None]
    return grad_x, grad_gamma, grad_beta


def activation(x, kind, slope=0.2):
    """Elementwise relu or leaky_relu."""
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "leaky_relu":
        return np.where(x < 0.0, slope * x, x)
    raise ShapeError(f"unknown activation kind {kind!r}")


def activation_backward(x, kind, grad_out, slope=0.2):
    if kind == "relu":
        return grad_out * (x > 0.0)
    if kind == "leaky_relu":
        return grad_out * np.where(x < 0.0, slope, 1.0)
    raise ShapeError(f"unknown activation kind {kind!r}")


def he_init(shape, fan_in, rng, dtype=np.float64):
    """Zero-mean normal draw with variance 2/fan_in."""
    if fan_in <= 0:
        raise ShapeError(f"fan_in must be positive, got {fan_in}")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    std = math.sqrt(2.0 / fan_in)
    return rng.normal(0.0, std, size=shape).astype(dtype, copy=False)


@dataclass
class AdamState:
    """First/second moment accumulators for one parameter tensor."""

    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    learning_rate: float = 0.001

    @classmethod
    def fresh(cls, param, learning_rate=0.001, beta1=0.9, beta2=0.999,
              epsilon=1e-8):
        return cls(m=np.zeros_like(param), v=np.zeros_like(param),
                   beta1=beta1, beta2=beta2, epsilon=epsilon,
                   learning_rate=learning_rate)


def adam_step(param, grad, state: AdamState):
    """Bias-corrected Adam update, applied in place; returns param."""
    if param.shape != grad.shape:
        raise ShapeError("adam param/grad shape mismatch",
                         expected=param.shape, got=grad.shape)
    if not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite gradient in adam_step")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grad
    state.v *= b2
    state.v += (1.0 - b2) * (grad * grad)
    m_hat = state.m / (1.0 - b1 ** t)
    v_hat = state.v / (1.0 - b2 ** t)
    param -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return param


def concat_channels(parts):
    return np.concatenate(parts, axis=1)


def split_channels(x, first_width):
    return x[:, :first_width], x[:, first_width:]
