"""Reconstruction objective for hole filling.

Components, each normalized per image by the element count of the tensor it
compares and averaged over the batch:

  valid       L1 over known pixels
  hole        L1 over hole pixels
  perceptual  L1 between feature taps of the raw output and of the
              composited output against the target's taps
  style       L1 between channel autocorrelation (Gram) matrices of the
              same tap pairs, for the raw and composited outputs separately
  tv          total variation of the composited output, restricted to
              pixel pairs inside a one-pixel dilation of the hole region

The composited output pastes the raw output into the holes of the target:
comp = mask * target + (1 - mask) * out. All gradients are taken with
respect to the raw output, so every composited term contributes through the
(1 - mask) factor. The hole region always comes from the caller's original
mask, never from any updated mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .features import FeatureStack, extract_backward_cached, extract_cached


@dataclass(frozen=True)
class LossWeights:
    valid: float = 1.0
    hole: float = 6.0
    perceptual: float = 0.05
    style: float = 120.0
    tv: float = 0.1


@dataclass
class LossReport:
    """Unweighted component values plus the weighted total."""

    total: float
    valid: float
    hole: float
    perceptual: float
    style_out: float
    style_comp: float
    tv: float

    def as_line(self):
        return ",".join("%.6g" % v for v in (
            self.total, self.valid, self.hole, self.perceptual,
            self.style_out, self.style_comp, self.tv))


def composite(out, gt, mask):
    """Paste the prediction into the holes of the target."""
    return mask * gt + (1.0 - mask) * out


def _check_triplet(out, gt, mask):
    if out.shape != gt.shape or out.shape != mask.shape:
        raise ShapeError("out, gt and mask must share a shape",
                         expected=out.shape, got=(gt.shape, mask.shape))


def pixel_losses(out, gt, mask):
    """(hole, valid) L1 terms, each per-image normalized then batch averaged."""
    _check_triplet(out, gt, mask)
    n = out.shape[0]
    per_image = float(out[0].size)
    diff = np.abs(out - gt)
    hole = float((diff * (1.0 - mask)).sum() / (n * per_image))
    valid = float((diff * mask).sum() / (n * per_image))
    return hole, valid


def gram(feats):
    """Normalized channel autocorrelation.

    (c, h, w) gives (c, c); a batch (n, c, h, w) gives (n, c, c). The
    product is scaled by 1/(c*h*w).
    """
    feats = np.asarray(feats)
    if feats.ndim == 3:
        return gram(feats[None])[0]
    n, c, h, w = feats.shape
    flat = feats.reshape(n, c, h * w)
    return np.einsum("ncx,ndx->ncd", flat, flat, optimize=True) / (c * h * w)


def _gram_backward(feats, grad_gram):
    n, c, h, w = feats.shape
    flat = feats.reshape(n, c, h * w)
    sym = grad_gram + grad_gram.transpose(0, 2, 1)
    grad_flat = np.einsum("ncd,ndx->ncx", sym, flat, optimize=True) / (c * h * w)
    return grad_flat.reshape(n, c, h, w)


def _tap_l1(taps_a, taps_gt):
    n = taps_a[0].shape[0]
    total = 0.0
    for a, g in zip(taps_a, taps_gt):
        total += float(np.abs(a - g).sum() / (n * a[0].size))
    return total


def _tap_style(taps_a, taps_gt, channel_norm):
    n = taps_a[0].shape[0]
    total = 0.0
    for a, g in zip(taps_a, taps_gt):
        c = a.shape[1]
        factor = 1.0 / (c * c) if channel_norm else 1.0
        total += factor * float(np.abs(gram(a) - gram(g)).sum() / n)
    return total


def perceptual_loss(stack: FeatureStack, out, gt, mask):
    """Feature L1 of both the raw and the composited output against gt."""
    _check_triplet(out, gt, mask)
    taps_gt = extract_cached(stack, gt)[0]
    taps_out = extract_cached(stack, out)[0]
    taps_comp = extract_cached(stack, composite(out, gt, mask))[0]
    return _tap_l1(taps_out, taps_gt) + _tap_l1(taps_comp, taps_gt)


def style_losses(stack: FeatureStack, out, gt, mask, channel_norm=True):
    """(raw, composited) Gram L1 terms against gt.

    channel_norm additionally divides each tap's term by the square of its
    channel count, on top of the normalization inside gram.
    """
    _check_triplet(out, gt, mask)
    taps_gt = extract_cached(stack, gt)[0]
    taps_out = extract_cached(stack, out)[0]
    taps_comp = extract_cached(stack, composite(out, gt, mask))[0]
    return (_tap_style(taps_out, taps_gt, channel_norm),
            _tap_style(taps_comp, taps_gt, channel_norm))


def dilate_holes(mask, element="full"):
    """One-pixel dilation of the hole region (mask == 0).

    element "full" uses the 8-connected 3x3 neighborhood, "cross" the
    4-connected one. Returns a boolean array shaped like mask.
    """
    hole = mask < 0.5
    n, c, h, w = hole.shape
    padded = np.pad(hole, ((0, 0), (0, 0), (1, 1), (1, 1)))
    if element == "full":
        win = np.lib.stride_tricks.sliding_window_view(padded, (3, 3),
                                                       axis=(2, 3))
        return win.any(axis=(4, 5))
    if element == "cross":
        return (hole
                | padded[:, :, :h, 1:w + 1]
                | padded[:, :, 2:, 1:w + 1]
                | padded[:, :, 1:h + 1, :w]
                | padded[:, :, 1:h + 1, 2:])
    raise ShapeError("unknown dilation element",
                     expected="full or cross", got=element)


def _tv_value(comp, region):
    n = comp.shape[0]
    per_image = float(comp[0].size)
    both_h = (region[:, :, :, 1:] & region[:, :, :, :-1])
    both_v = (region[:, :, 1:, :] & region[:, :, :-1, :])
    dh = comp[:, :, :, 1:] - comp[:, :, :, :-1]
    dv = comp[:, :, 1:, :] - comp[:, :, :-1, :]
    total = (np.abs(dh) * both_h).sum() + (np.abs(dv) * both_v).sum()
    return float(total / (n * per_image))


def _tv_backward(comp, region):
    n = comp.shape[0]
    per_image = float(comp[0].size)
    grad = np.zeros_like(comp)
    sh = np.sign(comp[:, :, :, 1:] - comp[:, :, :, :-1]) * (
        region[:, :, :, 1:] & region[:, :, :, :-1])
    grad[:, :, :, 1:] += sh
    grad[:, :, :, :-1] -= sh
    sv = np.sign(comp[:, :, 1:, :] - comp[:, :, :-1, :]) * (
        region[:, :, 1:, :] & region[:, :, :-1, :])
    grad[:, :, 1:, :] += sv
    grad[:, :, :-1, :] -= sv
    return grad / (n * per_image)


def tv_loss(comp, mask, element="full"):
    """Total variation over pixel pairs inside the dilated hole region."""
    if comp.shape != mask.shape:
        raise ShapeError("comp and mask must share a shape",
                         expected=comp.shape, got=mask.shape)
    return _tv_value(comp, dilate_holes(mask, element=element))


def total_loss(out, gt, mask, stack: FeatureStack, weights=LossWeights(),
               tv_element="full", style_channel_norm=True, want_grad=True):
    """Full objective and its gradient with respect to out.

    Returns (LossReport, grad) where grad is None when want_grad is False.
    """
    _check_triplet(out, gt, mask)
    n = out.shape[0]
    per_image = float(out[0].size)
    comp = composite(out, gt, mask)

    hole, valid = pixel_losses(out, gt, mask)

    taps_out, cache_out = extract_cached(stack, out)
    taps_comp, cache_comp = extract_cached(stack, comp)
    taps_gt = extract_cached(stack, gt)[0]

    perceptual = _tap_l1(taps_out, taps_gt) + _tap_l1(taps_comp, taps_gt)
    s_out = _tap_style(taps_out, taps_gt, style_channel_norm)
    s_comp = _tap_style(taps_comp, taps_gt, style_channel_norm)

    region = dilate_holes(mask, element=tv_element)
    tv = _tv_value(comp, region)

    total = (weights.valid * valid + weights.hole * hole
             + weights.perceptual * perceptual
             + weights.style * (s_out + s_comp) + weights.tv * tv)
    report = LossReport(total, valid, hole, perceptual, s_out, s_comp, tv)
    if not want_grad:
        return report, None

    sign = np.sign(out - gt)
    grad = (weights.valid * mask + weights.hole * (1.0 - mask)) * sign / (
        n * per_image)

    grams_gt = [gram(t) for t in taps_gt]

    def tap_grads_for(taps_branch):
        tap_grads = []
        for t, t_gt, g_gt in zip(taps_branch, taps_gt, grams_gt):
            c = t.shape[1]
            tg = weights.perceptual * np.sign(t - t_gt) / (n * t[0].size)
            factor = 1.0 / (c * c) if style_channel_norm else 1.0
            dg = weights.style * factor * np.sign(gram(t) - g_gt) / n
            tap_grads.append(tg + _gram_backward(t, dg))
        return tap_grads

    grad += extract_backward_cached(stack, cache_out, tap_grads_for(taps_out))
    grad_comp = extract_backward_cached(stack, cache_comp,
                                        tap_grads_for(taps_comp))
    grad_comp += weights.tv * _tv_backward(comp, region)
    grad += (1.0 - mask) * grad_comp
    return report, grad
