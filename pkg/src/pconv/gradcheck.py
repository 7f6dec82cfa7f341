"""Central finite-difference verification of every hand-written backward.

Each suite builds a scalar objective (a fixed random projection of the
primitive's output, or a loss value), computes the analytic gradient via
the backward pass reached through that primitive, and compares against
central differences in double precision. The comparison is the maximum
absolute deviation scaled by the larger gradient magnitude.

The objectives that contain absolute values, ReLUs, or max pooling are
piecewise linear; a finite difference is only meaningful when both
evaluation points stay on one piece. Suites that touch those operations
measure how far the sampled point sits from the nearest boundary (smallest
activation magnitude, pool runner-up gap, or nonzero difference feeding an
absolute value) and shrink the step so the perturbation cannot cross it,
resampling the rare draw that lands essentially on a boundary.

Suites are deterministic in the seed. The `corrupt` hook perturbs one
suite's analytic gradient so failure reporting can be exercised.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError
from .features import FeatureStack, extract, extract_backward_cached, extract_cached
from .losses import LossWeights, composite, dilate_holes, gram, total_loss
from .network import Network, scaled_config
from .partial_conv import (MaskedTensor, PartialConvLayer, partial_conv_backward,
                           partial_conv_forward)
from .tensor import (BatchNormState, ConvParams, activation, activation_backward,
                     batchnorm_backward, batchnorm_forward, conv2d_backward,
                     conv2d_forward, nearest_upsample, nearest_upsample_backward)

DEFAULT_STEP = 1e-4
TOLERANCE = 1e-4
NETWORK_TOLERANCE = 1e-3

# A margin is safe when it exceeds the step times the largest sensitivity a
# single perturbed coordinate can have on the margin quantity; the safety
# divisors overshoot the sensitivities seen in these small stacks by well
# over an order of magnitude.
KINK_SAFETY = 50.0
NETWORK_KINK_SAFETY = 100.0
MIN_MARGIN = 5e-6
MIN_STEP = 1e-7
RESAMPLE_ATTEMPTS = 32


@dataclass(frozen=True)
class SuiteResult:
    name: str
    rel_err: float
    tolerance: float

    @property
    def passed(self):
        return self.rel_err < self.tolerance

    def line(self):
        return "%-16s %-4s rel_err=%.3e (tolerance %.0e)" % (
            self.name, "ok" if self.passed else "FAIL",
            self.rel_err, self.tolerance)


def central_difference(f, x, step=DEFAULT_STEP, indices=None):
    """Numeric gradient of the scalar f() with respect to the array x.

    f must read x by reference; entries are perturbed in place. With
    indices only those flat positions are evaluated; the rest stay 0.
    """
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    idxs = range(flat.size) if indices is None else indices
    for i in idxs:
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        grad[i] = (fp - fm) / (2.0 * step)
    return grad.reshape(x.shape)


def relative_error(analytic, numeric, indices=None):
    a = np.asarray(analytic).reshape(-1)
    n = np.asarray(numeric).reshape(-1)
    if indices is not None:
        a = a[list(indices)]
        n = n[list(indices)]
    scale = max(float(np.abs(a).max(initial=0.0)),
                float(np.abs(n).max(initial=0.0)), 1e-8)
    return float(np.abs(a - n).max(initial=0.0)) / scale


def _projection(rng, shape):
    return rng.uniform(-1.0, 1.0, size=shape)


def _nonzero_min(values):
    """Smallest nonzero magnitude, or inf when everything is exactly zero.

    Exact zeros sit on stable pieces here (clipped activations, regions the
    perturbation cannot reach), so they are not boundary distances.
    """
    mags = np.abs(np.asarray(values).reshape(-1))
    mags = mags[mags > 0.0]
    return float(mags.min()) if mags.size else np.inf


def _stack_margins(stack, x):
    """Distance from the extractor's piecewise-linear boundaries at x.

    Considers every conv preactivation magnitude and, within each pool
    window, the gap between the maximum and a positive runner-up. Windows
    whose runner-up is exactly zero are stable: clipped entries stay
    clipped for any in-margin perturbation of the preactivations.
    """
    margin = np.inf
    h = (x - stack.mean[None, :, None, None]) / stack.std[None, :, None, None]
    for block in stack.blocks:
        for params in block:
            pre = conv2d_forward(h, params)
            margin = min(margin, _nonzero_min(pre))
            h = activation(pre, "relu")
        n, c, hh, ww = h.shape
        he, we = (hh // 2) * 2, (ww // 2) * 2
        win = (h[:, :, :he, :we]
               .reshape(n, c, he // 2, 2, we // 2, 2)
               .transpose(0, 1, 2, 4, 3, 5)
               .reshape(n, c, he // 2, we // 2, 4))
        top2 = np.sort(win, axis=-1)[..., -2:]
        gaps = top2[..., 1] - top2[..., 0]
        contested = top2[..., 0] > 0.0
        if contested.any():
            margin = min(margin, _nonzero_min(gaps[contested]))
        h = top2[..., 1]
    return margin


def _tv_pair_margin(comp, mask, element):
    """Smallest moving difference the total-variation term takes an
    absolute value of: pairs inside the dilated-hole region with at least
    one hole endpoint (valid/valid pairs are constants of the output)."""
    region = dilate_holes(mask, element=element)
    hole = mask == 0.0
    margin = np.inf
    for axis in (2, 3):
        a = [slice(None)] * 4
        b = [slice(None)] * 4
        a[axis] = slice(None, -1)
        b[axis] = slice(1, None)
        a, b = tuple(a), tuple(b)
        in_pair = region[a] & region[b] & (hole[a] | hole[b])
        if in_pair.any():
            margin = min(margin, _nonzero_min((comp[b] - comp[a])[in_pair]))
    return margin


def _loss_margin(stack, out, gt, mask, weights,
                 tv_element="full", style_channel_norm=True):
    """Distance from every absolute-value and extractor boundary the loss
    surface has around this sample, restricted to terms with nonzero
    weight."""
    comp = composite(out, gt, mask)
    margin = np.inf
    if weights.valid or weights.hole:
        margin = min(margin, _nonzero_min(out - gt))
    if weights.perceptual or weights.style:
        taps_gt = extract(stack, gt)
        for branch in (out, comp):
            margin = min(margin, _stack_margins(stack, branch))
            taps = extract(stack, branch)
            for t, t_gt in zip(taps, taps_gt):
                if weights.perceptual:
                    margin = min(margin, _nonzero_min(t - t_gt))
                if weights.style:
                    margin = min(margin, _nonzero_min(gram(t) - gram(t_gt)))
    if weights.tv:
        margin = min(margin, _tv_pair_margin(comp, mask, tv_element))
    return margin


def _margin_step(margin, safety=KINK_SAFETY):
    """Largest step guaranteed not to cross a boundary `margin` away."""
    if not np.isfinite(margin):
        return DEFAULT_STEP
    return float(min(DEFAULT_STEP, max(margin / safety, MIN_STEP)))


def _suite_conv2d(rng, small):
    x = rng.uniform(-1.0, 1.0, (2, 3, 6, 6) if small else (2, 3, 10, 10))
    params = ConvParams(rng.uniform(-1.0, 1.0, (4, 3, 3, 3)),
                        rng.uniform(-0.5, 0.5, 4), stride=2, padding=1)
    proj = _projection(rng, conv2d_forward(x, params).shape)

    def f():
        return float((conv2d_forward(x, params) * proj).sum())

    grad_x, grad_w, grad_b = conv2d_backward(x, params, proj)
    errs = [relative_error(grad_x, central_difference(f, x)),
            relative_error(grad_w, central_difference(f, params.weights)),
            relative_error(grad_b, central_difference(f, params.bias))]
    return max(errs)


def _suite_partial_conv(rng, small):
    shape = (2, 3, 6, 6) if small else (2, 3, 10, 10)
    x = rng.uniform(-1.0, 1.0, shape)
    mask = (rng.uniform(size=shape) > 0.4).astype(np.float64)
    layer = PartialConvLayer(ConvParams(rng.uniform(-1.0, 1.0, (4, 3, 3, 3)),
                                        rng.uniform(-0.5, 0.5, 4),
                                        stride=2, padding=1))
    mt = MaskedTensor(x, mask)
    proj = _projection(rng, partial_conv_forward(mt, layer).features.shape)

    def f():
        return float((partial_conv_forward(mt, layer).features * proj).sum())

    grad_x, grad_w, grad_b = partial_conv_backward(mt, layer, proj)
    errs = [relative_error(grad_x, central_difference(f, x)),
            relative_error(grad_w, central_difference(f, layer.params.weights)),
            relative_error(grad_b, central_difference(f, layer.params.bias))]
    return max(errs)


def _suite_upsample(rng, small):
    x = rng.uniform(-1.0, 1.0, (2, 3, 4, 4))
    proj = _projection(rng, (2, 3, 8, 8))

    def f():
        return float((nearest_upsample(x, 2) * proj).sum())

    grad_x = nearest_upsample_backward(proj, 2)
    return relative_error(grad_x, central_difference(f, x))


def _suite_batchnorm(rng, small):
    x = rng.uniform(-1.0, 1.0, (3, 4, 5, 5))
    state = BatchNormState.fresh(4)
    state.gamma[:] = rng.uniform(0.5, 1.5, 4)
    state.beta[:] = rng.uniform(-0.5, 0.5, 4)
    proj = _projection(rng, x.shape)

    def f():
        out, _ = batchnorm_forward(x, state, training=True)
        return float((out * proj).sum())

    _, cache = batchnorm_forward(x, state, training=True)
    grad_x, grad_gamma, grad_beta = batchnorm_backward(cache, proj)
    errs = [relative_error(grad_x, central_difference(f, x)),
            relative_error(grad_gamma, central_difference(f, state.gamma)),
            relative_error(grad_beta, central_difference(f, state.beta))]
    return max(errs)


def _activation_suite(kind):
    def suite(rng, small):
        x = rng.uniform(0.1, 1.0, (2, 3, 6, 6))
        x *= np.where(rng.uniform(size=x.shape) > 0.5, 1.0, -1.0)
        proj = _projection(rng, x.shape)

        def f():
            return float((activation(x, kind) * proj).sum())

        grad_x = activation_backward(x, kind, proj)
        return relative_error(grad_x, central_difference(f, x))
    return suite


def _small_stack(rng):
    return FeatureStack.random(int(rng.integers(2 ** 31)),
                               widths=((4,), (5,), (6,)), in_channels=3)


def _suite_extractor(rng, small):
    stack = _small_stack(rng)
    for _ in range(RESAMPLE_ATTEMPTS):
        x = rng.uniform(0.0, 1.0, (1, 3, 16, 16))
        margin = _stack_margins(stack, x)
        if margin >= MIN_MARGIN:
            break
    else:
        raise ContractError("extractor suite found no boundary-free sample")
    taps, cache = extract_cached(stack, x)
    projs = [_projection(rng, t.shape) for t in taps]

    def f():
        return float(sum((t * p).sum()
                         for t, p in zip(extract_cached(stack, x)[0], projs)))

    grad_x = extract_backward_cached(stack, cache, projs)
    return relative_error(grad_x,
                          central_difference(f, x, step=_margin_step(margin)))


def _loss_suite(weight_field):
    if weight_field == "total":
        weights = LossWeights()
    else:
        zeros = {k: 0.0 for k in
                 ("valid", "hole", "perceptual", "style", "tv")}
        zeros[weight_field] = 1.0
        weights = LossWeights(**zeros)

    def suite(rng, small):
        stack = _small_stack(rng)
        shape = (2, 3, 16, 16)
        for _ in range(RESAMPLE_ATTEMPTS):
            gt = rng.uniform(0.1, 0.9, shape)
            offset = rng.uniform(0.05, 0.3, shape)
            out = gt + np.where(rng.uniform(size=shape) > 0.5,
                                1.0, -1.0) * offset
            mask2 = (rng.uniform(size=shape[2:]) > 0.4).astype(np.float64)
            mask = np.broadcast_to(mask2, shape).copy()
            margin = _loss_margin(stack, out, gt, mask, weights)
            if margin >= MIN_MARGIN:
                break
        else:
            raise ContractError("loss suite %r found no boundary-free sample"
                                % weight_field)

        def f():
            report, _ = total_loss(out, gt, mask, stack, weights=weights,
                                   want_grad=False)
            return report.total

        _, grad = total_loss(out, gt, mask, stack, weights=weights)
        return relative_error(
            grad, central_difference(f, out, step=_margin_step(margin)))
    return suite


def _network_margin(net, stack, images, gt, mask, weights):
    """Boundary distance of the whole loss(net(params)) surface: network
    activation inputs plus every loss-side margin around the produced
    output."""
    out, cache = net.forward(images, mask, training=True, want_cache=True)
    margin = np.inf
    for entry in cache:
        if entry["block"].spec.act is not None:
            margin = min(margin, _nonzero_min(entry["act_in"]))
    return min(margin, _loss_margin(stack, out, gt, mask, weights))


def _suite_network(rng, small):
    config = scaled_config(2, 3)
    stack = _small_stack(rng)
    shape = (2, 3, 8, 8)
    weights = LossWeights()
    for _ in range(RESAMPLE_ATTEMPTS):
        net = Network(config, seed=int(rng.integers(2 ** 31)),
                      dtype=np.float64)
        gt = rng.uniform(0.1, 0.9, shape)
        images = gt.copy()
        mask2 = (rng.uniform(size=shape[2:]) > 0.4).astype(np.float64)
        mask = np.broadcast_to(mask2, shape).copy()
        margin = _network_margin(net, stack, images, gt, mask, weights)
        if margin >= MIN_MARGIN:
            break
    else:
        raise ContractError("network suite found no boundary-free sample")

    def f():
        out = net.forward(images, mask, training=True)
        report, _ = total_loss(out, gt, mask, stack, want_grad=False)
        return report.total

    out, cache = net.forward(images, mask, training=True, want_cache=True)
    _, grad_out = total_loss(out, gt, mask, stack)
    grads = net.backward(cache, grad_out)

    # One comparison over the whole parameter vector. Per-tensor scaling
    # would demand the impossible from tensors whose true gradient is
    # identically zero (any bias feeding a batch norm): there the analytic
    # side is rounding dust and the numeric side is pure difference-quotient
    # noise, and neither says anything about the backward pass.
    step = _margin_step(margin, safety=NETWORK_KINK_SAFETY)
    sample_rng = np.random.default_rng(int(rng.integers(2 ** 31)))
    diff = 0.0
    scale = 1e-8
    for name, param in net.trainable_parameters():
        size = param.size
        count = min(size, 24)
        indices = sorted(sample_rng.choice(size, size=count, replace=False))
        numeric = central_difference(f, param, step=step, indices=indices)
        a = grads[name].reshape(-1)[indices]
        n = numeric.reshape(-1)[indices]
        diff = max(diff, float(np.abs(a - n).max(initial=0.0)))
        scale = max(scale, float(np.abs(a).max(initial=0.0)),
                    float(np.abs(n).max(initial=0.0)))
    return diff / scale


_SUITES = [
    ("conv2d", _suite_conv2d, TOLERANCE),
    ("partial_conv", _suite_partial_conv, TOLERANCE),
    ("nearest_upsample", _suite_upsample, TOLERANCE),
    ("batchnorm", _suite_batchnorm, TOLERANCE),
    ("relu", _activation_suite("relu"), TOLERANCE),
    ("leaky_relu", _activation_suite("leaky_relu"), TOLERANCE),
    ("extractor", _suite_extractor, TOLERANCE),
    ("loss_valid", _loss_suite("valid"), TOLERANCE),
    ("loss_hole", _loss_suite("hole"), TOLERANCE),
    ("loss_perceptual", _loss_suite("perceptual"), TOLERANCE),
    ("loss_style", _loss_suite("style"), TOLERANCE),
    ("loss_tv", _loss_suite("tv"), TOLERANCE),
    ("loss_total", _loss_suite("total"), TOLERANCE),
    ("network", _suite_network, NETWORK_TOLERANCE),
]


def suite_names():
    return [name for name, _, _ in _SUITES]


def run_all(seed=0, sizes="default", corrupt=None):
    """Every suite once, in a fixed order; returns SuiteResult per suite."""
    if sizes not in ("default", "small"):
        raise ConfigError("sizes must be 'default' or 'small', got %r" % (sizes,))
    small = sizes == "small"
    results = []
    for name, suite, tolerance in _SUITES:
        rng = np.random.default_rng(np.random.SeedSequence([seed, len(results)]))
        err = suite(rng, small)
        if corrupt == name:
            err += 1.0
        results.append(SuiteResult(name, err, tolerance))
    return results
