"""Shared oracles and fixtures.

The oracles here are deliberately the dumbest possible implementations:
explicit loops over padded copies, no vectorization, no shared code with
the package. Everything the package computes cleverly gets compared
against code like this.
"""

import numpy as np
import pytest

from pconv.maskgen import BenchmarkSpec, build_benchmark
from pconv.pngio import write_image


def conv2d_oracle(x, weights, bias, stride, padding):
    """Six nested loops over an explicitly zero-padded input."""
    n, c_in, h, w = x.shape
    c_out, c_in_w, kh, kw = weights.shape
    assert c_in == c_in_w
    xp = np.zeros((n, c_in, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
    if h and w:
        xp[:, :, padding:padding + h, padding:padding + w] = x
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((n, c_out, oh, ow), dtype=x.dtype)
    for img in range(n):
        for o in range(c_out):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for c in range(c_in):
                        for u in range(kh):
                            for v in range(kw):
                                acc += (weights[o, c, u, v]
                                        * xp[img, c,
                                             i * stride + u,
                                             j * stride + v])
                    out[img, o, i, j] = acc + bias[o]
    return out


def numeric_grad(f, x, step=1e-6):
    """Plain central differences; perturbs x in place and restores it."""
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        fp = f()
        flat[i] = keep - step
        fm = f()
        flat[i] = keep
        grad[i] = (fp - fm) / (2.0 * step)
    return grad.reshape(x.shape)


def write_corpus(out_dir, count, size=64, seed=42):
    """Smooth procedural images: base color + steep linear ramps + one blob.

    Locally predictable (a window's gradient continues through it) but far
    from constant, so filling holes from surrounding context is learnable
    while a global mean fill is badly wrong away from the image center.
    Cheap enough to regenerate per session.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    for i in range(count):
        base = rng.uniform(0.35, 0.65, (3, 1, 1))
        span_y = rng.uniform(0.3, 0.8) * rng.choice([-1.0, 1.0])
        span_x = rng.uniform(0.3, 0.8) * rng.choice([-1.0, 1.0])
        ramp_y = np.linspace(-span_y / 2, span_y / 2, size).reshape(1, size, 1)
        ramp_x = np.linspace(-span_x / 2, span_x / 2, size).reshape(1, 1, size)
        blob = rng.uniform(-0.4, 0.4) * np.exp(
            -(((yy - rng.uniform(8, size - 8)) ** 2
               + (xx - rng.uniform(8, size - 8)) ** 2)
              / rng.uniform(40, 500)))
        image = np.clip(base + ramp_y + ramp_x + blob[None], 0.0, 1.0)
        write_image("%s/img_%03d.png" % (out_dir, i), image)


@pytest.fixture(scope="session")
def image_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus")
    write_corpus(str(path), 210)
    return str(path)


@pytest.fixture(scope="session")
def bench64(tmp_path_factory):
    path = tmp_path_factory.mktemp("bench64")
    spec = BenchmarkSpec(out_dir=str(path), per_cell=2, size=64, seed=11)
    build_benchmark(spec)
    return str(path)
