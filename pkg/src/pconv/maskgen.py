"""Irregular hole synthesis and the categorized mask benchmark.

Masks are 2-D binary grids, 1 = valid and 0 = hole. Raw masks are unions of
thick random-walk streaks, ellipses and polygons drawn until a sampled
target hole ratio is reached. Augmentation applies random dilation,
rotation and cropping. The benchmark bins masks by hole-to-image ratio into
six intervals, split by whether any hole pixel comes close to the image
border, and fills every (bin, border) cell by rejection sampling.

Determinism: each benchmark slot draws from a generator seeded with
(master seed, cell, index), so regeneration and parallel generation agree.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw

from .errors import GenerationExhaustedError, UserInputError
from .pngio import write_mask

RATIO_BINS = ((0.01, 0.1), (0.1, 0.2), (0.2, 0.3),
              (0.3, 0.4), (0.4, 0.5), (0.5, 0.6))


def border_margin(size):
    """Border-zone width in pixels, 50 at size 512, scaled half-up."""
    return max(1, (50 * size + 256) // 512)


def _draw_streak(draw, size, rng):
    x = float(rng.uniform(0, size))
    y = float(rng.uniform(0, size))
    thickness = max(1, int(round(float(rng.uniform(3, 30)) * size / 512)))
    segments = int(rng.integers(2, 7))
    angle = float(rng.uniform(0, 2 * np.pi))
    for _ in range(segments):
        angle += float(rng.uniform(-1.0, 1.0))
        step = float(rng.uniform(size / 16, size / 4))
        nx = x + step * np.cos(angle)
        ny = y + step * np.sin(angle)
        draw.line((x, y, nx, ny), fill=255, width=thickness)
        r = thickness / 2.0
        draw.ellipse((nx - r, ny - r, nx + r, ny + r), fill=255)
        x, y = nx, ny


def _draw_ellipse(draw, size, rng):
    cx = float(rng.uniform(0, size))
    cy = float(rng.uniform(0, size))
    rx = float(rng.uniform(size / 32, size / 10))
    ry = float(rng.uniform(size / 32, size / 10))
    draw.ellipse((cx - rx, cy - ry, cx + rx, cy + ry), fill=255)


def _draw_polygon(draw, size, rng):
    cx = float(rng.uniform(0, size))
    cy = float(rng.uniform(0, size))
    count = int(rng.integers(3, 8))
    angles = np.sort(rng.uniform(0, 2 * np.pi, count))
    radii = rng.uniform(size / 32, size / 8, count)
    points = [(float(cx + r * np.cos(a)), float(cy + r * np.sin(a)))
              for a, r in zip(angles, radii)]
    draw.polygon(points, fill=255)


def synth_raw_mask(size, seed):
    """Random irregular mask with hole ratio in roughly (0.02, 0.55]."""
    if size < 32:
        raise UserInputError("mask size must be at least 32, got %d" % size)
    rng = np.random.default_rng(seed)
    target = float(rng.uniform(0.02, 0.5))
    canvas = Image.new("L", (size, size), 0)
    draw = ImageDraw.Draw(canvas)
    for _ in range(60):
        kind = rng.uniform()
        if kind < 0.55:
            _draw_streak(draw, size, rng)
        elif kind < 0.8:
            _draw_ellipse(draw, size, rng)
        else:
            _draw_polygon(draw, size, rng)
        if np.asarray(canvas).astype(bool).mean() >= target:
            break
    hole = np.asarray(canvas).astype(bool)
    if hole.mean() <= 0.01:
        _draw_ellipse(draw, size, rng)
        hole = np.asarray(canvas).astype(bool)
    return (~hole).astype(np.float64)


def dilate(mask, iterations=1):
    """Grow the hole region by a 3x3 neighborhood, iterated."""
    hole = np.asarray(mask) < 0.5
    for _ in range(iterations):
        padded = np.pad(hole, 1)
        win = np.lib.stride_tricks.sliding_window_view(padded, (3, 3))
        hole = win.any(axis=(2, 3))
    return (~hole).astype(np.float64)


def rotate_nearest(mask, degrees):
    """Rotate about the grid center, nearest neighbor, fill = valid."""
    hole = np.asarray(mask) < 0.5
    h, w = hole.shape
    theta = np.deg2rad(degrees)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w]
    dx = xx - cx
    dy = yy - cy
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    sx = np.rint(cos_t * dx + sin_t * dy + cx).astype(np.int64)
    sy = np.rint(-sin_t * dx + cos_t * dy + cy).astype(np.int64)
    inside = (sx >= 0) & (sx < w) & (sy >= 0) & (sy < h)
    out = np.zeros_like(hole)
    out[inside] = hole[sy[inside], sx[inside]]
    return (~out).astype(np.float64)


def crop_pad(mask, pad, dy, dx):
    """Pad by `pad` valid pixels, crop back at (dy, dx); center = identity."""
    size_y, size_x = mask.shape
    hole = np.pad(np.asarray(mask) < 0.5, pad)
    hole = hole[dy:dy + size_y, dx:dx + size_x]
    return (~hole).astype(np.float64)


def augment_with(mask, iters, angle, pad, dy, dx):
    """Dilation, rotation, crop with explicit parameters."""
    out = dilate(mask, iters) if iters else np.asarray(mask, dtype=np.float64)
    out = rotate_nearest(out, angle)
    return crop_pad(out, pad, dy, dx)


def augment(mask, seed, dilation_range=(0, 9)):
    """Random dilation, rotation and crop; all-zero parameters = identity."""
    rng = np.random.default_rng(seed)
    mask = np.asarray(mask)
    size = mask.shape[0]
    iters = int(rng.integers(dilation_range[0], dilation_range[1] + 1))
    angle = float(rng.uniform(0.0, 360.0))
    pad = max(size // 8, 1)
    dy = int(rng.integers(0, 2 * pad + 1))
    dx = int(rng.integers(0, 2 * pad + 1))
    return augment_with(mask, iters, angle, pad, dy, dx)


def categorize(mask, margin):
    """(ratio bin 1..6 or None, hole-touches-border flag)."""
    hole = np.asarray(mask) < 0.5
    ratio = float(hole.mean())
    ratio_bin = None
    for i, (lo, hi) in enumerate(RATIO_BINS):
        if lo < ratio <= hi:
            ratio_bin = i + 1
            break
    touches = bool(margin > 0 and (hole[:margin, :].any()
                                   or hole[-margin:, :].any()
                                   or hole[:, :margin].any()
                                   or hole[:, -margin:].any()))
    return ratio_bin, touches


@dataclass(frozen=True)
class BenchmarkSpec:
    out_dir: str
    per_cell: int
    size: int = 512
    seed: int = 0
    margin: int | None = None
    dilation_range: tuple = (0, 9)
    max_attempts: int = 4000

    @property
    def effective_margin(self):
        return border_margin(self.size) if self.margin is None else self.margin


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    ratio: float
    ratio_bin: int
    border: bool
    seed: str


_CELLS = [(b, border) for b in range(1, 7) for border in (False, True)]


def _cell_name(ratio_bin, border):
    return "bin%d_%s" % (ratio_bin, "border" if border else "noborder")


def _generate_slot(spec: BenchmarkSpec, ratio_bin, border, index):
    cell_id = (ratio_bin - 1) * 2 + (1 if border else 0)
    rng = np.random.default_rng(
        np.random.SeedSequence([spec.seed, cell_id, index]))
    margin = spec.effective_margin
    for _ in range(spec.max_attempts):
        mask = synth_raw_mask(spec.size, rng)
        mask = augment(mask, rng, spec.dilation_range)
        if not border:
            hole = mask < 0.5
            hole[:margin, :] = False
            hole[-margin:, :] = False
            hole[:, :margin] = False
            hole[:, -margin:] = False
            mask = (~hole).astype(np.float64)
        got_bin, got_border = categorize(mask, margin)
        if got_bin == ratio_bin and got_border == border:
            seed_str = "%d:%d:%d" % (spec.seed, cell_id, index)
            return mask, seed_str
    raise GenerationExhaustedError(
        "could not fill cell %s (index %d) within %d attempts"
        % (_cell_name(ratio_bin, border), index, spec.max_attempts))


def build_benchmark(spec: BenchmarkSpec):
    """Generate every cell, write PNGs and manifest, return the entries."""
    if spec.per_cell < 1:
        raise UserInputError("per_cell must be positive, got %d" % spec.per_cell)
    os.makedirs(spec.out_dir, exist_ok=True)
    entries = []
    for ratio_bin, border in _CELLS:
        for index in range(spec.per_cell):
            mask, seed_str = _generate_slot(spec, ratio_bin, border, index)
            name = "%s_%04d.png" % (_cell_name(ratio_bin, border), index)
            write_mask(os.path.join(spec.out_dir, name), mask)
            ratio = float((mask < 0.5).mean())
            entries.append(ManifestEntry(name, ratio, ratio_bin, border,
                                         seed_str))
    lines = ["%s %.6f %d %d %s" % (e.path, e.ratio, e.ratio_bin,
                                   int(e.border), e.seed)
             for e in entries]
    with open(os.path.join(spec.out_dir, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return entries


def read_manifest(bench_dir):
    """Parse manifest.txt back into entries."""
    path = os.path.join(bench_dir, "manifest.txt")
    try:
        with open(path) as fh:
            raw = fh.read()
    except OSError as exc:
        raise UserInputError("cannot read manifest %s: %s" % (path, exc))
    entries = []
    for ln, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 5:
            raise UserInputError("manifest %s line %d: expected 5 fields, "
                                 "got %d" % (path, ln, len(parts)))
        try:
            entries.append(ManifestEntry(parts[0], float(parts[1]),
                                         int(parts[2]), bool(int(parts[3])),
                                         parts[4]))
        except ValueError as exc:
            raise UserInputError("manifest %s line %d: %s" % (path, ln, exc))
    if not entries:
        raise UserInputError("manifest %s is empty" % path)
    return entries
