"""Image quality metrics and benchmark-wide evaluation.

Per-image metrics expect arrays in [0, 1]. PSNR of identical images is
reported as infinity and only capped (at 99.0) when formatting text.
SSIM converts color images to grayscale by channel mean and averages the
local index over every fully interior 11x11 Gaussian window.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, UserInputError
from .losses import composite
from .maskgen import read_manifest
from .pngio import read_image, read_mask

PSNR_TEXT_CAP = 99.0


def l1_percent(out, gt, mask=None):
    """Mean absolute difference as a percentage.

    With a mask the average runs over hole elements only; without one it
    runs over every element.
    """
    out = np.asarray(out)
    gt = np.asarray(gt)
    if out.shape != gt.shape:
        raise ShapeError("images must share a shape",
                         expected=out.shape, got=gt.shape)
    diff = np.abs(out - gt)
    if mask is None:
        return 100.0 * float(diff.mean())
    if mask.shape != out.shape:
        raise ShapeError("mask must match image shape",
                         expected=out.shape, got=mask.shape)
    hole = mask < 0.5
    count = int(hole.sum())
    if count == 0:
        return 0.0
    return 100.0 * float(diff[hole].sum() / count)


def psnr(out, gt):
    """10*log10(1/MSE) for unit dynamic range; identical inputs give inf."""
    out = np.asarray(out, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if out.shape != gt.shape:
        raise ShapeError("images must share a shape",
                         expected=out.shape, got=gt.shape)
    mse = float(np.mean((out - gt) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * float(np.log10(1.0 / mse))


def format_psnr(value):
    return "%.4f" % min(value, PSNR_TEXT_CAP)


def _gaussian_kernel(size=11, sigma=1.5):
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _windowed_mean(img, kernel):
    """Separable valid-mode correlation with a 1-D kernel on both axes."""
    k = len(kernel)
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=1) @ kernel
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=0) @ kernel


def ssim(out, gt, window=11, sigma=1.5, k1=0.01, k2=0.03):
    """Mean structural similarity over valid windows, dynamic range 1."""
    out = np.asarray(out, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if out.shape != gt.shape:
        raise ShapeError("images must share a shape",
                         expected=out.shape, got=gt.shape)
    if out.ndim == 3:
        out = out.mean(axis=0)
        gt = gt.mean(axis=0)
    if out.ndim != 2:
        raise ShapeError("expected a 2-D or (c, h, w) image",
                         expected="2 or 3 dims", got=out.ndim)
    h, w = out.shape
    if h < window or w < window:
        raise ShapeError("image smaller than the comparison window",
                         expected="at least %dx%d" % (window, window),
                         got=(h, w))
    kern = _gaussian_kernel(window, sigma)
    mu1 = _windowed_mean(out, kern)
    mu2 = _windowed_mean(gt, kern)
    s11 = _windowed_mean(out * out, kern) - mu1 * mu1
    s22 = _windowed_mean(gt * gt, kern) - mu2 * mu2
    s12 = _windowed_mean(out * gt, kern) - mu1 * mu2
    c1 = (k1 * 1.0) ** 2
    c2 = (k2 * 1.0) ** 2
    num = (2.0 * mu1 * mu2 + c1) * (2.0 * s12 + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
    return float((num / den).mean())


def mean_fill(image, mask):
    """Fill holes with the per-channel mean of the valid pixels."""
    image = np.asarray(image)
    mask = np.asarray(mask)
    filled = image.copy()
    for c in range(image.shape[0]):
        valid = mask[c] > 0.5
        level = float(image[c][valid].mean()) if valid.any() else 0.5
        filled[c][~valid] = level
    return filled


@dataclass
class MetricReport:
    """Per-cell metric means; cells keyed by (ratio_bin, border)."""

    cells: dict = field(default_factory=dict)
    skipped: int = 0

    def add(self, ratio_bin, border, values):
        cell = self.cells.setdefault((ratio_bin, border),
                                     {"l1": 0.0, "psnr": 0.0, "ssim": 0.0,
                                      "count": 0})
        for key in ("l1", "psnr", "ssim"):
            cell[key] += values[key]
        cell["count"] += 1

    def mean(self, ratio_bin, border, metric):
        cell = self.cells.get((ratio_bin, border))
        if not cell or cell["count"] == 0:
            return float("nan")
        return cell[metric] / cell["count"]

    def count(self, ratio_bin, border):
        cell = self.cells.get((ratio_bin, border))
        return cell["count"] if cell else 0

    def total_count(self):
        return sum(c["count"] for c in self.cells.values())

    def to_csv(self):
        lines = ["cell,metric,mean,count"]
        for ratio_bin in range(1, 7):
            for border in (False, True):
                name = "bin%d_%s" % (ratio_bin,
                                     "border" if border else "noborder")
                for metric in ("l1", "psnr", "ssim"):
                    lines.append("%s,%s,%.6f,%d" % (
                        name, metric, self.mean(ratio_bin, border, metric),
                        self.count(ratio_bin, border)))
        return "\n".join(lines) + "\n"

    def to_text(self):
        headers = ["metric"] + ["N%d" % b for b in range(1, 7)] \
            + ["B%d" % b for b in range(1, 7)]
        rows = []
        for metric in ("l1", "psnr", "ssim"):
            row = [metric]
            for border in (False, True):
                for ratio_bin in range(1, 7):
                    v = self.mean(ratio_bin, border, metric)
                    if metric == "psnr" and np.isfinite(v):
                        v = min(v, PSNR_TEXT_CAP)
                    elif metric == "psnr":
                        v = PSNR_TEXT_CAP
                    row.append("%.4f" % v)
            rows.append(row)
        widths = [max(len(r[i]) for r in [headers] + rows)
                  for i in range(len(headers))]
        fmt = "  ".join("%%-%ds" % w for w in widths)
        out = [fmt % tuple(headers)]
        out.extend(fmt % tuple(r) for r in rows)
        return "\n".join(out) + "\n"


def _image_files(image_dir):
    try:
        names = sorted(os.listdir(image_dir))
    except OSError as exc:
        raise UserInputError("cannot list image dir %s: %s" % (image_dir, exc))
    files = [os.path.join(image_dir, n) for n in names
             if n.lower().endswith(".png")]
    if not files:
        raise UserInputError("no .png images in %s" % image_dir)
    return files


def assign_images(count, image_files, seed):
    """Deterministic mask-to-image pairing.

    Images are consumed in shuffled order without replacement, reshuffling
    whenever the pool runs out, so any image excess or shortfall still
    yields a reproducible assignment.
    """
    rng = np.random.default_rng(seed)
    assignment = []
    pool = []
    while len(assignment) < count:
        if not pool:
            pool = list(rng.permutation(len(image_files)))
        assignment.append(image_files[pool.pop()])
    return assignment


def evaluate_benchmark(net, image_dir, bench_dir, seed, l1_region="full",
                       composited=True):
    """Run the net over every benchmark mask and aggregate per cell."""
    entries = read_manifest(bench_dir)
    files = _image_files(image_dir)
    assignment = assign_images(len(entries), files, seed)
    report = MetricReport()
    for entry, image_path in zip(entries, assignment):
        try:
            image = read_image(image_path, dtype=np.float32)
            mask2d = read_mask(os.path.join(bench_dir, entry.path))
            if mask2d.shape != image.shape[1:]:
                raise UserInputError(
                    "mask %s size %r does not match image %s size %r"
                    % (entry.path, mask2d.shape, image_path, image.shape[1:]))
            mask = np.broadcast_to(
                mask2d.astype(np.float32),
                (1,) + image.shape).copy()
            batch = image[None]
            out = net.forward(batch, mask, training=False)
            result = composite(out, batch, mask)[0] if composited else out[0]
            result = np.clip(result, 0.0, 1.0)
            values = {
                "l1": l1_percent(result, image,
                                 mask[0] if l1_region == "hole" else None),
                "psnr": psnr(result, image),
                "ssim": ssim(result, image),
            }
        except (UserInputError, ShapeError):
            report.skipped += 1
            continue
        report.add(entry.ratio_bin, entry.border, values)
    return report
