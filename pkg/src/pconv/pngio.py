"""PNG reading and writing for images and masks.

Images travel as channel-first float arrays in [0, 1], three channels.
Masks travel as 2-D binary arrays in the 1 = valid, 0 = hole convention;
on disk a mask is 8-bit grayscale with 0 = hole and 255 = valid, and any
other pixel value is rejected rather than silently thresholded.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from .errors import UserInputError


def read_image(path, dtype=np.float32):
    """(3, h, w) array in [0, 1] from any PNG PIL can convert to RGB."""
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=dtype)
    except (OSError, ValueError) as exc:
        raise UserInputError("cannot read image %s: %s" % (path, exc))
    return arr.transpose(2, 0, 1) / 255.0


def write_image(path, array):
    """Write a (3, h, w) [0, 1] array as 8-bit RGB, clamping out-of-range."""
    if array.ndim != 3 or array.shape[0] != 3:
        raise UserInputError("expected a (3, h, w) image array, got shape %r"
                             % (array.shape,))
    clipped = np.clip(np.asarray(array, dtype=np.float64), 0.0, 1.0)
    pixels = np.rint(clipped * 255.0).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(pixels, mode="RGB").save(path, format="PNG")


def read_mask(path):
    """(h, w) float64 binary mask, 1 = valid, from a 0/255 grayscale PNG."""
    try:
        with Image.open(path) as img:
            gray = img.convert("L")
            arr = np.asarray(gray)
    except (OSError, ValueError) as exc:
        raise UserInputError("cannot read mask %s: %s" % (path, exc))
    bad = ~np.isin(arr, (0, 255))
    if bad.any():
        values = sorted(int(v) for v in np.unique(arr[bad]))[:8]
        raise UserInputError(
            "mask %s must contain only 0 and 255, found %r" % (path, values))
    return (arr == 255).astype(np.float64)


def write_mask(path, mask):
    """Write a 2-D binary mask (1 = valid) as a 0/255 grayscale PNG."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise UserInputError("expected a 2-D mask array, got shape %r"
                             % (arr.shape,))
    if not np.isin(arr, (0, 1)).all():
        raise UserInputError("mask values must be 0 or 1")
    pixels = (arr.astype(np.uint8) * 255)
    Image.fromarray(pixels, mode="L").save(path, format="PNG")
