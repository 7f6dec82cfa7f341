"""Flat `key = value` config files.

Lines are `key = value`; blank lines and lines starting with # are
ignored. Values keep their raw text; typed accessors convert on demand and
raise a user-input error naming the key on malformed values.
"""

from __future__ import annotations

from .errors import UserInputError
from .losses import LossWeights
from .train import TrainConfig


def parse_config_text(text, origin="<config>"):
    values = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UserInputError("%s line %d: expected `key = value`, got %r"
                                 % (origin, ln, raw))
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise UserInputError("%s line %d: empty key" % (origin, ln))
        if key in values:
            raise UserInputError("%s line %d: duplicate key %r"
                                 % (origin, ln, key))
        values[key] = value.strip()
    return values


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise UserInputError("cannot read config %s: %s" % (path, exc))
    return parse_config_text(text, origin=path)


def _convert(values, key, conv, default, what):
    if key not in values:
        return default
    try:
        return conv(values[key])
    except (ValueError, TypeError):
        raise UserInputError("config key %r: expected %s, got %r"
                             % (key, what, values[key]))


def get_str(values, key, default=None):
    return values.get(key, default)


def get_int(values, key, default=None):
    return _convert(values, key, int, default, "an integer")


def get_float(values, key, default=None):
    return _convert(values, key, float, default, "a number")


def get_bool(values, key, default=None):
    if key not in values:
        return default
    text = values[key].lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise UserInputError("config key %r: expected a boolean, got %r"
                         % (key, values[key]))


def _parse_widths(text):
    blocks = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        blocks.append(tuple(int(x) for x in part.split(",") if x.strip()))
    if not blocks or any(not b for b in blocks):
        raise ValueError(text)
    return tuple(blocks)


KNOWN_KEYS = (
    "phase", "learning_rate", "batch_size", "iterations", "seed",
    "images", "masks", "checkpoint_dir", "checkpoint_every", "log",
    "resume", "net.depth", "net.width", "net.per_channel_mask",
    "features.weights", "features.widths", "features.seed",
    "loss.valid", "loss.hole", "loss.perceptual", "loss.style", "loss.tv",
    "loss.tv_element", "loss.style_channel_norm",
)


def train_config_from_values(values, origin="<config>"):
    unknown = sorted(set(values) - set(KNOWN_KEYS))
    if unknown:
        raise UserInputError("%s: unknown config keys %s"
                             % (origin, ", ".join(unknown)))
    images = get_str(values, "images")
    masks = get_str(values, "masks")
    if not images or not masks:
        raise UserInputError("%s: `images` and `masks` are required" % origin)
    weights = LossWeights(
        valid=get_float(values, "loss.valid", 1.0),
        hole=get_float(values, "loss.hole", 6.0),
        perceptual=get_float(values, "loss.perceptual", 0.05),
        style=get_float(values, "loss.style", 120.0),
        tv=get_float(values, "loss.tv", 0.1),
    )
    widths = _convert(values, "features.widths", _parse_widths,
                      ((8,), (12,), (16,)), "blocks like `8,8;16;32`")
    tv_element = get_str(values, "loss.tv_element", "full")
    if tv_element not in ("full", "cross"):
        raise UserInputError("loss.tv_element must be full or cross, got %r"
                             % tv_element)
    return TrainConfig(
        image_dir=images,
        mask_dir=masks,
        phase=get_str(values, "phase", "initial"),
        learning_rate=get_float(values, "learning_rate", None),
        batch_size=get_int(values, "batch_size", 6),
        iterations=get_int(values, "iterations", 1000),
        seed=get_int(values, "seed", 0),
        checkpoint_dir=get_str(values, "checkpoint_dir", "checkpoints"),
        checkpoint_every=get_int(values, "checkpoint_every", 500),
        log_path=get_str(values, "log", None),
        resume=get_str(values, "resume", None),
        net_depth=get_int(values, "net.depth", 8),
        net_width=get_int(values, "net.width", 64),
        per_channel_mask=get_bool(values, "net.per_channel_mask", False),
        feature_weights=get_str(values, "features.weights", None),
        feature_widths=widths,
        feature_seed=get_int(values, "features.seed", 7),
        loss_weights=weights,
        tv_element=tv_element,
        style_channel_norm=get_bool(values, "loss.style_channel_norm", True),
    )


DEFAULT_CONFIG_TEXT = """\
# training configuration; every key is optional unless marked required

# required: directories of 8-bit PNGs
images = data/images
masks = data/masks

# initial | finetune (finetune needs `resume`)
phase = initial
# blank learning_rate uses the phase default (0.0002 initial, 0.00005 finetune)
# learning_rate = 0.0002
batch_size = 6
iterations = 1000
seed = 0

checkpoint_dir = checkpoints
checkpoint_every = 500
# log = train_log.csv
# resume = checkpoints/ckpt_initial_final.pcnv

# encoder depth and base width; 8 and 64 build the full architecture
net.depth = 8
net.width = 64
# renormalize by per-channel window counts instead of the full window
net.per_channel_mask = false

# comparison feature stack: a weight file, or a random stack from
# features.widths (blocks separated by `;`, channel counts by `,`)
# features.weights = vgg16.pcnv
features.widths = 8;12;16
features.seed = 7

# loss term weights
loss.valid = 1.0
loss.hole = 6.0
loss.perceptual = 0.05
loss.style = 120.0
loss.tv = 0.1
# hole-region dilation neighborhood for the tv term: full | cross
loss.tv_element = full
# also divide each style term by the squared channel count
loss.style_channel_norm = true
"""
