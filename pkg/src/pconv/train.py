"""Two-phase training loop.

Phase "initial" trains everything with batch normalization in batch-stats
mode. Phase "finetune" resumes from a checkpoint at a lower learning rate
with every encoder batch norm frozen: frozen layers normalize with their
stored running statistics and none of their tensors (scale, shift, running
stats) change. Decoder batch norms keep training.

All randomness flows from the config seed, so a (config, seed) pair fully
determines the loss log and the checkpoint bytes.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError, UserInputError
from .features import FeatureStack
from .losses import LossWeights, total_loss
from .network import Network, scaled_config
from .pngio import read_image, read_mask
from .tensor import AdamState, adam_step

PHASE_LEARNING_RATES = {"initial": 0.0002, "finetune": 0.00005}


@dataclass
class TrainConfig:
    image_dir: str
    mask_dir: str
    phase: str = "initial"
    learning_rate: float | None = None
    batch_size: int = 6
    iterations: int = 1000
    seed: int = 0
    checkpoint_dir: str = "checkpoints"
    checkpoint_every: int = 500
    log_path: str | None = None
    resume: str | None = None
    net_depth: int = 8
    net_width: int = 64
    per_channel_mask: bool = False
    feature_weights: str | None = None
    feature_widths: tuple = ((8,), (12,), (16,))
    feature_seed: int = 7
    loss_weights: LossWeights = field(default_factory=LossWeights)
    tv_element: str = "full"
    style_channel_norm: bool = True

    def __post_init__(self):
        if self.phase not in PHASE_LEARNING_RATES:
            raise ConfigError("phase must be initial or finetune, got %r"
                              % self.phase)
        if self.phase == "finetune" and not self.resume:
            raise ConfigError("finetune requires a checkpoint to resume from")
        if self.batch_size < 1 or self.iterations < 0:
            raise ConfigError("batch_size must be >= 1 and iterations >= 0")

    @property
    def effective_learning_rate(self):
        if self.learning_rate is not None:
            return self.learning_rate
        return PHASE_LEARNING_RATES[self.phase]


class AdamOptimizer:
    """One Adam state per named parameter."""

    def __init__(self, named_params, learning_rate):
        self.states = {name: AdamState.fresh(param, learning_rate)
                       for name, param in named_params}

    def step(self, named_params, grads):
        for name, param in named_params:
            adam_step(param, grads[name], self.states[name])


def train_step(net, batch, optimizer, stack, weights=None, tv_element="full",
               style_channel_norm=True, step_label=None):
    """One forward/backward/update pass; returns the loss report."""
    images, masks = batch
    weights = weights or LossWeights()
    out, cache = net.forward(images, masks, training=True, want_cache=True)
    report, grad = total_loss(out, images, masks, stack, weights=weights,
                              tv_element=tv_element,
                              style_channel_norm=style_channel_norm)
    if not np.isfinite(report.total):
        raise DivergenceError("non-finite loss%s: %r"
                              % (" at step %s" % step_label
                                 if step_label is not None else "",
                                 report.total))
    grads = net.backward(cache, grad)
    optimizer.step(net.trainable_parameters(), grads)
    return report


def _listing(directory, what):
    try:
        names = sorted(os.listdir(directory))
    except OSError as exc:
        raise UserInputError("cannot list %s dir %s: %s"
                             % (what, directory, exc))
    files = [os.path.join(directory, n) for n in names
             if n.lower().endswith(".png")]
    if not files:
        raise UserInputError("no .png files in %s dir %s" % (what, directory))
    return files


class _MaskPool:
    """Without-replacement mask sampling, reshuffled per pass."""

    def __init__(self, files, rng):
        self.files = files
        self.rng = rng
        self.queue = []

    def draw(self):
        if not self.queue:
            self.queue = list(self.rng.permutation(len(self.files)))
        return self.files[self.queue.pop()]


def _load_training_pair(image_files, mask_pool, rng, warn_sink):
    """One (image, mask2d) pair; unreadable images are dropped with a warning."""
    while image_files:
        idx = int(rng.integers(len(image_files)))
        path = image_files[idx]
        try:
            image = read_image(path, dtype=np.float32)
        except UserInputError as exc:
            print("warning: skipping %s" % exc, file=warn_sink)
            image_files.pop(idx)
            continue
        return image, read_mask(mask_pool.draw())
    raise UserInputError("every image in the dataset failed to load")


def run_training(config: TrainConfig, stdout=None):
    """Full phase run: returns the final checkpoint path."""
    stdout = stdout or sys.stdout
    image_files = _listing(config.image_dir, "image")
    mask_files = _listing(config.mask_dir, "mask")

    if config.resume:
        net = Network.load(config.resume)
    else:
        net_config = scaled_config(config.net_depth, config.net_width,
                                   per_channel_mask=config.per_channel_mask)
        net = Network(net_config, seed=config.seed)
    net.set_encoder_bn_frozen(config.phase == "finetune")

    if config.feature_weights:
        stack = FeatureStack.from_pcnv(config.feature_weights)
    else:
        stack = FeatureStack.random(config.feature_seed,
                                    widths=config.feature_widths,
                                    in_channels=net.config.input_channels,
                                    dtype=np.float32)

    optimizer = AdamOptimizer(net.trainable_parameters(),
                              config.effective_learning_rate)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    mask_pool = _MaskPool(mask_files, np.random.default_rng(
        np.random.SeedSequence([config.seed, 2])))

    os.makedirs(config.checkpoint_dir, exist_ok=True)
    log_lines = ["step,total,valid,hole,perceptual,style_out,style_comp,tv"]
    print(log_lines[0], file=stdout)

    files = list(image_files)
    expect_hw = None
    final_path = os.path.join(config.checkpoint_dir,
                              "ckpt_%s_final.pcnv" % config.phase)
    for step in range(config.iterations):
        images, masks = [], []
        for _ in range(config.batch_size):
            image, mask2d = _load_training_pair(files, mask_pool, rng,
                                                sys.stderr)
            if expect_hw is None:
                expect_hw = image.shape[1:]
            if image.shape[1:] != expect_hw or mask2d.shape != expect_hw:
                raise UserInputError(
                    "training images and masks must share one size; got %r "
                    "and %r, expected %r"
                    % (image.shape[1:], mask2d.shape, expect_hw))
            images.append(image)
            masks.append(np.broadcast_to(mask2d.astype(np.float32),
                                         image.shape).copy())
        batch = (np.stack(images), np.stack(masks))
        report = train_step(net, batch, optimizer, stack,
                            weights=config.loss_weights,
                            tv_element=config.tv_element,
                            style_channel_norm=config.style_channel_norm,
                            step_label=step)
        line = "%d,%s" % (step, report.as_line())
        log_lines.append(line)
        print(line, file=stdout)
        if config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
            net.save(os.path.join(config.checkpoint_dir,
                                  "ckpt_%s_%06d.pcnv" % (config.phase, step + 1)))

    net.save(final_path)
    if config.log_path:
        with open(config.log_path, "w") as fh:
            fh.write("\n".join(log_lines) + "\n")
    return final_path
