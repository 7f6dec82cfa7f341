"""Encoder-decoder network built from masked renormalized convolutions.

Encoder layers halve resolution with stride 2; decoder stages upsample by
nearest neighbor, concatenate the matching encoder output (features and
masks alike), and convolve at stride 1. The last stage concatenates the
network input itself, so the final convolution sees the original pixels and
the original mask, and applies neither normalization nor a nonlinearity.

Layer naming is positional: PConv1..PConvD are the encoder, PConvD+1..
PConv2D the decoder. The first encoder layer and the last decoder layer
carry no batch normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, UserInputError
from .partial_conv import (MaskedTensor, PartialConvLayer, partial_conv_backward,
                           partial_conv_forward)
from .serialize import read_pcnv, write_pcnv
from .tensor import (BatchNormState, ConvParams, activation, activation_backward,
                     batchnorm_backward, batchnorm_forward, check_binary,
                     concat_channels, he_init, nearest_upsample,
                     nearest_upsample_backward, split_channels)

ENC_KERNELS_FULL = (7, 5, 5, 3, 3, 3, 3, 3)
ENC_CHANNELS_FULL = (64, 128, 256, 512, 512, 512, 512, 512)


@dataclass(frozen=True)
class LayerSpec:
    """Static description of one convolution stage."""

    name: str
    kernel: int
    stride: int
    in_channels: int
    out_channels: int
    has_bn: bool
    act: str | None
    upsample_before: bool
    skip_source: int | None

    @property
    def padding(self):
        return self.kernel // 2


@dataclass(frozen=True)
class NetConfig:
    enc_kernels: tuple
    enc_channels: tuple
    input_channels: int = 3
    leaky_slope: float = 0.2
    per_channel_mask: bool = False

    def __post_init__(self):
        if len(self.enc_kernels) != len(self.enc_channels):
            raise ConfigError("enc_kernels and enc_channels lengths differ: "
                              "%d vs %d" % (len(self.enc_kernels),
                                            len(self.enc_channels)))
        if self.depth < 2:
            raise ConfigError("need at least 2 encoder layers, got %d"
                              % self.depth)
        for k in self.enc_kernels:
            if k < 1 or k % 2 == 0:
                raise ConfigError("encoder kernels must be odd and positive, "
                                  "got %r" % (self.enc_kernels,))
        for c in self.enc_channels:
            if c < 1:
                raise ConfigError("encoder channels must be positive, got %r"
                                  % (self.enc_channels,))
        if self.input_channels < 1:
            raise ConfigError("input_channels must be positive")

    @property
    def depth(self):
        return len(self.enc_kernels)

    def layer_specs(self):
        """Encoder specs followed by decoder specs, in forward order."""
        d = self.depth
        specs = []
        for i in range(d):
            specs.append(LayerSpec(
                name="PConv%d" % (i + 1),
                kernel=self.enc_kernels[i],
                stride=2,
                in_channels=self.input_channels if i == 0
                else self.enc_channels[i - 1],
                out_channels=self.enc_channels[i],
                has_bn=i > 0,
                act="relu",
                upsample_before=False,
                skip_source=None,
            ))
        for j in range(d):
            last = j == d - 1
            skip = None if last else d - 2 - j
            skip_c = self.input_channels if last else self.enc_channels[skip]
            prev_c = self.enc_channels[d - 1] if j == 0 \
                else specs[-1].out_channels
            specs.append(LayerSpec(
                name="PConv%d" % (d + j + 1),
                kernel=3,
                stride=1,
                in_channels=prev_c + skip_c,
                out_channels=self.input_channels if last
                else self.enc_channels[d - 2 - j],
                has_bn=not last,
                act=None if last else "leaky_relu",
                upsample_before=True,
                skip_source=skip,
            ))
        return specs


def full_config(input_channels=3, per_channel_mask=False):
    return NetConfig(ENC_KERNELS_FULL, ENC_CHANNELS_FULL, input_channels,
                     per_channel_mask=per_channel_mask)


def scaled_config(depth, width, input_channels=3, per_channel_mask=False):
    """Reduced net: same kernel ladder, widths doubling up to a cap of 8x."""
    base = [7, 5, 5] + [3] * max(depth - 3, 0)
    kernels = tuple(base[:depth])
    channels = tuple(min(width * 2 ** i, 8 * width) for i in range(depth))
    return NetConfig(kernels, channels, input_channels,
                     per_channel_mask=per_channel_mask)


@dataclass
class PConvBlock:
    spec: LayerSpec
    layer: PartialConvLayer
    bn: BatchNormState | None


class Network:
    """The full trainable model: blocks in forward order plus the config."""

    def __init__(self, config: NetConfig, seed=0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.blocks = []
        for spec in config.layer_specs():
            fan_in = spec.in_channels * spec.kernel * spec.kernel
            w = he_init((spec.out_channels, spec.in_channels,
                         spec.kernel, spec.kernel), fan_in, rng, dtype=self.dtype)
            params = ConvParams(w, np.zeros(spec.out_channels, dtype=self.dtype),
                                stride=spec.stride, padding=spec.padding)
            bn = BatchNormState.fresh(spec.out_channels, dtype=self.dtype) \
                if spec.has_bn else None
            layer = PartialConvLayer(params,
                                     per_channel=config.per_channel_mask)
            self.blocks.append(PConvBlock(spec, layer, bn))

    @property
    def depth(self):
        return self.config.depth

    def describe(self):
        """Layer table: name, kernel, stride, in/out channels, bn, act."""
        return [b.spec for b in self.blocks]

    def set_encoder_bn_frozen(self, frozen):
        for block in self.blocks[:self.depth]:
            if block.bn is not None:
                block.bn.frozen = bool(frozen)

    def parameters(self):
        """(name, array) pairs for every trainable tensor, forward order."""
        out = []
        for block in self.blocks:
            out.append((block.spec.name + ".weight", block.layer.params.weights))
            out.append((block.spec.name + ".bias", block.layer.params.bias))
            if block.bn is not None:
                out.append((block.spec.name + ".bn.gamma", block.bn.gamma))
                out.append((block.spec.name + ".bn.beta", block.bn.beta))
        return out

    def trainable_parameters(self):
        """parameters() minus batchnorm tensors whose layer is frozen."""
        frozen = {b.spec.name for b in self.blocks
                  if b.bn is not None and b.bn.frozen}
        return [(name, arr) for name, arr in self.parameters()
                if not (".bn." in name and name.split(".")[0] in frozen)]

    def _check_input(self, image, mask):
        n, c, h, w = image.shape
        if mask.shape == (n, 1, h, w) and c > 1:
            mask = np.broadcast_to(mask, image.shape).copy()
        if image.shape != mask.shape:
            raise ShapeError("mask must match image shape (or be "
                             "single-channel)", expected=image.shape,
                             got=mask.shape)
        if c != self.config.input_channels:
            raise ShapeError("input channel count",
                             expected=self.config.input_channels, got=c)
        check_binary(mask)
        step = 2 ** self.depth
        if h % step or w % step or h < step or w < step:
            raise ShapeError("input sides must be multiples of 2^depth",
                             expected="multiple of %d" % step, got=(h, w))
        return mask

    def forward(self, image, mask, training=False, want_cache=False):
        """Network output; with want_cache also the state backward needs.

        A single-channel mask is replicated across the image channels.
        """
        mask = self._check_input(image, mask)
        d = self.depth
        x = MaskedTensor(image, mask)
        enc_outputs = []
        cache = []
        for block in self.blocks[:d]:
            mt = partial_conv_forward(x, block.layer)
            feats = mt.features
            bn_cache = None
            if block.bn is not None:
                feats, bn_cache = batchnorm_forward(feats, block.bn, training)
            act_in = feats
            feats = activation(feats, block.spec.act,
                               slope=self.config.leaky_slope)
            cache.append({"conv_in": x, "bn_cache": bn_cache,
                          "act_in": act_in, "block": block})
            x = MaskedTensor(feats, mt.mask)
            enc_outputs.append(x)

        y = enc_outputs[-1]
        for block in self.blocks[d:]:
            up_w = y.features.shape[1]
            up = MaskedTensor(nearest_upsample(y.features, 2),
                              nearest_upsample(y.mask, 2))
            if block.spec.skip_source is None:
                skip = MaskedTensor(image, mask)
            else:
                skip = enc_outputs[block.spec.skip_source]
            joined = MaskedTensor(
                concat_channels([up.features, skip.features]),
                concat_channels([up.mask, skip.mask]))
            mt = partial_conv_forward(joined, block.layer)
            feats = mt.features
            bn_cache = None
            if block.bn is not None:
                feats, bn_cache = batchnorm_forward(feats, block.bn, training)
            act_in = feats
            if block.spec.act is not None:
                feats = activation(feats, block.spec.act,
                                   slope=self.config.leaky_slope)
            cache.append({"conv_in": joined, "bn_cache": bn_cache,
                          "act_in": act_in, "block": block, "up_width": up_w})
            y = MaskedTensor(feats, mt.mask)

        if want_cache:
            return y.features, cache
        return y.features

    def backward(self, cache, grad_out):
        """Parameter gradients for the loss gradient at the network output.

        Returns a dict keyed like parameters(). Gradients into the network
        input are dropped.
        """
        d = self.depth
        grads = {}
        enc_grads = [None] * d

        def add_enc_grad(i, g):
            enc_grads[i] = g if enc_grads[i] is None else enc_grads[i] + g

        g = grad_out
        for entry in reversed(cache[d:]):
            block = entry["block"]
            spec = block.spec
            if spec.act is not None:
                g = activation_backward(entry["act_in"], spec.act, g,
                                        slope=self.config.leaky_slope)
            if block.bn is not None:
                g, g_gamma, g_beta = batchnorm_backward(entry["bn_cache"], g)
                grads[spec.name + ".bn.gamma"] = g_gamma
                grads[spec.name + ".bn.beta"] = g_beta
            g_in, g_w, g_b = partial_conv_backward(entry["conv_in"],
                                                   block.layer, g)
            grads[spec.name + ".weight"] = g_w
            grads[spec.name + ".bias"] = g_b
            g_up, g_skip = split_channels(g_in, entry["up_width"])
            if spec.skip_source is not None:
                add_enc_grad(spec.skip_source, g_skip)
            g = nearest_upsample_backward(g_up, 2)
        add_enc_grad(d - 1, g)

        for i in range(d - 1, -1, -1):
            entry = cache[i]
            block = entry["block"]
            spec = block.spec
            g = enc_grads[i]
            g = activation_backward(entry["act_in"], spec.act, g,
                                    slope=self.config.leaky_slope)
            if block.bn is not None:
                g, g_gamma, g_beta = batchnorm_backward(entry["bn_cache"], g)
                grads[spec.name + ".bn.gamma"] = g_gamma
                grads[spec.name + ".bn.beta"] = g_beta
            g_in, g_w, g_b = partial_conv_backward(entry["conv_in"],
                                                   block.layer, g)
            grads[spec.name + ".weight"] = g_w
            grads[spec.name + ".bias"] = g_b
            if i > 0:
                add_enc_grad(i - 1, g_in)
        return grads

    def save(self, path):
        """Checkpoint: config entries first, then per-layer tensors."""
        entries = {
            "config.enc_kernels": np.asarray(self.config.enc_kernels,
                                             dtype=np.float32),
            "config.enc_channels": np.asarray(self.config.enc_channels,
                                              dtype=np.float32),
            "config.input_channels": np.asarray(
                [self.config.input_channels], dtype=np.float32),
        }
        if self.config.per_channel_mask:
            entries["config.per_channel_mask"] = np.ones(1, dtype=np.float32)
        for block in self.blocks:
            name = block.spec.name
            entries[name + ".weight"] = block.layer.params.weights
            entries[name + ".bias"] = block.layer.params.bias
            if block.bn is not None:
                entries[name + ".bn.gamma"] = block.bn.gamma
                entries[name + ".bn.beta"] = block.bn.beta
                entries[name + ".bn.running_mean"] = block.bn.running_mean
                entries[name + ".bn.running_var"] = block.bn.running_var
        write_pcnv(path, entries)

    @classmethod
    def load(cls, path):
        entries = read_pcnv(path)
        for needed in ("config.enc_kernels", "config.enc_channels",
                       "config.input_channels"):
            if needed not in entries:
                raise UserInputError("checkpoint %s lacks entry %r"
                                     % (path, needed))
        kernels = tuple(int(round(v)) for v in entries["config.enc_kernels"])
        channels = tuple(int(round(v)) for v in entries["config.enc_channels"])
        in_c = int(round(float(entries["config.input_channels"][0])))
        per_channel = bool(entries.get("config.per_channel_mask",
                                       np.zeros(1))[0])
        try:
            config = NetConfig(kernels, channels, in_c,
                               per_channel_mask=per_channel)
        except ConfigError as exc:
            raise UserInputError("checkpoint %s has an invalid config: %s"
                                 % (path, exc))
        net = cls(config, seed=0, dtype=np.float32)
        for block in net.blocks:
            name = block.spec.name
            targets = {
                name + ".weight": block.layer.params.weights,
                name + ".bias": block.layer.params.bias,
            }
            if block.bn is not None:
                targets[name + ".bn.gamma"] = block.bn.gamma
                targets[name + ".bn.beta"] = block.bn.beta
                targets[name + ".bn.running_mean"] = block.bn.running_mean
                targets[name + ".bn.running_var"] = block.bn.running_var
            for key, target in targets.items():
                if key not in entries:
                    raise UserInputError("checkpoint %s lacks entry %r"
                                         % (path, key))
                got = entries[key]
                if got.shape != target.shape:
                    raise UserInputError(
                        "checkpoint %s entry %r has shape %r, wanted %r"
                        % (path, key, got.shape, target.shape))
                target[...] = got
        return net
