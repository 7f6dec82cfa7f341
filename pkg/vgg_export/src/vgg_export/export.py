"""Extract VGG16 convolution weights up to pool3 and write them as PCNV.

The output file carries the reserved entry names a feature extractor
consumes: ``vgg.convB_M.weight`` / ``vgg.convB_M.bias`` for each of the
seven convolutions before pool3, a ``taps`` entry listing the cumulative
conv index at which each of the three pools sits, and ``norm.mean`` /
``norm.std`` recording the input normalization the weights expect.
"""

from collections import OrderedDict

import numpy as np


class ExportError(Exception):
    """User-resolvable export failure: bad source weights or no source."""


# (entry name, torchvision features index, out channels, in channels)
VGG_CONV_LAYOUT = [
    ("conv1_1", 0, 64, 3),
    ("conv1_2", 2, 64, 64),
    ("conv2_1", 5, 128, 64),
    ("conv2_2", 7, 128, 128),
    ("conv3_1", 10, 256, 128),
    ("conv3_2", 12, 256, 256),
    ("conv3_3", 14, 256, 256),
]

# cumulative conv count after block1, block2, block3 pools
TAPS = [2, 4, 7]

NORM_CONVENTIONS = {
    "zero-one": ([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]),
    "imagenet": ([0.485, 0.456, 0.406], [0.229, 0.224, 0.225]),
}

DOWNLOAD_INSTRUCTIONS = """\
no pretrained VGG16 weights available.

Either pass --from-state-dict with a locally saved state dict, or run the
export on a machine with network access. To produce a state dict file on a
connected machine:

    python -c "import torch, torchvision; \\
torch.save(torchvision.models.vgg16(weights='IMAGENET1K_V1').state_dict(), \\
'vgg16_state.pt')"

then copy vgg16_state.pt here and rerun with --from-state-dict vgg16_state.pt
"""


def _to_array(value):
    # torch tensors and ndarrays both expose this pair
    detach = getattr(value, "detach", None)
    if detach is not None:
        value = detach().cpu().numpy()
    return np.asarray(value, dtype=np.float32)


def collect_entries(state_dict, norm="imagenet"):
    """Ordered PCNV entry mapping from a torchvision VGG16 state dict.

    Validates every conv shape against the published architecture before
    anything is written.
    """
    if norm not in NORM_CONVENTIONS:
        raise ExportError("unknown normalization %r; choose one of %s"
                          % (norm, ", ".join(sorted(NORM_CONVENTIONS))))
    entries = OrderedDict()
    entries["taps"] = np.asarray(TAPS, dtype=np.float32)
    mean, std = NORM_CONVENTIONS[norm]
    entries["norm.mean"] = np.asarray(mean, dtype=np.float32)
    entries["norm.std"] = np.asarray(std, dtype=np.float32)
    for name, index, c_out, c_in in VGG_CONV_LAYOUT:
        for suffix, shape in (("weight", (c_out, c_in, 3, 3)),
                              ("bias", (c_out,))):
            key = "features.%d.%s" % (index, suffix)
            if key not in state_dict:
                raise ExportError(
                    "state dict is missing %s (expected a torchvision "
                    "VGG16 state dict)" % key)
            arr = _to_array(state_dict[key])
            if arr.shape != shape:
                raise ExportError(
                    "%s has shape %r, expected %r; this is not a VGG16 "
                    "state dict" % (key, arr.shape, shape))
            entries["vgg.%s.%s" % (name, suffix)] = arr
    return entries


def load_state_dict_file(path):
    """Load a state dict saved with torch.save."""
    import torch

    try:
        loaded = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError as exc:
        raise ExportError("state dict file not found: %s" % path) from exc
    except Exception as exc:
        raise ExportError("cannot load state dict %s: %s" % (path, exc)) from exc
    if not isinstance(loaded, dict):
        raise ExportError("%s does not contain a state dict" % path)
    return loaded


def load_pretrained_state_dict():
    """Fetch torchvision's pretrained VGG16; fatal with instructions offline."""
    try:
        from torchvision.models import VGG16_Weights, vgg16

        return vgg16(weights=VGG16_Weights.IMAGENET1K_V1).state_dict()
    except Exception as exc:
        raise ExportError("%s\n(download failed: %s)"
                          % (DOWNLOAD_INSTRUCTIONS, exc)) from exc


def export_vgg(out_path, state_dict=None, norm="imagenet"):
    """Write the PCNV file; returns the entry mapping that was written."""
    from .pcnv import write_pcnv

    if state_dict is None:
        state_dict = load_pretrained_state_dict()
    entries = collect_entries(state_dict, norm=norm)
    write_pcnv(out_path, entries)
    return entries
