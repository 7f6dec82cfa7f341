"""One-shot exporter: VGG16 conv weights up to pool3 as a PCNV file."""

from .export import (NORM_CONVENTIONS, TAPS, VGG_CONV_LAYOUT, ExportError,
                     collect_entries, export_vgg, load_state_dict_file)
from .pcnv import write_pcnv

__all__ = [
    "NORM_CONVENTIONS", "TAPS", "VGG_CONV_LAYOUT", "ExportError",
    "collect_entries", "export_vgg", "load_state_dict_file", "write_pcnv",
]
