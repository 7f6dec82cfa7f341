"""Image inpainting with mask-aware, renormalized convolutions."""

from .errors import (ConfigError, ContractError, DivergenceError,
                     GenerationExhaustedError, PconvError, ShapeError,
                     UserInputError)
from .losses import LossReport, LossWeights, composite, total_loss
from .network import Network, NetConfig, full_config, scaled_config
from .partial_conv import (MaskedTensor, PartialConvLayer, mask_coverage,
                           partial_conv_backward, partial_conv_forward)
from .serialize import read_pcnv, write_pcnv

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContractError", "DivergenceError",
    "GenerationExhaustedError", "PconvError", "ShapeError", "UserInputError",
    "LossReport", "LossWeights", "composite", "total_loss",
    "Network", "NetConfig", "full_config", "scaled_config",
    "MaskedTensor", "PartialConvLayer", "mask_coverage",
    "partial_conv_backward", "partial_conv_forward",
    "read_pcnv", "write_pcnv",
    "__version__",
]
