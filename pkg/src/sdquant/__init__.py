"""Sigma-Delta post-training quantization with adjustable oversampling ratio."""

from .engine import HessianContext, QuantizeConfig, build_hessian, quantize_matrix, reconstruct, sd_quantize_block
from .errors import FormatError, NumericError
from .tensor_io import QuantizedWeight, load_float, load_quantized, save_float, save_quantized

__version__ = "0.1.0"

__all__ = [
    "FormatError",
    "HessianContext",
    "NumericError",
    "QuantizeConfig",
    "QuantizedWeight",
    "build_hessian",
    "load_float",
    "load_quantized",
    "quantize_matrix",
    "reconstruct",
    "save_float",
    "save_quantized",
    "sd_quantize_block",
]
