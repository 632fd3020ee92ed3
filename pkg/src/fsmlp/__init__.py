"""FSMLP forecasting: simplex-constrained channel mixing in the DCT domain."""
from .frequency import DctPlan, dct_forward, dct_inverse
from .model import FSMLP, ModelConfig, load_checkpoint, parameter_count, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "DctPlan",
    "dct_forward",
    "dct_inverse",
    "FSMLP",
    "ModelConfig",
    "load_checkpoint",
    "parameter_count",
    "save_checkpoint",
]
