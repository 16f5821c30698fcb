"""Controllable infrared-visible image fusion with mask prompts."""

from .model import AblationFlags, CtrlFuse, ModelConfig
from .tensor import ContractError, ShapeError, Tensor

__all__ = [
    "AblationFlags",
    "ContractError",
    "CtrlFuse",
    "ModelConfig",
    "ShapeError",
    "Tensor",
]

__version__ = "0.1.0"
