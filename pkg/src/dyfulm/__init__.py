"""Dual-encoder multi-task sentiment analysis at desk scale."""

from .autodiff import Tensor, gradcheck, no_grad
from .config import VARIANTS, AblationToggles, Config, ModelConfig, TrainConfig
from .model import DyFuLM

__all__ = ["AblationToggles", "Config", "DyFuLM", "ModelConfig", "Tensor", "TrainConfig", "VARIANTS",
           "gradcheck", "no_grad"]
__version__ = "0.1.0"
