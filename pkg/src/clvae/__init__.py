"""Unsupervised SAR change detection with a contrastive ConvLSTM VAE."""

from .divergence import DivergenceKind
from .model import CLVAE, ModelConfig, parameter_count

__all__ = ["CLVAE", "DivergenceKind", "ModelConfig", "parameter_count"]
__version__ = "0.1.0"
