"""Blind face restoration with a style-based GAN prior embedded in a U-shaped network.

The package is organised around three torch modules (Generator, Encoder,
Discriminator), a numpy degradation pipeline used to synthesise paired
training data, and a two-phase training loop (adversarial pretraining of
the prior, paired fine-tuning of the full restorer).
"""

__version__ = "0.1.0"

from .config import DegradationConfig, GeneratorConfig, TrainConfig
from .model import GPEN, embed_prior, load_model, restore_batch

__all__ = [
    "DegradationConfig",
    "GeneratorConfig",
    "TrainConfig",
    "GPEN",
    "embed_prior",
    "load_model",
    "restore_batch",
]
