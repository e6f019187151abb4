"""First half of the U-shape: degraded image to latent plus feature pyramid.

The encoder mirrors the generator's resolution ladder.  A conv stem works at
full resolution R, then stride-2 residual stages halve the size down to 4x4.
The map entering each stage (and the final 4x4 map) is projected by a 1x1
convolution to the channel count the generator expects for its per-level
input, giving one pyramid level per generator noise level.  The 4x4 map is
flattened through a fully-connected layer into the latent vector.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .config import GeneratorConfig
from .layers import ConvLayer, ResBlockDown, conv_layer, linear_layer


def resize_input(image: np.ndarray, resolution: int) -> np.ndarray:
    """Bilinearly resample a float (3, H, W) array to (3, R, R)."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) image, got shape {image.shape}")
    t = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32))[None]
    return resize_input_t(t, resolution)[0].numpy()


def resize_input_t(x: torch.Tensor, resolution: int) -> torch.Tensor:
    """Tensor version of resize_input, (B, 3, H, W) to (B, 3, R, R)."""
    if x.shape[-1] == resolution and x.shape[-2] == resolution:
        return x
    return F.interpolate(x, size=(resolution, resolution), mode="bilinear",
                         align_corners=False)


class EncoderOutput(NamedTuple):
    latent: torch.Tensor
    pyramid: list  # torch.Tensor per level, lowest resolution first


class Encoder(nn.Module):
    """Downsampling tower producing (latent z, per-resolution feature maps)."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        config.validate()
        self.config = config
        resolutions = config.resolutions()  # [4, 8, ..., R]
        self.stem = ConvLayer(3, config.channels(config.resolution), 3)
        # stages run R -> R/2 -> ... -> 4
        self.stages = nn.ModuleList(
            ResBlockDown(config.channels(res), config.channels(res // 2))
            for res in reversed(resolutions[1:])
        )
        if config.noise_mode != "none":
            # one projection per level, ordered low resolution to high
            self.projections = nn.ModuleList(
                conv_layer(config.channels(res), config.noise_channels(res), 1)
                for res in resolutions
            )
        else:
            self.projections = None
        self.fc = linear_layer(config.channels(4) * 4 * 4, config.latent_dim)

    @property
    def resolution(self):
        return self.config.resolution

    def forward(self, x):
        r = self.config.resolution
        if x.dim() != 4 or tuple(x.shape[1:]) != (3, r, r):
            raise ValueError(
                f"expected input of shape (batch, 3, {r}, {r}), got {tuple(x.shape)}"
            )
        feats = []  # maps at R, R/2, ..., 8, 4
        y = self.stem(x)
        for stage in self.stages:
            feats.append(y)
            y = stage(y)
        feats.append(y)
        latent = self.fc(y.flatten(1))
        pyramid = []
        if self.projections is not None:
            for proj, feat in zip(self.projections, reversed(feats)):
                pyramid.append(proj(feat))
        return EncoderOutput(latent, pyramid)
