"""Style-based prior generator: a mapping MLP plus modulated upsampling blocks.

The generator starts from a learned constant 4x4 feature map and doubles the
resolution per block up to R.  A single style vector w modulates every
convolution, and one extra feature map per resolution is fed into each block.
During pretraining those maps are Gaussian noise; during restoration the
encoder's feature pyramid takes their place, which is what carries image
content into the prior.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .config import GeneratorConfig
from .layers import (
    ModulatedConv2d,
    PixelNorm,
    conv_layer,
    leaky,
    linear_layer,
    upsample2x,
)


def _leaky_clamp(x, slope=0.01):
    """Identity on [0, 1], slope 0.01 outside; gradient is never zero."""
    pinned = x.clamp(0.0, 1.0)
    return pinned + slope * (x - pinned)


class MappingNetwork(nn.Module):
    """Fully-connected stack projecting a latent z into the style space."""

    def __init__(self, latent_dim, depth):
        super().__init__()
        self.norm = PixelNorm()
        self.layers = nn.ModuleList(
            linear_layer(latent_dim, latent_dim) for _ in range(depth)
        )

    def forward(self, z):
        x = self.norm(z)
        for layer in self.layers:
            x = leaky(layer(x))
        return x


class ToRGB(nn.Module):
    """1x1 modulated (not demodulated) projection onto the running RGB image."""

    def __init__(self, in_channels, style_dim):
        super().__init__()
        self.conv = ModulatedConv2d(in_channels, 3, 1, style_dim, demodulate=False)

    def forward(self, x, w, skip=None):
        out = self.conv(x, w)
        if skip is not None:
            out = out + upsample2x(skip)
        return out


class GanBlock(nn.Module):
    """Upsamples x2 and applies two modulated convolutions.

    The block's noise map is injected before each convolution: concatenated
    as extra channels ("concat"), projected by a 1x1 conv and added ("add"),
    or skipped entirely ("none").  The same map is used at both injections.
    """

    def __init__(self, in_channels, out_channels, noise_channels, style_dim,
                 noise_mode, eps=1e-8):
        super().__init__()
        self.noise_mode = noise_mode
        extra = noise_channels if noise_mode == "concat" else 0
        self.conv1 = ModulatedConv2d(in_channels + extra, out_channels, 3,
                                     style_dim, eps=eps)
        self.conv2 = ModulatedConv2d(out_channels + extra, out_channels, 3,
                                     style_dim, eps=eps)
        self.proj1 = conv_layer(noise_channels, in_channels, 1) if noise_mode == "add" else None
        self.proj2 = conv_layer(noise_channels, out_channels, 1) if noise_mode == "add" else None
        self.to_rgb = ToRGB(out_channels, style_dim)

    def _inject(self, x, noise, proj):
        if self.noise_mode == "concat":
            return torch.cat((x, noise), dim=1)
        if self.noise_mode == "add":
            return x + proj(noise)
        return x

    def forward(self, x, w, noise, rgb):
        x = upsample2x(x)
        x = self._inject(x, noise, self.proj1)
        x = leaky(self.conv1(x, w))
        x = self._inject(x, noise, self.proj2)
        x = leaky(self.conv2(x, w))
        rgb = self.to_rgb(x, w, rgb)
        return x, rgb


class Generator(nn.Module):
    """Synthesis network mapping (w, per-resolution maps) to an RGB image.

    Per-block RGB contributions are accumulated on a bilinearly upsampled
    running image; an affine map takes the sum into [0, 1], clamped at the
    public boundary.  Training runs with clamp=False, which applies a leaky
    clamp instead: values stay near the unit range (so the critic gets no
    trivial out-of-range cue) but the content gradient never dies.
    """

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        config.validate()
        self.config = config
        style_dim = config.latent_dim
        self.mapping = MappingNetwork(style_dim, config.mapping_depth)
        c4 = config.channels(4)
        self.const = nn.Parameter(torch.randn(1, c4, 4, 4))
        self.noise_mode = config.noise_mode
        extra = config.noise_channels(4) if self.noise_mode == "concat" else 0
        self.stem = ModulatedConv2d(c4 + extra, c4, 3, style_dim)
        self.stem_proj = (
            conv_layer(config.noise_channels(4), c4, 1)
            if self.noise_mode == "add" else None
        )
        self.stem_rgb = ToRGB(c4, style_dim)
        self.blocks = nn.ModuleList(
            GanBlock(
                config.channels(res // 2),
                config.channels(res),
                config.noise_channels(res),
                style_dim,
                self.noise_mode,
            )
            for res in config.resolutions()[1:]
        )

    @property
    def resolution(self):
        return self.config.resolution

    def noise_shapes(self) -> list[tuple[int, int, int]]:
        """Per-level map shapes (channels, res, res), lowest resolution first."""
        if self.noise_mode == "none":
            return []
        return [
            (self.config.noise_channels(res), res, res)
            for res in self.config.resolutions()
        ]

    def make_noise(self, generator=None, batch=1) -> list[torch.Tensor]:
        """Standard-normal maps matching noise_shapes (empty for mode "none")."""
        device = self.const.device
        return [
            torch.randn(batch, *shape, generator=generator, device=device)
            for shape in self.noise_shapes()
        ]

    def _check_noises(self, noises, batch):
        shapes = self.noise_shapes()
        if noises is None or len(noises) != len(shapes):
            got = 0 if noises is None else len(noises)
            raise ValueError(f"expected {len(shapes)} noise levels, got {got}")
        for n, shape in zip(noises, shapes):
            if tuple(n.shape) != (batch, *shape):
                raise ValueError(
                    f"noise level shape {tuple(n.shape)} does not match "
                    f"expected {(batch, *shape)}"
                )

    def forward(self, w, noises=None, clamp=True):
        if w.dim() != 2 or w.shape[1] != self.config.latent_dim:
            raise ValueError(f"style must be (batch, {self.config.latent_dim})")
        batch = w.shape[0]
        if self.noise_mode == "none":
            noises = [None] * self.config.num_levels
        else:
            self._check_noises(noises, batch)
        x = self.const.expand(batch, -1, -1, -1)
        if self.noise_mode == "concat":
            x = torch.cat((x, noises[0]), dim=1)
        elif self.noise_mode == "add":
            x = x + self.stem_proj(noises[0])
        x = leaky(self.stem(x, w))
        rgb = self.stem_rgb(x, w)
        for block, noise in zip(self.blocks, noises[1:]):
            x, rgb = block(x, w, noise, rgb)
        out = 0.5 * rgb + 0.5
        return out.clamp(0.0, 1.0) if clamp else _leaky_clamp(out)

    def sample(self, generator=None, batch=1, clamp=True):
        """Draw (z, noises) and synthesise; returns the image batch."""
        device = self.const.device
        z = torch.randn(batch, self.config.latent_dim, generator=generator,
                        device=device)
        return self(self.mapping(z), self.make_noise(generator, batch),
                    clamp=clamp)


def generate_image(gen: Generator, seed: int) -> np.ndarray:
    """Convenience wrapper: one seeded sample as a float32 (3, R, R) array."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        out = gen.sample(g, batch=1)
    return out[0].numpy().astype(np.float32)
