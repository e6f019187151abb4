"""Discriminator with feature taps, and the training losses.

Both adversarial losses are the non-saturating logistic form expressed with
softplus.  The restoration objective combines them with a mean-absolute
content term and a discriminator feature-matching term:

    total = adv + alpha * content + beta * feature_matching

with alpha = 1 and beta = 0.02 by default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import torch
from torch import nn
from torch.nn import functional as F

from .config import GeneratorConfig
from .layers import ConvLayer, ResBlockDown, linear_layer


@dataclass(frozen=True)
class LossWeights:
    """Mixing weights of the restoration objective."""

    alpha: float = 1.0
    beta: float = 0.02


class DiscriminatorOutput(NamedTuple):
    score: torch.Tensor  # (batch,) raw logits
    features: list  # per-block maps, shallow to deep


class Discriminator(nn.Module):
    """Residual downsampling critic; every block output is a feature tap.

    No minibatch statistics anywhere: training runs at batch size one, where
    cross-sample statistics would be degenerate.
    """

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        config.validate()
        self.config = config
        resolutions = config.resolutions()
        self.stem = ConvLayer(3, config.channels(config.resolution), 3)
        self.blocks = nn.ModuleList(
            ResBlockDown(config.channels(res), config.channels(res // 2))
            for res in reversed(resolutions[1:])
        )
        self.final = ConvLayer(config.channels(4), config.channels(4), 3)
        self.fc = linear_layer(config.channels(4) * 4 * 4, 1)

    def forward(self, x):
        r = self.config.resolution
        if x.dim() != 4 or tuple(x.shape[1:]) != (3, r, r):
            raise ValueError(
                f"expected input of shape (batch, 3, {r}, {r}), got {tuple(x.shape)}"
            )
        y = self.stem(x)
        features = []
        for block in self.blocks:
            y = block(y)
            features.append(y)
        score = self.fc(self.final(y).flatten(1)).squeeze(1)
        return DiscriminatorOutput(score, features)


def _as_tensor(value):
    if isinstance(value, torch.Tensor):
        return value
    return torch.as_tensor(value, dtype=torch.float64)


def adversarial_loss_g(d_fake):
    """Non-saturating generator loss softplus(-d); mean over the batch."""
    return F.softplus(-_as_tensor(d_fake)).mean()


def adversarial_loss_d(d_real, d_fake):
    """Logistic discriminator loss softplus(-d_real) + softplus(d_fake)."""
    return F.softplus(-_as_tensor(d_real)).mean() + F.softplus(_as_tensor(d_fake)).mean()


def content_loss(generated, target):
    """Mean absolute difference between two equally shaped images."""
    generated, target = _as_tensor(generated), _as_tensor(target)
    if generated.shape != target.shape:
        raise ValueError(
            f"shape mismatch {tuple(generated.shape)} vs {tuple(target.shape)}"
        )
    return (generated - target).abs().mean()


def feature_matching_loss(real_features, fake_features):
    """Sum over layers of the element-count-normalized L2 feature distance.

    Each layer contributes sqrt(sum((a - b)^2) / N), i.e. the RMS difference,
    so wide layers do not dominate narrow ones.
    """
    if len(real_features) != len(fake_features):
        raise ValueError(
            f"feature list length mismatch: {len(real_features)} vs {len(fake_features)}"
        )
    total = None
    for real, fake in zip(real_features, fake_features):
        real, fake = _as_tensor(real), _as_tensor(fake)
        if real.shape != fake.shape:
            raise ValueError(
                f"feature shape mismatch {tuple(real.shape)} vs {tuple(fake.shape)}"
            )
        term = torch.linalg.vector_norm(real - fake) / math.sqrt(real.numel())
        total = term if total is None else total + term
    if total is None:
        raise ValueError("feature lists must be non-empty")
    return total


def total_loss(l_a, l_c, l_f, weights: LossWeights = LossWeights()):
    """Weighted sum adv + alpha * content + beta * feature matching."""
    return _as_tensor(l_a) + weights.alpha * _as_tensor(l_c) + weights.beta * _as_tensor(l_f)


def r1_penalty(discriminator, real):
    """Squared gradient norm of the score at real samples (mean over batch)."""
    real = real.detach().requires_grad_(True)
    score = discriminator(real).score
    (grad,) = torch.autograd.grad(score.sum(), real, create_graph=True)
    return grad.pow(2).reshape(grad.shape[0], -1).sum(1).mean()
