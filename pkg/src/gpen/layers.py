"""Torch building blocks shared by the generator, encoder and discriminator."""

from __future__ import annotations

import math

import torch
from torch import nn
from torch.nn import functional as F

LEAKY_SLOPE = 0.2
ACT_GAIN = math.sqrt(2.0)


def leaky(x):
    """Slope-0.2 leaky ReLU with a sqrt(2) gain to roughly keep unit variance."""
    return F.leaky_relu(x, LEAKY_SLOPE) * ACT_GAIN


def upsample2x(x):
    """Bilinear x2 upsampling, the only resampling used inside the networks."""
    return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)


class PixelNorm(nn.Module):
    """Scale each latent vector to unit RMS (i.e. norm sqrt(dim))."""

    def forward(self, x):
        return x * torch.rsqrt(torch.mean(x * x, dim=1, keepdim=True) + 1e-8)


def linear_layer(in_features, out_features, bias_init=0.0):
    """nn.Linear with N(0, 1/fan_in) weights and a constant bias."""
    layer = nn.Linear(in_features, out_features)
    nn.init.normal_(layer.weight, std=1.0 / math.sqrt(in_features))
    nn.init.constant_(layer.bias, bias_init)
    return layer


def conv_layer(in_channels, out_channels, kernel_size, stride=1, bias=True):
    """nn.Conv2d with N(0, 1/fan_in) weights, zero bias, same-size padding."""
    layer = nn.Conv2d(
        in_channels, out_channels, kernel_size,
        stride=stride, padding=kernel_size // 2, bias=bias,
    )
    nn.init.normal_(layer.weight, std=1.0 / math.sqrt(in_channels * kernel_size**2))
    if bias:
        nn.init.zeros_(layer.bias)
    return layer


def demodulated_weight(weight, style, eps=1e-8):
    """Modulate conv taps per input channel, then renormalize per output channel.

    weight: (out, in, k, k), style: (batch, in).  Returns (batch, out, in, k, k)
    where every output channel's taps have squared sum 1 (up to eps).
    """
    w = weight[None] * style[:, None, :, None, None]
    return w * torch.rsqrt(w.pow(2).sum(dim=(2, 3, 4), keepdim=True) + eps)


def modulated_conv2d(x, style, weight, bias=None, eps=1e-8, demodulate=True):
    """Per-sample style-modulated convolution, zero padded to the same size.

    Implemented as one grouped convolution with the batch folded into the
    channel axis, so each sample sees its own modulated taps.
    """
    batch, in_channels, height, width = x.shape
    out_channels, w_in, k, _ = weight.shape
    if style.shape != (batch, in_channels) or w_in != in_channels:
        raise ValueError(
            f"style {tuple(style.shape)} / weight {tuple(weight.shape)} do not "
            f"match input {tuple(x.shape)}"
        )
    if demodulate:
        w = demodulated_weight(weight, style, eps)
    else:
        w = weight[None] * style[:, None, :, None, None]
    w = w.reshape(batch * out_channels, in_channels, k, k)
    out = F.conv2d(x.reshape(1, batch * in_channels, height, width), w,
                   padding=k // 2, groups=batch)
    out = out.reshape(batch, out_channels, height, width)
    if bias is not None:
        out = out + bias.view(1, -1, 1, 1)
    return out


class ModulatedConv2d(nn.Module):
    """Convolution whose taps are scaled by an affine projection of the style.

    With ``demodulate`` the scaled taps are renormalized per output channel,
    which keeps activation variance near one for unit-variance input.
    """

    def __init__(self, in_channels, out_channels, kernel_size, style_dim,
                 demodulate=True, eps=1e-8):
        super().__init__()
        fan_in = in_channels * kernel_size**2
        self.weight = nn.Parameter(
            torch.randn(out_channels, in_channels, kernel_size, kernel_size)
            / math.sqrt(fan_in)
        )
        self.bias = nn.Parameter(torch.zeros(out_channels))
        # bias starts at 1 so the initial style scale is neutral
        self.affine = linear_layer(style_dim, in_channels, bias_init=1.0)
        self.demodulate = demodulate
        self.eps = eps

    def forward(self, x, w):
        return modulated_conv2d(x, self.affine(w), self.weight, self.bias,
                                self.eps, self.demodulate)


class ConvLayer(nn.Module):
    """Plain convolution with optional stride-2 downsampling and activation."""

    def __init__(self, in_channels, out_channels, kernel_size=3,
                 down=False, act=True, bias=True):
        super().__init__()
        self.conv = conv_layer(in_channels, out_channels, kernel_size,
                               stride=2 if down else 1, bias=bias)
        self.act = act

    def forward(self, x):
        out = self.conv(x)
        return leaky(out) if self.act else out


class ResBlockDown(nn.Module):
    """Residual block halving the spatial size (used by encoder and critic)."""

    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.conv1 = ConvLayer(in_channels, in_channels, 3)
        self.conv2 = ConvLayer(in_channels, out_channels, 3, down=True)
        self.skip = ConvLayer(in_channels, out_channels, 1, down=True,
                              act=False, bias=False)

    def forward(self, x):
        out = self.conv2(self.conv1(x))
        return (out + self.skip(x)) / math.sqrt(2.0)
