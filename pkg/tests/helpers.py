"""Shared fixtures-in-plain-python for the test suite.

Synthetic test images need distinct identities that survive heavy
degradation (a dominant hue per image) plus sharp structure (rectangles,
a circle, a checkerboard patch) so bilinear upsampling of a degraded copy
is measurably lossy.
"""

from __future__ import annotations

import colorsys

import numpy as np

from gpen.config import GeneratorConfig


def make_test_images(n: int, resolution: int, seed: int = 0) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    r = resolution
    yy, xx = np.mgrid[0:r, 0:r] / max(1, r - 1)
    grid_y, grid_x = np.mgrid[0:r, 0:r]
    images = []
    for i in range(n):
        hue = i / max(1, n)
        base = np.array(colorsys.hsv_to_rgb(hue, 0.85, 0.9))
        other = np.array(colorsys.hsv_to_rgb((hue + 0.35) % 1.0, 0.7, 0.5))
        grad = 0.6 * yy + 0.4 * xx
        img = base[:, None, None] * (1 - grad) + other[:, None, None] * grad
        for _ in range(3):
            x0, y0 = rng.integers(0, max(1, r - 8), 2)
            w, h = rng.integers(6, max(7, r // 2), 2)
            img[:, y0:y0 + h, x0:x0 + w] = rng.random(3)[:, None, None]
        cy, cx = rng.integers(r // 4, 3 * r // 4, 2)
        rad = int(rng.integers(max(2, r // 8), max(3, r // 4)))
        mask = (grid_y - cy) ** 2 + (grid_x - cx) ** 2 <= rad * rad
        img[:, mask] = rng.random(3)[:, None]
        # sub-Nyquist plaid patch: sharp block edges that bilinear upsampling
        # of the degraded copy smears, but coarse enough for an
        # upsample-and-convolve synthesis stack to paint
        px, py = rng.integers(0, max(1, r // 2), 2)
        ps = max(4, r // 4)
        cell = max(2, r // 16)
        cells = (np.add.outer(np.arange(ps) // cell, np.arange(ps) // cell) % 2).astype(float)
        img[:, py:py + ps, px:px + ps] = 0.25 + 0.5 * cells[None]
        images.append(np.clip(img, 0.0, 1.0).astype(np.float32))
    return images


def tiny_config(resolution: int = 16, noise_mode: str = "concat") -> GeneratorConfig:
    """Small architecture for fast structural tests."""
    return GeneratorConfig(
        resolution=resolution,
        latent_dim=16,
        mapping_depth=2,
        channel_base=64,
        channel_max=8,
        noise_mode=noise_mode,
    )


def overfit_config(noise_mode: str = "concat") -> GeneratorConfig:
    """The R=64 architecture used by the memorization experiments."""
    return GeneratorConfig(
        resolution=64,
        latent_dim=64,
        mapping_depth=4,
        channel_base=1024,
        channel_max=64,
        noise_mode=noise_mode,
    )
