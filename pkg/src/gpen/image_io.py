"""Image I/O helpers.

Everywhere in this package an image is a float32 numpy array of shape
(3, H, W) with values in [0, 1].  PIL handles the actual codecs; files are
written as 8-bit PNG or JPEG depending on the suffix.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image as PILImage


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Quantize a (3, H, W) float image in [0, 1] to an (H, W, 3) uint8 array."""
    arr = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    return arr.transpose(1, 2, 0)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    """Lift an (H, W, 3) uint8 array to a (3, H, W) float32 image in [0, 1]."""
    return arr.transpose(2, 0, 1).astype(np.float32) / 255.0


def load_image(path) -> np.ndarray:
    """Read an image file as float32 (3, H, W) in [0, 1]; grayscale is promoted to RGB."""
    with PILImage.open(path) as img:
        return from_uint8(np.asarray(img.convert("RGB")))


def save_image(image: np.ndarray, path) -> None:
    """Write a float image to disk as 8-bit PNG/JPEG (by suffix), creating parent dirs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(to_uint8(image)).save(path)


def resize_image(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resample a float image to (height, width) with PIL's bilinear filter.

    Used only for data preparation (bringing source images to the training
    resolution).  Model inputs go through encoder.resize_input instead.
    """
    pil = PILImage.fromarray(to_uint8(image))
    return from_uint8(np.asarray(pil.resize((width, height), PILImage.BILINEAR)))
