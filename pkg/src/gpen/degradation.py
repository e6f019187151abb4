"""Synthetic degradation of clean images into low-quality training inputs.

The pipeline applies, in order: blur with a sampled kernel, downscale by a
sampled factor, additive Gaussian noise (std on the 0..255 scale, then clamp
to [0, 1]), and an optional JPEG encode/decode round trip.  The output stays
at the degraded size; callers upsample it back to the working resolution.

Kernels are float64 arrays that sum to one.  All randomness flows through an
explicit numpy Generator so a (seed, item index) pair reproduces a pair of
files byte for byte.
"""

from __future__ import annotations

import dataclasses
import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .config import DegradationConfig, apply_config, config_to_dict
from .image_io import from_uint8, load_image, resize_image, save_image, to_uint8

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


class DegradationCodecError(RuntimeError):
    """The JPEG codec failed inside the degradation pipeline."""


# ---------------------------------------------------------------------------
# blur kernels


def gaussian_kernel(sigma_blur: float, size: int) -> np.ndarray:
    """Normalized isotropic Gaussian taps on an odd size x size grid."""
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be odd and positive, got {size}")
    if sigma_blur <= 0:
        raise ValueError(f"sigma_blur must be positive, got {sigma_blur}")
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2
    sq = ax[:, None] ** 2 + ax[None, :] ** 2
    taps = np.exp(-sq / (2.0 * sigma_blur * sigma_blur))
    return taps / taps.sum()


def gaussian_kernel_size(sigma_blur: float) -> int:
    """Odd side length covering about +-3 sigma of the Gaussian."""
    return 2 * math.ceil(3.0 * sigma_blur) + 1


def motion_kernel(length: int, angle: float, size: int) -> np.ndarray:
    """Normalized anti-aliased line segment through the kernel centre.

    The segment has total extent ``length`` pixels at ``angle`` radians; each
    tap gets weight max(0, 1 - distance to the segment).  length=1 degenerates
    to a centred delta regardless of angle.
    """
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be odd and positive, got {size}")
    if length < 1 or length > size:
        raise ValueError(f"motion length must be in [1, size], got {length}")
    half = (length - 1) / 2
    dx, dy = math.cos(angle), math.sin(angle)
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2
    py, px = np.meshgrid(ax, ax, indexing="ij")
    # distance from each tap centre to the closest point of the segment
    t = np.clip(px * dx + py * dy, -half, half)
    dist = np.hypot(px - t * dx, py - t * dy)
    taps = np.clip(1.0 - dist, 0.0, 1.0)
    return taps / taps.sum()


# ---------------------------------------------------------------------------
# pipeline stages


def convolve2d(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Convolve each channel with the kernel, reflect padding, same size.

    Reflect padding duplicates the border row/column, so a constant image
    stays constant.
    """
    if image.ndim != 3:
        raise ValueError(f"expected a (3, H, W) image, got shape {image.shape}")
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1] or kernel.shape[0] % 2 == 0:
        raise ValueError(f"kernel must be odd and square, got shape {kernel.shape}")
    if not np.isclose(kernel.sum(), 1.0, atol=1e-6):
        raise ValueError(f"kernel must sum to 1, got {kernel.sum()}")
    out = np.empty(image.shape, dtype=np.float64)
    for ch in range(image.shape[0]):
        out[ch] = ndimage.convolve(image[ch].astype(np.float64), kernel, mode="reflect")
    return out.astype(np.float32)


def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) matrix averaging each output cell's source interval."""
    w = np.zeros((n_out, n_in), dtype=np.float64)
    step = n_in / n_out
    for i in range(n_out):
        start, stop = i * step, (i + 1) * step
        j0, j1 = int(math.floor(start)), int(math.ceil(stop))
        for j in range(j0, min(j1, n_in)):
            w[i, j] = min(stop, j + 1) - max(start, j)
        w[i] /= w[i].sum()
    return w


def downsample(image: np.ndarray, scale: float) -> np.ndarray:
    """Area-average the image down by ``scale`` (>= 1).

    Output sides are max(1, round(side / scale)) with round-half-up; each
    output pixel is the mean of its source footprint, so constants are
    preserved and scale=1 is the identity.
    """
    if image.ndim != 3:
        raise ValueError(f"expected a (3, H, W) image, got shape {image.shape}")
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    if scale == 1:
        return image.copy()
    _, h, w = image.shape
    oh = max(1, int(h / scale + 0.5))
    ow = max(1, int(w / scale + 0.5))
    wy = _area_weights(h, oh)
    wx = _area_weights(w, ow)
    out = np.einsum("oh,chw,pw->cop", wy, image.astype(np.float64), wx)
    return out.astype(np.float32)


def add_gaussian_noise(image: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Add N(0, (sigma/255)^2) noise per element and clamp to [0, 1]."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    noise = rng.normal(0.0, sigma / 255.0, size=image.shape)
    return np.clip(image + noise, 0.0, 1.0).astype(np.float32)


def jpeg_roundtrip(image: np.ndarray, quality: int) -> np.ndarray:
    """Encode to JPEG at the given quality and decode back to float."""
    quality = int(quality)
    if not 1 <= quality <= 100:
        raise ValueError(f"JPEG quality must be in [1, 100], got {quality}")
    try:
        buf = io.BytesIO()
        PILImage.fromarray(to_uint8(image)).save(buf, format="JPEG", quality=quality)
        buf.seek(0)
        with PILImage.open(buf) as decoded:
            arr = np.asarray(decoded.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise DegradationCodecError(f"JPEG round trip failed: {exc}") from exc
    return from_uint8(arr)


# ---------------------------------------------------------------------------
# parameter sampling and the full pipeline


@dataclass
class DegradationParams:
    """One sampled degradation: kernel, downscale factor, noise std, quality.

    ``quality`` of None skips the JPEG stage.  The remaining fields record how
    the kernel was built so a manifest line can reproduce it.
    """

    kernel: np.ndarray
    kernel_kind: str  # "gaussian" | "motion"
    scale: float
    sigma: float
    quality: int | None
    sigma_blur: float | None = None
    length: int | None = None
    angle: float | None = None
    degraded_side: int | None = None

    @property
    def kernel_size(self) -> int:
        return self.kernel.shape[0]

    @classmethod
    def identity(cls) -> "DegradationParams":
        """No-op parameters: delta kernel, scale 1, no noise, no JPEG."""
        return cls(
            kernel=np.ones((1, 1), dtype=np.float64),
            kernel_kind="gaussian",
            scale=1.0,
            sigma=0.0,
            quality=None,
            sigma_blur=None,
        )


def sample_params(config: DegradationConfig, rng: np.random.Generator) -> DegradationParams:
    """Draw one set of degradation parameters from the configured ranges.

    Kernel kind is Bernoulli(gaussian_prob); Gaussian blur std and motion
    angle are uniform, motion length is a uniform odd integer, the degraded
    side length and JPEG quality are uniform integers (both ends inclusive).
    """
    config.validate()
    if rng.random() < config.gaussian_prob:
        sigma_blur = rng.uniform(*config.gaussian_sigma_range)
        size = gaussian_kernel_size(sigma_blur)
        kernel = gaussian_kernel(sigma_blur, size)
        kind, length, angle = "gaussian", None, None
    else:
        mlo, mhi = config.motion_length_range
        odd = [n for n in range(mlo, mhi + 1) if n % 2 == 1]
        length = int(odd[rng.integers(0, len(odd))])
        angle = float(rng.uniform(0.0, math.pi))
        kernel = motion_kernel(length, angle, length + 2)
        kind, sigma_blur = "motion", None
    slo, shi = config.side_range()
    side = int(rng.integers(slo, shi + 1))
    qlo, qhi = config.quality_range
    return DegradationParams(
        kernel=kernel,
        kernel_kind=kind,
        scale=config.resolution / side,
        sigma=float(rng.uniform(*config.sigma_range)),
        quality=int(rng.integers(qlo, qhi + 1)),
        sigma_blur=sigma_blur,
        length=length,
        angle=angle,
        degraded_side=side,
    )


def degrade(image: np.ndarray, params: DegradationParams, rng: np.random.Generator) -> np.ndarray:
    """Run blur -> downsample -> noise -> JPEG; returns the small image."""
    out = convolve2d(image, params.kernel)
    out = downsample(out, params.scale)
    out = add_gaussian_noise(out, params.sigma, rng)
    if params.quality is not None:
        out = jpeg_roundtrip(out, params.quality)
    return out


# ---------------------------------------------------------------------------
# paired-dataset manifest


@dataclass
class PairRecord:
    """One manifest line: file paths plus the parameters that built the pair."""

    hq: str
    lq: str
    kernel_kind: str
    sigma_blur: float | None
    length: int | None
    angle: float | None
    kernel_size: int
    degraded_side: int
    scale: float
    sigma: float
    quality: int | None
    seed: int

    def params(self) -> DegradationParams:
        """Rebuild the degradation parameters recorded on this line."""
        if self.kernel_kind == "gaussian":
            kernel = gaussian_kernel(self.sigma_blur, self.kernel_size)
        else:
            kernel = motion_kernel(self.length, self.angle, self.kernel_size)
        return DegradationParams(
            kernel=kernel,
            kernel_kind=self.kernel_kind,
            scale=self.scale,
            sigma=self.sigma,
            quality=self.quality,
            sigma_blur=self.sigma_blur,
            length=self.length,
            angle=self.angle,
            degraded_side=self.degraded_side,
        )


_RECORD_FIELDS = (
    "hq", "lq", "kernel_kind", "sigma_blur", "length", "angle",
    "kernel_size", "degraded_side", "scale", "sigma", "quality", "seed",
)


def _format_field(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_manifest(path, records: list[PairRecord], config: DegradationConfig | None = None) -> None:
    """Write tab-separated key=value manifest lines, config echoed as comments."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    if config is not None:
        for key, value in sorted(config_to_dict(config).items()):
            lines.append(f"# {key}={value}")
    for rec in records:
        fields = [f"{name}={_format_field(getattr(rec, name))}" for name in _RECORD_FIELDS]
        lines.append("\t".join(fields))
    path.write_text("\n".join(lines) + "\n")


def read_manifest(path) -> tuple[list[PairRecord], DegradationConfig | None]:
    """Parse a manifest; paths are resolved relative to the manifest file."""
    path = Path(path)
    base = path.parent
    config_values: dict[str, str] = {}
    records: list[PairRecord] = []
    for raw in path.read_text().splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, value = body.split("=", 1)
                config_values[key.strip()] = value.strip()
            continue
        fields: dict[str, str] = {}
        for part in line.split("\t"):
            if "=" not in part:
                raise ValueError(f"bad manifest field {part!r}")
            key, value = part.split("=", 1)
            fields[key] = value
        def opt(name, cast):
            return None if fields[name] == "none" else cast(fields[name])
        records.append(
            PairRecord(
                hq=str((base / fields["hq"]).resolve()),
                lq=str((base / fields["lq"]).resolve()),
                kernel_kind=fields["kernel_kind"],
                sigma_blur=opt("sigma_blur", float),
                length=opt("length", int),
                angle=opt("angle", float),
                kernel_size=int(fields["kernel_size"]),
                degraded_side=int(fields["degraded_side"]),
                scale=float(fields["scale"]),
                sigma=float(fields["sigma"]),
                quality=opt("quality", int),
                seed=int(fields["seed"]),
            )
        )
    config = None
    if config_values:
        config = DegradationConfig()
        known = {f.name for f in dataclasses.fields(DegradationConfig)}
        apply_config({k: v for k, v in config_values.items() if k in known}, config)
    return records, config


def derive_item_seed(seed: int, index: int) -> int:
    """Stable per-item seed from the run seed and the item's position."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])


def item_rng(item_seed: int, draw: int = 0) -> np.random.Generator:
    """Generator for the ``draw``-th fresh degradation of one item."""
    return np.random.default_rng(np.random.SeedSequence([item_seed, draw]))


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise ValueError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def make_pairs(hq_dir, out_dir, config: DegradationConfig, seed: int) -> Path:
    """Degrade every image under ``hq_dir`` and write an ``out_dir`` dataset.

    Layout: out_dir/hq/NNNN_stem.png (source, resampled to the working
    resolution if needed), out_dir/lq/NNNN_stem.png, and out_dir/manifest.txt.
    Unreadable files are skipped with a warning; an empty directory is an
    error.  Re-running with the same seed reproduces every file byte for byte.
    """
    config.validate()
    paths = list_images(hq_dir)
    if not paths:
        raise ValueError(f"no images found in {hq_dir}")
    out_dir = Path(out_dir)
    records: list[PairRecord] = []
    for index, src in enumerate(paths):
        try:
            image = load_image(src)
        except (OSError, ValueError) as exc:
            log.warning("skipping unreadable image %s: %s", src, exc)
            continue
        if image.shape[1] != config.resolution or image.shape[2] != config.resolution:
            image = resize_image(image, config.resolution, config.resolution)
        item_seed = derive_item_seed(seed, index)
        rng = item_rng(item_seed, draw=0)
        params = sample_params(config, rng)
        low = degrade(image, params, rng)
        name = f"{index:04d}_{src.stem}.png"
        save_image(image, out_dir / "hq" / name)
        save_image(low, out_dir / "lq" / name)
        records.append(
            PairRecord(
                hq=f"hq/{name}",
                lq=f"lq/{name}",
                kernel_kind=params.kernel_kind,
                sigma_blur=params.sigma_blur,
                length=params.length,
                angle=params.angle,
                kernel_size=params.kernel_size,
                degraded_side=params.degraded_side,
                scale=params.scale,
                sigma=params.sigma,
                quality=params.quality,
                seed=item_seed,
            )
        )
    if not records:
        raise ValueError(f"no readable images in {hq_dir}")
    manifest = out_dir / "manifest.txt"
    write_manifest(manifest, records, config)
    return manifest


def fresh_pair(record: PairRecord, hq_image: np.ndarray, config: DegradationConfig, draw: int) -> np.ndarray:
    """Resample parameters and noise for one item (fine-tuning draw ``draw``).

    draw 0 reproduces the manifest's LQ image; higher draws give new
    degradations from the same per-item seed stream.
    """
    rng = item_rng(record.seed, draw)
    params = sample_params(config, rng)
    return degrade(hq_image, params, rng)
