"""Configuration dataclasses plus the flat ``key=value`` config-file format.

Config files are plain text, one ``key=value`` per line, ``#`` comments and
blank lines ignored.  Keys are dataclass field names; tuple-valued fields are
comma separated.  Command-line flags override file values, which override the
defaults below.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

NOISE_MODES = ("concat", "add", "none")
LATENT_SPACES = ("z", "w")


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass
class GeneratorConfig:
    """Architecture of the prior generator and of the encoder mirroring it.

    ``channel_base // resolution`` capped at ``channel_max`` gives the channel
    count of every feature resolution, so halving the resolution doubles the
    width until the cap.  ``noise_mode`` selects how per-resolution noise (or
    encoder features, during restoration) enters the generator: channelwise
    concatenation (default), projected addition, or not at all.
    """

    resolution: int = 64
    latent_dim: int = 512
    mapping_depth: int = 8
    channel_base: int = 8192
    channel_max: int = 128
    noise_mode: str = "concat"
    encoder_latent_space: str = "z"

    def validate(self) -> None:
        if not _is_power_of_two(self.resolution) or self.resolution < 8:
            raise ValueError(
                f"resolution must be a power of two >= 8, got {self.resolution}"
            )
        if self.latent_dim < 1:
            raise ValueError(f"latent_dim must be positive, got {self.latent_dim}")
        if self.mapping_depth < 1:
            raise ValueError(f"mapping_depth must be positive, got {self.mapping_depth}")
        if self.channel_base < 1 or self.channel_max < 1:
            raise ValueError("channel_base and channel_max must be positive")
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"noise_mode must be one of {NOISE_MODES}, got {self.noise_mode!r}")
        if self.encoder_latent_space not in LATENT_SPACES:
            raise ValueError(
                f"encoder_latent_space must be one of {LATENT_SPACES}, "
                f"got {self.encoder_latent_space!r}"
            )

    @property
    def num_levels(self) -> int:
        """Number of feature resolutions 4..R, i.e. log2(R) - 1 noise levels."""
        return int(math.log2(self.resolution)) - 1

    @property
    def num_blocks(self) -> int:
        """Number of upsampling blocks, log2(R) - 2."""
        return self.num_levels - 1

    def resolutions(self) -> list[int]:
        """Feature resolutions from 4 up to R inclusive."""
        return [4 * 2**i for i in range(self.num_levels)]

    def channels(self, resolution: int) -> int:
        return max(1, min(self.channel_max, self.channel_base // resolution))

    def noise_channels(self, resolution: int) -> int:
        """Channels of the injected map at a resolution (0 when noise is disabled)."""
        if self.noise_mode == "none":
            return 0
        return self.channels(resolution)


@dataclass
class DegradationConfig:
    """Sampling ranges for the synthetic degradation pipeline.

    ``sigma_range`` is additive noise std on the 0..255 scale, ``quality_range``
    the JPEG quality, both endpoints inclusive.  The degraded side length is
    drawn from ``degraded_side_range`` (default [5, max(6, R // 8)]) and the
    downscale factor is resolution / side.
    """

    resolution: int = 1024
    sigma_range: tuple[float, float] = (0.0, 25.0)
    quality_range: tuple[int, int] = (5, 50)
    degraded_side_range: tuple[int, int] | None = None
    gaussian_sigma_range: tuple[float, float] = (0.5, 8.0)
    motion_length_range: tuple[int, int] = (5, 21)
    gaussian_prob: float = 0.5

    def side_range(self) -> tuple[int, int]:
        if self.degraded_side_range is not None:
            return self.degraded_side_range
        return (5, max(6, self.resolution // 8))

    def validate(self) -> None:
        if self.resolution < 1:
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        lo, hi = self.sigma_range
        if not (0 <= lo <= hi):
            raise ValueError(f"invalid sigma_range {self.sigma_range}")
        qlo, qhi = self.quality_range
        if not (1 <= qlo <= qhi <= 100):
            raise ValueError(f"invalid quality_range {self.quality_range}")
        slo, shi = self.side_range()
        if not (1 <= slo <= shi <= self.resolution):
            raise ValueError(f"invalid degraded side range {(slo, shi)}")
        glo, ghi = self.gaussian_sigma_range
        if not (0 < glo <= ghi):
            raise ValueError(f"invalid gaussian_sigma_range {self.gaussian_sigma_range}")
        mlo, mhi = self.motion_length_range
        if not (1 <= mlo <= mhi):
            raise ValueError(f"invalid motion_length_range {self.motion_length_range}")
        if not any(n % 2 == 1 for n in range(mlo, mhi + 1)):
            raise ValueError("motion_length_range contains no odd length")
        if not (0.0 <= self.gaussian_prob <= 1.0):
            raise ValueError(f"gaussian_prob must be in [0, 1], got {self.gaussian_prob}")


@dataclass
class TrainConfig:
    """Optimization settings shared by pretraining and fine-tuning.

    Fine-tuning uses three Adam optimizers whose rates stand in the fixed
    ratio ``lr_ratio`` (encoder : decoder : discriminator) anchored at
    ``lr_encoder``; pretraining uses ``lr_pretrain`` for both networks.
    The R1 penalty applies only during pretraining and is charged lazily
    every ``r1_interval`` discriminator steps, scaled by the interval.
    """

    steps: int = 1000
    seed: int = 0
    batch_size: int = 1
    lr_encoder: float = 0.002
    lr_ratio: tuple[float, float, float] = (100.0, 10.0, 1.0)
    lr_pretrain: float = 0.002
    adam_betas: tuple[float, float] = (0.0, 0.99)
    adam_eps: float = 1e-8
    alpha: float = 1.0
    beta: float = 0.02
    freeze_encoder: bool = False
    freeze_decoder: bool = False
    freeze_discriminator: bool = False
    r1_enabled: bool = True
    r1_gamma: float = 10.0
    r1_interval: int = 16
    reinit_discriminator: bool = False
    fresh_degradations: bool = True
    checkpoint_every: int = 0

    @property
    def lr_decoder(self) -> float:
        return self.lr_encoder * self.lr_ratio[1] / self.lr_ratio[0]

    @property
    def lr_discriminator(self) -> float:
        return self.lr_encoder * self.lr_ratio[2] / self.lr_ratio[0]

    def learning_rates(self) -> tuple[float, float, float]:
        """Effective (encoder, decoder, discriminator) learning rates."""
        return (self.lr_encoder, self.lr_decoder, self.lr_discriminator)

    def validate(self) -> None:
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr_encoder < 0 or self.lr_pretrain < 0:
            raise ValueError("learning rates must be non-negative")
        if len(self.lr_ratio) != 3 or self.lr_ratio[0] <= 0:
            raise ValueError(f"invalid lr_ratio {self.lr_ratio}")
        if self.r1_interval < 1:
            raise ValueError(f"r1_interval must be >= 1, got {self.r1_interval}")


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key=value`` lines into a dict; '#' starts a comment."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def read_config_file(path) -> dict[str, str]:
    return parse_config_text(Path(path).read_text())


def _parse_value(raw: str, field: dataclasses.Field):
    ftype = str(field.type)
    if "tuple" in ftype:
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        if "None" in ftype and raw.strip().lower() in ("", "none"):
            return None
        if "int" in ftype:
            return tuple(int(p) for p in parts)
        return tuple(float(p) for p in parts)
    if "bool" in ftype:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean for {field.name}, got {raw!r}")
    if "int" in ftype:
        return int(raw)
    if "float" in ftype:
        return float(raw)
    return raw


def apply_config(values: dict[str, str], *configs) -> None:
    """Assign parsed values onto matching dataclass fields of each config.

    A key may name a field on more than one config (e.g. ``resolution``) and
    is applied to all of them.  Unknown keys raise ValueError.
    """
    field_maps = [
        {f.name: f for f in dataclasses.fields(cfg)} for cfg in configs
    ]
    for key, raw in values.items():
        hit = False
        for cfg, fields in zip(configs, field_maps):
            if key in fields:
                setattr(cfg, key, _parse_value(raw, fields[key]))
                hit = True
        if not hit:
            raise ValueError(f"unknown config key {key!r}")


def config_to_dict(cfg) -> dict[str, str]:
    """Serialize a config dataclass to flat string values (config-file syntax)."""
    out: dict[str, str] = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if value is None:
            out[f.name] = "none"
        elif isinstance(value, tuple):
            out[f.name] = ",".join(repr(v) for v in value)
        elif isinstance(value, bool):
            out[f.name] = "true" if value else "false"
        elif isinstance(value, float):
            out[f.name] = repr(value)
        else:
            out[f.name] = str(value)
    return out


def generator_config_from_dict(values: dict[str, str]) -> GeneratorConfig:
    """Rebuild a GeneratorConfig from serialized values (extra keys ignored)."""
    cfg = GeneratorConfig()
    fields = {f.name: f for f in dataclasses.fields(GeneratorConfig)}
    for key, raw in values.items():
        if key in fields:
            setattr(cfg, key, _parse_value(raw, fields[key]))
    cfg.validate()
    return cfg
