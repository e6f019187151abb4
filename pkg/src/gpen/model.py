"""The full restorer: pretrained prior decoder driven by a fresh encoder.

``embed_prior`` loads a pretrained generator checkpoint, keeps its weights
as the decoder (mapping network included), and attaches a newly initialised
encoder.  The encoder's latent goes through the pretrained mapping network
(or is used as the style directly, per config) and its feature pyramid
replaces the generator's noise maps.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .checkpoint import (
    IncompatibleCheckpointError,
    read_checkpoint,
    write_checkpoint,
)
from .config import GeneratorConfig, config_to_dict, generator_config_from_dict
from .encoder import Encoder, resize_input_t
from .generator import Generator
from .image_io import load_image
from .losses import Discriminator

# architecture fields that must agree between a prior and the model built on it
_ARCH_FIELDS = (
    "resolution", "latent_dim", "mapping_depth",
    "channel_base", "channel_max", "noise_mode",
)


class GPEN(nn.Module):
    """Encoder + embedded prior generator, usable as a plain torch module."""

    def __init__(self, config: GeneratorConfig, encoder: Encoder,
                 generator: Generator, discriminator: Discriminator | None = None):
        super().__init__()
        self.config = config
        self.encoder = encoder
        self.generator = generator
        self.discriminator = discriminator

    @property
    def resolution(self):
        return self.config.resolution

    def forward(self, x, clamp=True):
        latent, pyramid = self.encoder(x)
        if self.config.encoder_latent_space == "z":
            w = self.generator.mapping(latent)
        else:
            w = latent
        return self.generator(w, pyramid if pyramid else None, clamp=clamp)

    def restore(self, image: np.ndarray) -> np.ndarray:
        """Restore one float (3, H, W) image; output is (3, R, R) in [0, 1]."""
        if image.ndim != 3 or image.shape[0] != 3:
            raise ValueError(f"expected a (3, H, W) image, got shape {image.shape}")
        t = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32))[None]
        with torch.no_grad():
            out = self(resize_input_t(t, self.resolution))
        return out[0].numpy().astype(np.float32)


@dataclass
class RestoreResult:
    """Per-item outcome of restore_batch: an image or an error message."""

    index: int
    image: np.ndarray | None
    error: str | None = None


def _restore_one(model: GPEN, index: int, item) -> RestoreResult:
    try:
        image = load_image(item) if isinstance(item, (str, Path)) else item
        return RestoreResult(index, model.restore(image))
    except Exception as exc:  # noqa: BLE001 - batch keeps going per item
        return RestoreResult(index, None, error=f"{type(exc).__name__}: {exc}")

def restore_batch(model: GPEN, items, workers: int = 1) -> list[RestoreResult]:
    """Restore a list of images or paths, preserving input order.

    The model is only read, never written, so results are identical whether
    items run sequentially or on a thread pool.  A failing item produces an
    error record; the rest of the batch still completes.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [_restore_one(model, i, item) for i, item in enumerate(items)]
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda pair: _restore_one(model, *pair), enumerate(items)))


@dataclass
class ModelBundle:
    """A checkpoint's contents, reconstructed as live modules."""

    kind: str  # "prior" | "gpen"
    config: GeneratorConfig
    step: int
    seed: int
    generator: Generator
    discriminator: Discriminator | None = None
    encoder: Encoder | None = None

    def gpen(self) -> GPEN:
        if self.encoder is None:
            raise IncompatibleCheckpointError(
                f"checkpoint of kind {self.kind!r} has no encoder; expected a full model"
            )
        return GPEN(self.config, self.encoder, self.generator, self.discriminator)


def _module_tensors(prefix: str, module: nn.Module) -> dict[str, np.ndarray]:
    return {
        f"{prefix}.{name}": value.detach().cpu().numpy()
        for name, value in module.state_dict().items()
    }


def save_model(path, *, kind: str, config: GeneratorConfig, step: int, seed: int,
               generator: Generator, discriminator: Discriminator | None = None,
               encoder: Encoder | None = None) -> None:
    """Write modules plus their config into one checkpoint file."""
    tensors: dict[str, np.ndarray] = {}
    tensors.update(_module_tensors("generator", generator))
    if discriminator is not None:
        tensors.update(_module_tensors("discriminator", discriminator))
    if encoder is not None:
        tensors.update(_module_tensors("encoder", encoder))
    metadata = {f"config.{k}": v for k, v in config_to_dict(config).items()}
    metadata.update({"kind": kind, "step": str(step), "seed": str(seed)})
    write_checkpoint(path, tensors, metadata)


def _load_module(module: nn.Module, tensors: dict[str, np.ndarray], label: str) -> None:
    state = module.state_dict()
    problems = []
    for name, value in state.items():
        if name not in tensors:
            problems.append(f"missing {label}.{name} {tuple(value.shape)}")
        elif tuple(tensors[name].shape) != tuple(value.shape):
            problems.append(
                f"shape mismatch {label}.{name}: checkpoint "
                f"{tuple(tensors[name].shape)} vs model {tuple(value.shape)}"
            )
    for name in tensors:
        if name not in state:
            problems.append(f"unexpected {label}.{name} {tuple(tensors[name].shape)}")
    if problems:
        raise IncompatibleCheckpointError(
            f"checkpoint does not fit the {label}: " + "; ".join(problems)
        )
    module.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})


def load_model(path) -> ModelBundle:
    """Rebuild the modules stored in a checkpoint from its own metadata."""
    tensors, metadata = read_checkpoint(path)
    kind = metadata.get("kind")
    if kind not in ("prior", "gpen"):
        raise IncompatibleCheckpointError(f"unknown checkpoint kind {kind!r}")
    config = generator_config_from_dict(
        {k[len("config."):]: v for k, v in metadata.items() if k.startswith("config.")}
    )
    groups: dict[str, dict[str, np.ndarray]] = {}
    for name, value in tensors.items():
        prefix, _, rest = name.partition(".")
        groups.setdefault(prefix, {})[rest] = value
    generator = Generator(config)
    _load_module(generator, groups.get("generator", {}), "generator")
    discriminator = None
    if "discriminator" in groups:
        discriminator = Discriminator(config)
        _load_module(discriminator, groups["discriminator"], "discriminator")
    encoder = None
    if kind == "gpen":
        encoder = Encoder(config)
        _load_module(encoder, groups.get("encoder", {}), "encoder")
    return ModelBundle(
        kind=kind,
        config=config,
        step=int(metadata.get("step", "0")),
        seed=int(metadata.get("seed", "0")),
        generator=generator,
        discriminator=discriminator,
        encoder=encoder,
    )


def embed_prior(prior, config: GeneratorConfig | None = None, seed: int = 0,
                reinit_discriminator: bool = False) -> GPEN:
    """Build the full restorer around a pretrained prior checkpoint.

    ``prior`` is a checkpoint path or an already loaded ModelBundle.  When a
    config is given, its architecture fields must match the prior's; any
    difference is reported by name.  The encoder (and the discriminator, if
    the prior carries none or reinit is requested) is freshly initialised
    from ``seed``.
    """
    bundle = prior if isinstance(prior, ModelBundle) else load_model(prior)
    if bundle.kind != "prior":
        raise IncompatibleCheckpointError(
            f"expected a prior checkpoint, got kind {bundle.kind!r}"
        )
    if config is None:
        config = bundle.config
    else:
        config.validate()
        mismatches = [
            f"{name}: prior {getattr(bundle.config, name)!r} vs requested {getattr(config, name)!r}"
            for name in _ARCH_FIELDS
            if getattr(bundle.config, name) != getattr(config, name)
        ]
        if mismatches:
            raise IncompatibleCheckpointError(
                "prior does not match the requested architecture: " + "; ".join(mismatches)
            )
    torch.manual_seed(seed)
    encoder = Encoder(config)
    discriminator = bundle.discriminator
    if discriminator is None or reinit_discriminator:
        discriminator = Discriminator(config)
    return GPEN(config, encoder, bundle.generator, discriminator)
