"""Two-phase optimization: adversarial pretraining, then paired fine-tuning.

Pretraining fits the prior generator and the discriminator on clean images
alone, sampling latents and noise each step.  Fine-tuning embeds the prior
behind a fresh encoder and optimizes encoder, decoder and discriminator with
separate Adam instances whose learning rates stand in a fixed ratio.  By
default each fine-tuning step degrades its clean image anew from the item's
seed stream, so the model never sees the same corruption twice.

Training logs are tab-separated with full-precision (repr) floats so the
logged total can be recomputed exactly from the logged components.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import IncompatibleCheckpointError
from .config import DegradationConfig, GeneratorConfig, TrainConfig
from .degradation import fresh_pair, list_images, read_manifest
from .encoder import resize_input_t
from .generator import Generator
from .image_io import load_image, resize_image
from .losses import (
    Discriminator,
    LossWeights,
    adversarial_loss_d,
    adversarial_loss_g,
    content_loss,
    feature_matching_loss,
    r1_penalty,
    total_loss,
)
from .model import GPEN, embed_prior, load_model, save_model

log = logging.getLogger(__name__)

PRETRAIN_COLUMNS = ("step", "d_loss", "g_loss", "r1")
FINETUNE_COLUMNS = ("step", "l_a", "l_c", "l_f", "total")


class TrainingDivergedError(RuntimeError):
    """A loss went non-finite; a diagnostic checkpoint was written."""


@dataclass
class PretrainRecord:
    step: int
    d_loss: float
    g_loss: float
    r1: float | None = None


@dataclass
class FinetuneRecord:
    step: int
    l_a: float
    l_c: float
    l_f: float
    total: float


@dataclass
class PretrainResult:
    checkpoint: Path
    generator: Generator
    discriminator: Discriminator
    records: list


@dataclass
class FinetuneResult:
    checkpoint: Path
    model: GPEN
    records: list


def _make_adam(params, lr: float, config: TrainConfig):
    betas = (float(config.adam_betas[0]), float(config.adam_betas[1]))
    return torch.optim.Adam(params, lr=lr, betas=betas, eps=config.adam_eps)


def _to_tensor(image: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32))


def load_training_images(directory, resolution: int) -> list[np.ndarray]:
    """Load every readable image in a directory at the working resolution."""
    images = []
    for path in list_images(directory):
        try:
            image = load_image(path)
        except (OSError, ValueError) as exc:
            log.warning("skipping unreadable image %s: %s", path, exc)
            continue
        if image.shape[1] != resolution or image.shape[2] != resolution:
            image = resize_image(image, resolution, resolution)
        images.append(image)
    if not images:
        raise ValueError(f"no readable training images in {directory}")
    return images


def _format_value(value) -> str:
    return "none" if value is None else repr(value)


class _TrainLog:
    """Tab-separated training log writer; no-op when path is None."""

    def __init__(self, path, columns):
        self.path = Path(path) if path else None
        self.fh = None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.fh = open(self.path, "w")
            self.fh.write("# " + "\t".join(columns) + "\n")

    def write(self, *values):
        if self.fh:
            self.fh.write("\t".join(_format_value(v) for v in values) + "\n")

    def close(self):
        if self.fh:
            self.fh.close()
            self.fh = None


def read_training_log(path) -> tuple[list[str], list[list[float | None]]]:
    """Parse a training log into (column names, rows); 'none' becomes None."""
    columns: list[str] = []
    rows: list[list[float | None]] = []
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if not columns:
                columns = line[1:].split()
            continue
        rows.append([None if f == "none" else float(f) for f in line.split("\t")])
    return columns, rows


def _check_finite(values: dict[str, float], out_path, save_diag) -> None:
    bad = [name for name, value in values.items() if not math.isfinite(value)]
    if bad:
        diag = Path(str(out_path) + ".diverged")
        save_diag(diag)
        raise TrainingDivergedError(
            f"non-finite loss ({', '.join(bad)}); diagnostic checkpoint at {diag}"
        )


def pretrain_gan(hq_dir, gen_config: GeneratorConfig, train_config: TrainConfig,
                 out_path, log_path=None) -> PretrainResult:
    """Adversarially pretrain the prior generator on clean images.

    With ``steps=0`` the written checkpoint is exactly the seeded
    initialization.  The discriminator is saved alongside the generator so
    fine-tuning can start from it.
    """
    gen_config.validate()
    train_config.validate()
    out_path = Path(out_path)
    torch.manual_seed(train_config.seed)
    generator = Generator(gen_config)
    discriminator = Discriminator(gen_config)
    images = load_training_images(hq_dir, gen_config.resolution)
    tensors = [_to_tensor(img) for img in images]
    sample_rng = torch.Generator().manual_seed(train_config.seed)
    opt_g = _make_adam(generator.parameters(), train_config.lr_pretrain, train_config)
    opt_d = _make_adam(discriminator.parameters(), train_config.lr_pretrain, train_config)
    batch = train_config.batch_size

    def save(path, step):
        save_model(path, kind="prior", config=gen_config, step=step,
                   seed=train_config.seed, generator=generator,
                   discriminator=discriminator)

    records: list[PretrainRecord] = []
    train_log = _TrainLog(log_path, PRETRAIN_COLUMNS)
    try:
        for step in range(1, train_config.steps + 1):
            idx = torch.randint(len(tensors), (batch,), generator=sample_rng)
            real = torch.stack([tensors[int(i)] for i in idx])

            # discriminator phase: fresh fake, optional lazy R1
            with torch.no_grad():
                fake = generator.sample(sample_rng, batch, clamp=False)
            loss_d = adversarial_loss_d(discriminator(real).score,
                                        discriminator(fake).score)
            r1_value = None
            if train_config.r1_enabled and step % train_config.r1_interval == 0:
                penalty = r1_penalty(discriminator, real)
                r1_value = float(penalty.detach())
                loss_d = loss_d + (train_config.r1_gamma / 2.0) * penalty * train_config.r1_interval
            opt_d.zero_grad(set_to_none=True)
            loss_d.backward()
            opt_d.step()

            # generator phase
            fake = generator.sample(sample_rng, batch, clamp=False)
            loss_g = adversarial_loss_g(discriminator(fake).score)
            opt_g.zero_grad(set_to_none=True)
            loss_g.backward()
            opt_g.step()

            d_value, g_value = float(loss_d.detach()), float(loss_g.detach())
            _check_finite({"d_loss": d_value, "g_loss": g_value}, out_path,
                          lambda p: save(p, step))
            records.append(PretrainRecord(step, d_value, g_value, r1_value))
            train_log.write(step, d_value, g_value, r1_value)
            if train_config.checkpoint_every and step % train_config.checkpoint_every == 0:
                save(out_path, step)
    finally:
        train_log.close()
    save(out_path, train_config.steps)
    return PretrainResult(out_path, generator, discriminator, records)


def finetune_gpen(manifest_path, prior, train_config: TrainConfig, out_path,
                  log_path=None, deg_config: DegradationConfig | None = None,
                  expected_noise_mode: str | None = None) -> FinetuneResult:
    """Fine-tune the embedded prior on degraded/clean pairs from a manifest.

    Encoder, decoder (the embedded generator, mapping included) and
    discriminator each get their own Adam optimizer at the configured rate
    ratio.  Frozen parts are excluded from optimization entirely; with all
    three frozen the output checkpoint equals the input composition.

    ``prior`` may be a pretrained prior checkpoint (a fresh encoder is then
    attached) or a previously fine-tuned checkpoint, which resumes training
    from the saved encoder and decoder.
    """
    train_config.validate()
    out_path = Path(out_path)
    bundle = prior if not isinstance(prior, (str, Path)) else load_model(prior)
    if expected_noise_mode is not None and expected_noise_mode != bundle.config.noise_mode:
        raise IncompatibleCheckpointError(
            f"prior was pretrained with noise_mode={bundle.config.noise_mode!r}, "
            f"requested {expected_noise_mode!r}; pretrain a matching prior instead"
        )
    if bundle.kind == "gpen":
        # resuming a fine-tuned checkpoint: keep its encoder and decoder,
        # only the critic may be swapped for a fresh one
        model = bundle.gpen()
        if model.discriminator is None or train_config.reinit_discriminator:
            torch.manual_seed(train_config.seed)
            model.discriminator = Discriminator(bundle.config)
    else:
        model = embed_prior(bundle, seed=train_config.seed,
                            reinit_discriminator=train_config.reinit_discriminator)
    config = model.config
    resolution = config.resolution

    pairs, manifest_deg = read_manifest(manifest_path)
    if not pairs:
        raise ValueError(f"manifest {manifest_path} lists no pairs")
    if deg_config is None:
        deg_config = manifest_deg or DegradationConfig(resolution=resolution)
    deg_config = dataclasses.replace(deg_config, resolution=resolution)
    deg_config.validate()

    hq_images: list[np.ndarray] = []
    lq_images: list[np.ndarray] = []
    for rec in pairs:
        hq = load_image(rec.hq)
        if hq.shape[1] != resolution or hq.shape[2] != resolution:
            hq = resize_image(hq, resolution, resolution)
        hq_images.append(hq)
        lq_images.append(load_image(rec.lq))

    model.encoder.requires_grad_(not train_config.freeze_encoder)
    model.generator.requires_grad_(not train_config.freeze_decoder)
    model.discriminator.requires_grad_(not train_config.freeze_discriminator)

    gen_opts = []
    if not train_config.freeze_encoder:
        gen_opts.append(_make_adam(model.encoder.parameters(),
                                   train_config.lr_encoder, train_config))
    if not train_config.freeze_decoder:
        gen_opts.append(_make_adam(model.generator.parameters(),
                                   train_config.lr_decoder, train_config))
    opt_d = None
    if not train_config.freeze_discriminator:
        opt_d = _make_adam(model.discriminator.parameters(),
                           train_config.lr_discriminator, train_config)

    weights = LossWeights(train_config.alpha, train_config.beta)
    sample_rng = torch.Generator().manual_seed(train_config.seed)
    draws = [0] * len(pairs)
    batch = train_config.batch_size
    discriminator = model.discriminator

    def save(path, step):
        save_model(path, kind="gpen", config=config, step=step,
                   seed=train_config.seed, generator=model.generator,
                   discriminator=discriminator, encoder=model.encoder)

    records: list[FinetuneRecord] = []
    train_log = _TrainLog(log_path, FINETUNE_COLUMNS)
    try:
        for step in range(1, train_config.steps + 1):
            idx = [int(i) for i in torch.randint(len(pairs), (batch,), generator=sample_rng)]
            hq_batch, lq_batch = [], []
            for i in idx:
                hq_batch.append(_to_tensor(hq_images[i]))
                if train_config.fresh_degradations:
                    draws[i] += 1
                    lq = fresh_pair(pairs[i], hq_images[i], deg_config, draws[i])
                else:
                    lq = lq_images[i]
                lq_batch.append(resize_input_t(_to_tensor(lq)[None], resolution)[0])
            hq_t = torch.stack(hq_batch)
            lq_t = torch.stack(lq_batch)

            restored = model(lq_t, clamp=False)

            if opt_d is not None:
                loss_d = adversarial_loss_d(discriminator(hq_t).score,
                                            discriminator(restored.detach()).score)
                opt_d.zero_grad(set_to_none=True)
                loss_d.backward()
                opt_d.step()

            fake_out = discriminator(restored)
            with torch.no_grad():
                real_features = discriminator(hq_t).features
            l_a = adversarial_loss_g(fake_out.score)
            l_c = content_loss(restored, hq_t)
            l_f = feature_matching_loss(real_features, fake_out.features)
            if gen_opts:
                loss = total_loss(l_a, l_c, l_f, weights)
                for opt in gen_opts:
                    opt.zero_grad(set_to_none=True)
                loss.backward()
                for opt in gen_opts:
                    opt.step()

            fa, fc, ff = float(l_a.detach()), float(l_c.detach()), float(l_f.detach())
            # recompute the total from the logged components so the log is
            # exactly reproducible from its own columns
            ft = float(total_loss(fa, fc, ff, weights))
            _check_finite({"l_a": fa, "l_c": fc, "l_f": ff}, out_path,
                          lambda p: save(p, step))
            records.append(FinetuneRecord(step, fa, fc, ff, ft))
            train_log.write(step, fa, fc, ff, ft)
            if train_config.checkpoint_every and step % train_config.checkpoint_every == 0:
                save(out_path, step)
    finally:
        train_log.close()
    save(out_path, train_config.steps)
    return FinetuneResult(out_path, model, records)
