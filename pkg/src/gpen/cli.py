"""Command-line interface.

Subcommands: degrade, pretrain, finetune, restore, eval, selftest.  Exit
codes: 0 success, 2 invalid arguments or configuration, 1 runtime failure
(unreadable data, incompatible checkpoints, diverged training).  Every
command is deterministic given --seed; the GPEN_SEED environment variable
supplies the default seed.  Flat key=value --config files are applied before
explicit flags, which win.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .checkpoint import CheckpointFormatError, IncompatibleCheckpointError
from .config import (
    DegradationConfig,
    GeneratorConfig,
    TrainConfig,
    apply_config,
    read_config_file,
)
from .degradation import DegradationCodecError, list_images, make_pairs
from .image_io import save_image
from .metrics import evaluate, write_report
from .model import load_model, restore_batch
from .selftest import FAULTS, run_selftest
from .training import TrainingDivergedError, finetune_gpen, pretrain_gan

log = logging.getLogger("gpen")


def _default_seed() -> int:
    try:
        return int(os.environ.get("GPEN_SEED", "0"))
    except ValueError:
        return 0


def _add_common(parser):
    parser.add_argument("--seed", type=int, default=_default_seed(),
                        help="run seed (default: GPEN_SEED env var or 0)")
    parser.add_argument("--config", type=Path, default=None,
                        help="flat key=value config file; flags override it")
    parser.add_argument("--single-thread", action="store_true",
                        help="pin torch to one thread for bit-reproducibility")
    parser.add_argument("--verbose", action="store_true", help="debug logging")


def _load_configs(args, resolution=None):
    """Defaults -> config file -> explicit flags, in that order."""
    gen = GeneratorConfig()
    deg = DegradationConfig()
    train = TrainConfig()
    if args.config is not None:
        apply_config(read_config_file(args.config), gen, deg, train)
    if resolution is not None:
        gen.resolution = resolution
        deg.resolution = resolution
    else:
        deg.resolution = gen.resolution
    train.seed = args.seed
    return gen, deg, train


def _figure_path(args, default):
    if args.no_figure:
        return None
    return args.figure if args.figure is not None else default


def _maybe_training_figure(log_path, figure_path):
    if figure_path is None or log_path is None:
        return
    from .plotting import save_training_figure

    save_training_figure(log_path, figure_path)
    log.info("wrote figure %s", figure_path)


def cmd_degrade(args) -> int:
    gen, deg, _ = _load_configs(args, args.res)
    manifest = make_pairs(args.input, args.output, deg, args.seed)
    print(manifest)
    return 0


def cmd_pretrain(args) -> int:
    gen, _, train = _load_configs(args, args.res)
    if args.noise_mode:
        gen.noise_mode = args.noise_mode
    train.steps = args.steps
    if args.checkpoint_every is not None:
        train.checkpoint_every = args.checkpoint_every
    gen.validate()
    log_path = args.log if args.log is not None else Path(str(args.out) + ".log")
    result = pretrain_gan(args.data, gen, train, args.out, log_path=log_path)
    _maybe_training_figure(log_path, _figure_path(args, Path(str(args.out) + ".losses.png")))
    if result.records:
        last = result.records[-1]
        log.info("step %d: d_loss=%.4f g_loss=%.4f", last.step, last.d_loss, last.g_loss)
    print(result.checkpoint)
    return 0


def cmd_finetune(args) -> int:
    _, _, train = _load_configs(args)
    train.steps = args.steps
    train.freeze_encoder = args.freeze_encoder
    train.freeze_decoder = args.freeze_decoder
    train.freeze_discriminator = args.freeze_discriminator
    train.reinit_discriminator = args.reinit_discriminator
    if args.checkpoint_every is not None:
        train.checkpoint_every = args.checkpoint_every
    log_path = args.log if args.log is not None else Path(str(args.out) + ".log")
    result = finetune_gpen(args.pairs, args.prior, train, args.out,
                           log_path=log_path, expected_noise_mode=args.noise_mode)
    _maybe_training_figure(log_path, _figure_path(args, Path(str(args.out) + ".losses.png")))
    if result.records:
        last = result.records[-1]
        log.info("step %d: l_a=%.4f l_c=%.4f l_f=%.4f total=%.4f",
                 last.step, last.l_a, last.l_c, last.l_f, last.total)
    print(result.checkpoint)
    return 0


def cmd_restore(args) -> int:
    bundle = load_model(args.model)
    model = bundle.gpen()
    inputs = [args.input] if args.input.is_file() else list_images(args.input)
    if not inputs:
        raise ValueError(f"no images found at {args.input}")
    results = restore_batch(model, inputs, workers=args.workers)
    out_dir = Path(args.output)
    ok = 0
    for item, result in zip(inputs, results):
        if result.error is not None:
            log.warning("failed to restore %s: %s", item, result.error)
            continue
        out_path = out_dir / f"{Path(item).stem}.png"
        save_image(result.image, out_path)
        ok += 1
        print(out_path)
    if ok == 0:
        raise RuntimeError("no image could be restored")
    return 0


def cmd_eval(args) -> int:
    bundle = load_model(args.model)
    model = bundle.gpen()
    plugins = {}
    for spec_arg in args.metric or []:
        if "=" not in spec_arg:
            raise ValueError(f"--metric wants NAME=COMMAND, got {spec_arg!r}")
        name, command = spec_arg.split("=", 1)
        plugins[name.strip()] = command
    report = evaluate(model, args.pairs, plugins)
    write_report(report, args.report)
    figure = _figure_path(args, Path(str(args.report) + ".png"))
    if figure is not None:
        from .plotting import save_eval_figure

        save_eval_figure(report, figure)
        log.info("wrote figure %s", figure)
    print(f"n={report.count} mean_psnr_model={report.mean_model:.4f} "
          f"mean_psnr_baseline={report.mean_baseline:.4f}")
    return 0


def cmd_selftest(args) -> int:
    results = run_selftest(fault=args.inject_fault)
    failed = [name for name, error in results if error is not None]
    for name, error in results:
        print(f"check {name} ... {'ok' if error is None else 'FAIL (' + error + ')'}")
    if failed:
        print(f"selftest failed: {', '.join(failed)}")
        return 1
    print(f"selftest passed ({len(results)} checks)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpen",
        description="Blind face restoration with a GAN prior embedded in a U-shaped network.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("degrade", help="synthesise degraded/clean training pairs")
    p.add_argument("--input", type=Path, required=True, help="directory of clean images")
    p.add_argument("--output", type=Path, required=True, help="output dataset directory")
    p.add_argument("--res", type=int, default=None, help="working resolution")
    _add_common(p)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("pretrain", help="adversarially pretrain the prior generator")
    p.add_argument("--data", type=Path, required=True, help="directory of clean images")
    p.add_argument("--res", type=int, default=None, help="output resolution (power of two)")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--out", type=Path, required=True, help="checkpoint path to write")
    p.add_argument("--noise-mode", choices=("concat", "add", "none"), default=None)
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.add_argument("--log", type=Path, default=None, help="training log (default <out>.log)")
    p.add_argument("--figure", type=Path, default=None)
    p.add_argument("--no-figure", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune the full restorer on a paired manifest")
    p.add_argument("--pairs", type=Path, required=True, help="manifest from 'degrade'")
    p.add_argument("--prior", type=Path, required=True,
                   help="pretrained prior checkpoint, or a fine-tuned one to resume from")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--out", type=Path, required=True, help="checkpoint path to write")
    p.add_argument("--noise-mode", choices=("concat", "add", "none"), default=None,
                   help="must match the prior's mode; makes ablation runs explicit")
    p.add_argument("--freeze-encoder", action="store_true")
    p.add_argument("--freeze-decoder", action="store_true",
                   help="keep the embedded prior fixed (no-finetune ablation)")
    p.add_argument("--freeze-discriminator", action="store_true")
    p.add_argument("--reinit-discriminator", action="store_true",
                   help="start from a fresh discriminator instead of the pretrained one")
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.add_argument("--log", type=Path, default=None, help="training log (default <out>.log)")
    p.add_argument("--figure", type=Path, default=None)
    p.add_argument("--no-figure", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("restore", help="restore one image or a directory")
    p.add_argument("--model", type=Path, required=True, help="fine-tuned checkpoint")
    p.add_argument("--input", type=Path, required=True, help="image file or directory")
    p.add_argument("--output", type=Path, required=True, help="output directory")
    p.add_argument("--workers", type=int, default=1,
                   help="thread pool size (results identical to sequential)")
    _add_common(p)
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("eval", help="PSNR report against the bilinear baseline")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--pairs", type=Path, required=True, help="manifest from 'degrade'")
    p.add_argument("--report", type=Path, required=True, help="report path to write")
    p.add_argument("--metric", action="append", default=[],
                   help="NAME=COMMAND external metric on (restored, reference) files; repeatable")
    p.add_argument("--figure", type=Path, default=None)
    p.add_argument("--no-figure", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("selftest", help="run the fast self-check battery")
    p.add_argument("--inject-fault", choices=FAULTS, default=None,
                   help="test fixture: injects a known defect to prove detection")
    _add_common(p)
    p.set_defaults(func=cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.single_thread:
        import torch

        torch.set_num_threads(1)
    try:
        return args.func(args)
    except ValueError as exc:
        log.error("%s", exc)
        return 2
    except (CheckpointFormatError, IncompatibleCheckpointError,
            TrainingDivergedError, DegradationCodecError,
            RuntimeError, OSError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
