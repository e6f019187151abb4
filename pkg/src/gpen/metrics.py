"""PSNR and the evaluation report over a paired manifest.

The report is tab-separated: a header line, one row per pair, then
'#'-prefixed summary lines with the means and the pair count.  Every model
is compared against the bilinear-upsampling baseline on the same pairs.
Additional metrics plug in as external commands that receive two image
paths and print a number; a failing plug-in drops its column with a warning
instead of failing the evaluation.
"""

from __future__ import annotations

import logging
import math
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .degradation import read_manifest
from .encoder import resize_input
from .image_io import load_image, save_image

log = logging.getLogger(__name__)

PSNR_CAP_DB = 100.0


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1].

    -10 * log10(mean squared error), capped at 100 dB (identical images hit
    the cap exactly).
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, -10.0 * math.log10(mse))


def run_metric_plugin(command: str, restored_path, reference_path,
                      timeout: float = 120.0) -> float:
    """Run an external metric command on two image files, parse one float."""
    argv = shlex.split(command) + [str(restored_path), str(reference_path)]
    proc = subprocess.run(argv, capture_output=True, text=True, timeout=timeout)
    if proc.returncode != 0:
        raise RuntimeError(
            f"metric command {command!r} exited {proc.returncode}: {proc.stderr.strip()}"
        )
    for token in proc.stdout.split():
        try:
            return float(token)
        except ValueError:
            continue
    raise RuntimeError(f"metric command {command!r} printed no number: {proc.stdout!r}")


@dataclass
class PairEval:
    pair_id: str
    psnr_model: float | None = None
    psnr_baseline: float | None = None
    extras: dict = field(default_factory=dict)
    error: str | None = None


@dataclass
class EvalReport:
    rows: list
    plugin_names: list
    mean_model: float = float("nan")
    mean_baseline: float = float("nan")
    extra_means: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return sum(1 for row in self.rows if row.error is None)


def evaluate(model, manifest_path, plugins: dict[str, str] | None = None) -> EvalReport:
    """Score a restorer against the bilinear baseline on every manifest pair.

    ``model`` only needs ``restore(image) -> image`` and ``resolution``.
    Unreadable pairs produce error rows but do not stop the run.
    """
    pairs, _ = read_manifest(manifest_path)
    if not pairs:
        raise ValueError(f"manifest {manifest_path} lists no pairs")
    plugins = dict(plugins or {})
    failed_plugins: set[str] = set()
    rows: list[PairEval] = []
    with tempfile.TemporaryDirectory(prefix="gpen-eval-") as tmp:
        tmp = Path(tmp)
        for index, rec in enumerate(pairs):
            pair_id = Path(rec.hq).stem
            try:
                hq = load_image(rec.hq)
                lq = load_image(rec.lq)
                restored = model.restore(lq)
                if hq.shape != restored.shape:
                    hq = resize_input(hq, restored.shape[-1])
                baseline = resize_input(lq, restored.shape[-1])
            except Exception as exc:  # noqa: BLE001 - per-pair error rows
                rows.append(PairEval(pair_id, error=f"{type(exc).__name__}: {exc}"))
                log.warning("pair %s failed: %s", pair_id, exc)
                continue
            row = PairEval(pair_id, psnr(restored, hq), psnr(baseline, hq))
            for name, command in plugins.items():
                if name in failed_plugins:
                    continue
                restored_png = tmp / f"{index:04d}_restored.png"
                reference_png = tmp / f"{index:04d}_reference.png"
                save_image(restored, restored_png)
                save_image(hq, reference_png)
                try:
                    row.extras[name] = run_metric_plugin(command, restored_png, reference_png)
                except Exception as exc:  # noqa: BLE001 - plug-ins are optional
                    failed_plugins.add(name)
                    log.warning("metric plug-in %r failed, dropping its column: %s",
                                name, exc)
            rows.append(row)
    plugin_names = sorted(set(plugins) - failed_plugins)
    for row in rows:
        row.extras = {k: v for k, v in row.extras.items() if k in plugin_names}
    report = EvalReport(rows, plugin_names)
    scored = [row for row in rows if row.error is None]
    if scored:
        report.mean_model = float(np.mean([row.psnr_model for row in scored]))
        report.mean_baseline = float(np.mean([row.psnr_baseline for row in scored]))
        for name in plugin_names:
            values = [row.extras[name] for row in scored if name in row.extras]
            if values:
                report.extra_means[name] = float(np.mean(values))
    return report


def write_report(report: EvalReport, path) -> Path:
    """Write the tab-separated report with '#' summary lines; returns path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = ["pair_id", "psnr_model", "psnr_baseline", *report.plugin_names]
    lines = ["\t".join(columns)]
    for row in report.rows:
        if row.error is not None:
            continue
        fields = [row.pair_id, repr(row.psnr_model), repr(row.psnr_baseline)]
        fields += [repr(row.extras[name]) if name in row.extras else "none"
                   for name in report.plugin_names]
        lines.append("\t".join(fields))
    lines.append(f"# n={report.count}")
    lines.append(f"# mean_psnr_model={report.mean_model!r}")
    lines.append(f"# mean_psnr_baseline={report.mean_baseline!r}")
    for name, value in sorted(report.extra_means.items()):
        lines.append(f"# mean_{name}={value!r}")
    for row in report.rows:
        if row.error is not None:
            lines.append(f"# error {row.pair_id}: {row.error}")
    path.write_text("\n".join(lines) + "\n")
    return path


class BilinearBaseline:
    """Identity 'restorer': bilinear upsampling to the working resolution."""

    def __init__(self, resolution: int):
        self.resolution = resolution

    def restore(self, image: np.ndarray) -> np.ndarray:
        return resize_input(image, self.resolution)
