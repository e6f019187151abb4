"""Matplotlib figures rendered next to reports and training logs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402 - backend must be set first

from .metrics import EvalReport
from .training import read_training_log


def save_eval_figure(report: EvalReport, path) -> Path:
    """Per-pair PSNR bars (model vs baseline) with dashed mean lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [row for row in report.rows if row.error is None]
    xs = range(len(rows))
    width = 0.4
    fig, ax = plt.subplots(figsize=(max(6, 0.8 * len(rows)), 4))
    ax.bar([x - width / 2 for x in xs], [row.psnr_model for row in rows],
           width, label="model")
    ax.bar([x + width / 2 for x in xs], [row.psnr_baseline for row in rows],
           width, label="bilinear baseline")
    ax.axhline(report.mean_model, color="C0", linestyle="--", linewidth=1)
    ax.axhline(report.mean_baseline, color="C1", linestyle="--", linewidth=1)
    ax.set_xticks(list(xs))
    ax.set_xticklabels([row.pair_id for row in rows], rotation=45, ha="right",
                       fontsize=7)
    ax.set_ylabel("PSNR (dB)")
    ax.set_title(f"restoration vs baseline (n={len(rows)})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_training_figure(log_path, path) -> Path:
    """Loss curves from a training log (any column set, 'step' on the x axis)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns, rows = read_training_log(log_path)
    fig, ax = plt.subplots(figsize=(7, 4))
    if rows and columns:
        steps = [row[0] for row in rows]
        for ci, name in enumerate(columns[1:], start=1):
            xs = [s for s, row in zip(steps, rows) if row[ci] is not None]
            ys = [row[ci] for row in rows if row[ci] is not None]
            if ys:
                ax.plot(xs, ys, label=name, linewidth=1)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(Path(log_path).name)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
