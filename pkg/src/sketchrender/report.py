"""Figures written next to the text/TSV reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import MetricReport  # noqa: E402

DPI = 120


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def loss_curves(sketch_history, render_history, path) -> Path:
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.6))
    s = np.asarray(sketch_history, dtype=float).reshape(-1, 2)
    r = np.asarray(render_history, dtype=float).reshape(-1, 4)
    ax = axes[0]
    if len(s):
        ax.plot(s[:, 0], lw=0.8, label="D")
        ax.plot(s[:, 1], lw=0.8, label="G")
        ax.legend(frameon=False)
    ax.set_title("sketch stage")
    ax.set_xlabel("step")
    ax = axes[1]
    if len(r):
        ax.plot(r[:, 2], lw=0.8, label="L1 (x lambda)")
        ax.plot(r[:, 1], lw=0.8, label="adv G")
        ax.plot(r[:, 0], lw=0.8, label="adv D")
        ax.set_yscale("log")
        ax.legend(frameon=False)
    ax.set_title("render stage")
    ax.set_xlabel("step")
    return _save(fig, path)


def sample_grid(sketches: np.ndarray, images: np.ndarray, path, n: int = 8) -> Path:
    """Top row sketches, bottom row rendered images; inputs in [-1, 1]."""
    n = min(n, len(images))
    fig, axes = plt.subplots(2, max(n, 1), figsize=(1.4 * max(n, 1), 3), squeeze=False)
    for i in range(n):
        axes[0, i].imshow(np.asarray(sketches[i]).reshape(sketches.shape[-2:]), cmap="gray", vmin=-1, vmax=1)
        axes[1, i].imshow(np.clip((np.asarray(images[i]).transpose(1, 2, 0) + 1) / 2, 0, 1))
    for ax in axes.ravel():
        ax.set_axis_off()
    return _save(fig, path)


def metric_bars(report: MetricReport, path) -> Path:
    levels = sorted((k, v) for k, v in report.values.items() if k.startswith("SWD_level"))
    ms = [(k.replace("MS-SSIM_", "").replace("_mean", ""), v) for k, v in report.values.items()
          if k.startswith("MS-SSIM") and k.endswith("_mean")]
    fig, axes = plt.subplots(1, 3, figsize=(10, 3.2))
    axes[0].bar([k.replace("SWD_", "") for k, _ in levels], [v for _, v in levels], color="tab:blue")
    axes[0].set_title("SWD per pyramid level")
    axes[1].bar([k for k, _ in ms], [v for _, v in ms], color="tab:green")
    axes[1].set_ylim(0, 1)
    axes[1].set_title("MS-SSIM")
    axes[2].bar(["FD"], [report.values.get("FD", np.nan)], color="tab:red")
    axes[2].set_title(f"Frechet distance\n{report.extractor}", fontsize=9)
    return _save(fig, path)


def segmentation_bars(report: MetricReport, path) -> Path:
    arms = list(report.segmentation)
    metrics = ["SEN", "ACC", "AUC"]
    x = np.arange(len(metrics))
    width = 0.8 / max(len(arms), 1)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for i, arm in enumerate(arms):
        vals = [report.segmentation[arm].get(m) or 0.0 for m in metrics]
        ax.bar(x + i * width, vals, width, label=f"{arm} pretraining")
    ax.set_xticks(x + width * (len(arms) - 1) / 2)
    ax.set_xticklabels(metrics)
    ax.set_ylim(0, 1)
    ax.legend(frameon=False, loc="lower right")
    return _save(fig, path)


def write_report(report: MetricReport, out_dir, stem: str = "report", figure=None) -> dict[str, Path]:
    """Write ``stem.txt`` (human), ``stem.tsv`` (machine) and ``stem.png`` when a figure applies."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"text": out / f"{stem}.txt", "tsv": out / f"{stem}.tsv"}
    paths["text"].write_text(report.to_text())
    paths["tsv"].write_text(report.to_lines())
    if figure == "metrics" or (figure is None and report.values):
        paths["figure"] = metric_bars(report, out / f"{stem}.png")
    elif figure == "segmentation" or (figure is None and report.segmentation):
        paths["figure"] = segmentation_bars(report, out / f"{stem}.png")
    return paths
