"""Report writers: delimited metric tables, JSON mirrors, frame dumps and
matplotlib figures rendered next to them."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from PIL import Image

from .metrics import MetricReport

CSV_COLUMNS = ("sequence", "frame_index", "frame_type", "psnr_db", "ssim")


def write_metric_csv(report: MetricReport, path) -> Path:
    """Per-frame rows followed by per-sequence means and the overall average,
    mirroring the two-GOP table layout."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in report.rows:
            writer.writerow(
                [row.sequence, row.frame_index, row.frame_type,
                 f"{row.psnr_db:.4f}", f"{row.ssim:.6f}"]
            )
        for name, agg in report.per_sequence("all").items():
            writer.writerow(
                [name, "", "sequence_mean", f"{agg['psnr_db']:.4f}", f"{agg['ssim']:.6f}"]
            )
        agg = report.aggregate("all")
        writer.writerow(["average", "", "all", f"{agg['psnr_db']:.4f}", f"{agg['ssim']:.6f}"])
        agg_nk = report.aggregate("nonkey")
        writer.writerow(
            ["average", "", "nonkey", f"{agg_nk['psnr_db']:.4f}", f"{agg_nk['ssim']:.6f}"]
        )
    return path


def write_metric_json(report: MetricReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    return path


def save_frame_png(frame: np.ndarray, path) -> Path:
    """Write a unit-range frame as lossless 8-bit grayscale PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    levels = np.clip(np.rint(np.asarray(frame) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(levels, mode="L").save(path)
    return path


def load_frame_png(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.float64) / 255.0


def render_eval_figures(report: MetricReport, out_dir) -> list[Path]:
    """Per-frame PSNR traces and per-sequence mean bars, one PNG each."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []

    fig, ax = plt.subplots(figsize=(8, 4.5))
    for name in report.sequence_names():
        rows = sorted(report.select("all", sequence=name), key=lambda r: r.frame_index)
        ax.plot([r.frame_index for r in rows], [r.psnr_db for r in rows],
                marker="o", markersize=3, label=name)
    ax.set_xlabel("frame index")
    ax.set_ylabel("PSNR (dB)")
    ax.set_title("Per-frame Y-channel PSNR")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    per_frame = out_dir / "psnr_per_frame.png"
    fig.savefig(per_frame, dpi=120)
    plt.close(fig)
    paths.append(per_frame)

    per_seq = report.per_sequence("all")
    per_seq_nk = report.per_sequence("nonkey")
    names = list(per_seq)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    pos = np.arange(len(names))
    width = 0.38
    ax.bar(pos - width / 2, [per_seq[n]["psnr_db"] for n in names], width, label="all frames")
    ax.bar(pos + width / 2, [per_seq_nk[n]["psnr_db"] for n in names], width,
           label="non-keyframes")
    ax.set_xticks(pos)
    ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("mean PSNR (dB)")
    ax.set_title("Per-sequence reconstruction quality")
    ax.grid(axis="y", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    summary = out_dir / "psnr_per_sequence.png"
    fig.savefig(summary, dpi=120)
    plt.close(fig)
    paths.append(summary)
    return paths


def render_training_curve(log_rows, out_path) -> Path:
    """Loss-vs-step curve (log scale) with the learning-rate schedule inset."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    steps = [row["step"] for row in log_rows]
    totals = [row["loss_total"] for row in log_rows]
    lrs = [row["lr"] for row in log_rows]
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.plot(steps, totals, lw=0.8)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("total loss")
    ax.set_title("Training loss")
    ax.grid(alpha=0.3)
    ax2 = ax.twinx()
    ax2.plot(steps, lrs, color="tab:orange", lw=0.8, alpha=0.7)
    ax2.set_ylabel("learning rate", color="tab:orange")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
