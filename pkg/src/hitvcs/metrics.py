"""Luma-channel quality metrics and the two-GOP evaluation protocol."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import partition_gops
from .errors import DataError
from .network import HitVcsNet, reconstruct_gop
from .sampling import sample_gop

PSNR_CAP_DB = 100.0
_PSNR_MSE_FLOOR = 1e-10

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for unit-range frames, capped at
    100 dB when the MSE underflows 1e-10."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < _PSNR_MSE_FLOOR:
        return PSNR_CAP_DB
    return 10.0 * np.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    window = np.outer(g, g)
    return window / window.sum()


def _window_means(frame: np.ndarray, window: np.ndarray) -> np.ndarray:
    views = np.lib.stride_tricks.sliding_window_view(frame, window.shape)
    return np.tensordot(views, window, axes=([2, 3], [0, 1]))


def ssim(a, b) -> float:
    """Mean local structural similarity with an 11x11 Gaussian window
    (sigma 1.5), K1=0.01, K2=0.03, dynamic range 1.0."""
    a, b = _check_pair(a, b)
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(
            f"frames must be at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}"
        )
    window = gaussian_window()
    mu_a = _window_means(a, window)
    mu_b = _window_means(b, window)
    ea2 = _window_means(a * a, window)
    eb2 = _window_means(b * b, window)
    eab = _window_means(a * b, window)
    var_a = ea2 - mu_a**2
    var_b = eb2 - mu_b**2
    cov = eab - mu_a * mu_b
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )
    return float(ssim_map.mean())


@dataclass
class FrameRecord:
    sequence: str
    frame_index: int
    frame_type: str  # "key" | "nonkey"
    psnr_db: float
    ssim: float


@dataclass
class MetricReport:
    """Per-frame, per-sequence and aggregate Y-channel quality numbers."""

    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def _mean(self, rows, attr):
        return float(np.mean([getattr(r, attr) for r in rows])) if rows else float("nan")

    def sequence_names(self):
        seen = []
        for row in self.rows:
            if row.sequence not in seen:
                seen.append(row.sequence)
        return seen

    def per_sequence(self, frames: str = "all") -> dict:
        out = {}
        for name in self.sequence_names():
            rows = self.select(frames, sequence=name)
            out[name] = {"psnr_db": self._mean(rows, "psnr_db"), "ssim": self._mean(rows, "ssim")}
        return out

    def aggregate(self, frames: str = "all") -> dict:
        rows = self.select(frames)
        return {"psnr_db": self._mean(rows, "psnr_db"), "ssim": self._mean(rows, "ssim")}

    def select(self, frames: str = "all", sequence: Optional[str] = None):
        if frames not in ("all", "nonkey"):
            raise ValueError(f"frames must be 'all' or 'nonkey', got {frames!r}")
        rows = self.rows
        if sequence is not None:
            rows = [r for r in rows if r.sequence == sequence]
        if frames == "nonkey":
            rows = [r for r in rows if r.frame_type == "nonkey"]
        return rows

    def to_dict(self) -> dict:
        return {
            "metadata": self.metadata,
            "frames": [vars(r) for r in self.rows],
            "per_sequence": self.per_sequence("all"),
            "per_sequence_nonkey": self.per_sequence("nonkey"),
            "aggregate": self.aggregate("all"),
            "aggregate_nonkey": self.aggregate("nonkey"),
        }


def clip_frame(frame: np.ndarray) -> np.ndarray:
    return np.clip(frame, 0.0, 1.0)


def evaluate_sequences(
    model: HitVcsNet,
    sequences: dict,
    gops: int = 2,
    metadata: Optional[dict] = None,
    frame_sink=None,
) -> MetricReport:
    """Run the evaluation protocol: reconstruct the first ``gops`` GOPs of
    every sequence and score deep reconstructions per frame on the Y channel.

    ``sequences`` maps name -> list of frames. Rows cover frames
    0 .. gops*G - 1; the trailing bounding keyframe is reconstructed but not
    reported. ``frame_sink(name, index, initial, deep)`` receives every
    scored frame when provided.
    """
    cfg = model.cfg
    g = cfg.gop_size
    key_op = model.key_sampler.to_operator()
    nonkey_op = model.nonkey_sampler.to_operator()
    report = MetricReport(metadata=dict(metadata or {}))
    for name, frames in sequences.items():
        needed = gops * g + 1
        if len(frames) < needed:
            raise DataError(
                f"sequence {name!r} has {len(frames)} frames, protocol needs {needed}"
            )
        samples = partition_gops(frames[:needed], g)[:gops]
        for gop_idx, gop in enumerate(samples):
            measurements = sample_gop(gop, key_op, nonkey_op)
            initial, deep = reconstruct_gop(measurements, model)
            for offset in range(g):  # bounding keyframe excluded from rows
                frame_index = gop_idx * g + offset
                target = gop.frames[offset]
                recon = clip_frame(deep[offset])
                report.rows.append(
                    FrameRecord(
                        sequence=name,
                        frame_index=frame_index,
                        frame_type="key" if offset == 0 else "nonkey",
                        psnr_db=psnr(recon, target),
                        ssim=ssim(recon, target),
                    )
                )
                if frame_sink is not None:
                    frame_sink(name, frame_index, clip_frame(initial[offset]), recon)
    return report


def evaluate(checkpoint, sequences: dict, gops: int = 2, frame_sink=None) -> MetricReport:
    """Protocol entry point taking a checkpoint path (or a loaded model)."""
    if isinstance(checkpoint, HitVcsNet):
        model, meta = checkpoint, {}
    else:
        from .training import load_checkpoint

        model, payload = load_checkpoint(checkpoint)
        meta = {"checkpoint": str(checkpoint), "epoch": payload.get("epoch")}
        run_config = (payload.get("extra") or {}).get("run_config")
        if run_config:
            meta["run_config"] = run_config
    cfg = model.cfg
    metadata = {
        **meta,
        "alpha_k": cfg.alpha_k,
        "alpha_n": cfg.alpha_n,
        "use_hfim": cfg.use_hfim,
        "use_hffm": cfg.use_hffm,
        "gops": gops,
    }
    return evaluate_sequences(model, sequences, gops=gops, metadata=metadata, frame_sink=frame_sink)
