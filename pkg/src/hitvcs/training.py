"""Loss, optimizer schedule, training loop and checkpointing.

The loss is the unnormalized squared-error sum over initial and deep
reconstructions of both bounding keyframes and every non-keyframe; the
training log additionally carries per-pixel MSE for readability.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .config import ModelConfig, TrainConfig
from .data import GopDataset
from .errors import ConfigError, NanLossError
from .network import HitVcsNet, build_model

CHECKPOINT_VERSION = 1

ABLATION_VARIANTS = ("full", "no_hfim", "no_hffm")

LOG_COLUMNS = (
    "epoch",
    "step",
    "lr",
    "loss_total",
    "loss_key_initial",
    "loss_key_deep",
    "loss_nonkey_initial",
    "loss_nonkey_deep",
    "mse_per_pixel",
)


@dataclass
class LossBreakdown:
    """Summed squared-error components; total is their sum."""

    key_initial: torch.Tensor
    key_deep: torch.Tensor
    nonkey_initial: torch.Tensor
    nonkey_deep: torch.Tensor

    @property
    def total(self):
        return self.key_initial + self.key_deep + self.nonkey_initial + self.nonkey_deep

    def as_floats(self) -> dict:
        def scalar(value):
            return float(value.detach()) if torch.is_tensor(value) else float(value)

        return {
            "key_initial": scalar(self.key_initial),
            "key_deep": scalar(self.key_deep),
            "nonkey_initial": scalar(self.nonkey_initial),
            "nonkey_deep": scalar(self.nonkey_deep),
            "total": scalar(self.total),
        }


def hit_loss(initial, deep, targets, gop_size: int) -> LossBreakdown:
    """Squared-L2 reconstruction loss over a batch of GOP samples.

    ``initial``/``deep``/``targets`` are (N, G+1, H, W) with slots 0 and G
    holding the bounding keyframes. All four components are plain sums of
    squared differences over every pixel, with no normalization.
    """
    if initial.shape != targets.shape or deep.shape != targets.shape:
        raise ValueError(
            f"misaligned shapes: initial {tuple(initial.shape)}, deep "
            f"{tuple(deep.shape)}, targets {tuple(targets.shape)}"
        )
    if initial.shape[1] != gop_size + 1:
        raise ValueError(
            f"expected {gop_size + 1} frames per sample, got {initial.shape[1]}"
        )
    key_slots = (0, gop_size)
    nonkey = slice(1, gop_size)
    key_initial = sum(((initial[:, k] - targets[:, k]) ** 2).sum() for k in key_slots)
    key_deep = sum(((deep[:, k] - targets[:, k]) ** 2).sum() for k in key_slots)
    nonkey_initial = ((initial[:, nonkey] - targets[:, nonkey]) ** 2).sum()
    nonkey_deep = ((deep[:, nonkey] - targets[:, nonkey]) ** 2).sum()
    return LossBreakdown(key_initial, key_deep, nonkey_initial, nonkey_deep)


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Step schedule: the initial rate halves after every ``lr_half_every``
    epochs."""
    if epoch < 0:
        raise ValueError(f"epoch must be non-negative, got {epoch}")
    return cfg.lr0 * 0.5 ** (epoch // cfg.lr_half_every)


def save_checkpoint(
    path: str | Path,
    model: HitVcsNet,
    train_cfg: Optional[TrainConfig] = None,
    epoch: int = 0,
    extra: Optional[dict] = None,
) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": asdict(model.cfg),
        "train_config": asdict(train_cfg) if train_cfg else None,
        "epoch": epoch,
        "state_dict": model.state_dict(),
    }
    if extra:
        payload["extra"] = extra
    torch.save(payload, path)


def load_checkpoint(path: str | Path):
    """Rebuild the model from a checkpoint; returns (model, payload)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {version}")
    cfg = ModelConfig(**payload["model_config"])
    seed = (payload.get("train_config") or {}).get("seed", 0)
    model = build_model(cfg, seed)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload


class TrainingLog:
    def __init__(self, path: Optional[str | Path]):
        self.path = Path(path) if path else None
        self.rows = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w", newline="")
            self._writer = csv.writer(self._fh)
            self._writer.writerow(LOG_COLUMNS)

    def append(self, row: dict):
        self.rows.append(row)
        if self.path:
            self._writer.writerow([row[c] for c in LOG_COLUMNS])
            self._fh.flush()

    def close(self):
        if self.path:
            self._fh.close()


def train(
    model: HitVcsNet,
    dataset: GopDataset,
    cfg: TrainConfig,
    checkpoint_path: Optional[str | Path] = None,
    log_path: Optional[str | Path] = None,
    config_echo: Optional[dict] = None,
) -> dict:
    """Run the full training loop.

    For every epoch: iterate seeded batches, forward through sampling /
    initial / deep reconstruction, take an Adam step at the scheduled
    learning rate, and log one CSV row per step. A checkpoint is written
    after every epoch; ``config_echo`` rides along inside it.
    Returns a summary with the loss history.
    """
    cfg.validate()
    torch.manual_seed(cfg.seed)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=cfg.lr0, betas=(0.9, 0.999), eps=1e-8
    )
    log = TrainingLog(log_path)
    epoch_means = []
    step = 0
    try:
        for epoch in range(cfg.epochs):
            lr = lr_at_epoch(cfg, epoch)
            for group in optimizer.param_groups:
                group["lr"] = lr
            model.train()
            epoch_losses = []
            for batch in dataset.epoch_batches(epoch, cfg.batch_gops):
                targets = torch.from_numpy(batch)
                initial, deep = model(targets)
                loss = hit_loss(initial, deep, targets, model.cfg.gop_size)
                total = loss.total
                if not torch.isfinite(total):
                    raise NanLossError(
                        f"non-finite loss at epoch {epoch} step {step}: "
                        f"{loss.as_floats()}"
                    )
                optimizer.zero_grad()
                total.backward()
                optimizer.step()
                floats = loss.as_floats()
                per_pixel = floats["total"] / (2 * targets.numel())
                log.append(
                    {
                        "epoch": epoch,
                        "step": step,
                        "lr": lr,
                        "loss_total": floats["total"],
                        "loss_key_initial": floats["key_initial"],
                        "loss_key_deep": floats["key_deep"],
                        "loss_nonkey_initial": floats["nonkey_initial"],
                        "loss_nonkey_deep": floats["nonkey_deep"],
                        "mse_per_pixel": per_pixel,
                    }
                )
                epoch_losses.append(floats["total"])
                step += 1
            epoch_means.append(float(np.mean(epoch_losses)))
            if checkpoint_path:
                extra = {"run_config": config_echo} if config_echo else None
                save_checkpoint(checkpoint_path, model, cfg, epoch=epoch, extra=extra)
    finally:
        log.close()
    return {
        "epochs": cfg.epochs,
        "steps": step,
        "epoch_mean_loss": epoch_means,
        "log_rows": log.rows,
        "checkpoint": str(checkpoint_path) if checkpoint_path else None,
    }


def train_ablation(
    variant: str,
    base_cfg: ModelConfig,
    dataset: GopDataset,
    train_cfg: TrainConfig,
    checkpoint_path: Optional[str | Path] = None,
    log_path: Optional[str | Path] = None,
):
    """Train a model variant with one interaction mechanism disabled."""
    if variant not in ABLATION_VARIANTS:
        raise ConfigError(f"unknown ablation variant {variant!r}; use {ABLATION_VARIANTS}")
    cfg = replace(base_cfg)
    if variant == "no_hfim":
        cfg.use_hfim = False
    elif variant == "no_hffm":
        cfg.use_hffm = False
    model = build_model(cfg, train_cfg.seed)
    summary = train(model, dataset, train_cfg, checkpoint_path, log_path)
    summary["variant"] = variant
    return model, summary
