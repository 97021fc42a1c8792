"""Configuration containers and the key/value run-config file format.

A run config is an INI-style file with [model], [train], [data] and [paths]
sections. Unknown sections or keys are rejected so that typos fail loudly,
and every CLI flag overrides its file counterpart.
"""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import ConfigError


@dataclass
class ModelConfig:
    """Architecture hyperparameters, including the ablation switches."""

    block_size: int = 32
    scales: int = 3
    gop_size: int = 8
    channels: int = 64
    blocks_per_scale: int = 4
    alpha_k: float = 0.5
    alpha_n: float = 0.1
    use_hfim: bool = True
    use_hffm: bool = True
    global_residual: bool = True
    # Keyframe stage features pass through a stride-2 deconvolution before
    # temporal fusion; disable to feed same-scale features directly.
    hfim_export_upsample: bool = True

    def validate(self) -> "ModelConfig":
        step = 2 ** (self.scales - 1)
        if self.scales < 1:
            raise ConfigError(f"scales must be >= 1, got {self.scales}")
        if self.block_size < 2:
            raise ConfigError(f"block_size must be >= 2, got {self.block_size}")
        if self.block_size % step:
            raise ConfigError(
                f"block_size {self.block_size} not divisible by 2^(scales-1)={step}"
            )
        if self.blocks_per_scale < 1:
            raise ConfigError(f"blocks_per_scale must be >= 1, got {self.blocks_per_scale}")
        if self.gop_size < 2:
            raise ConfigError(f"gop_size must be >= 2, got {self.gop_size}")
        for name in ("alpha_k", "alpha_n"):
            a = getattr(self, name)
            if not 0.0 < a <= 1.0:
                raise ConfigError(f"{name} must lie in (0, 1], got {a}")
        if self.channels < 1:
            raise ConfigError(f"channels must be >= 1, got {self.channels}")
        return self


@dataclass
class TrainConfig:
    """Optimizer schedule and loop settings."""

    epochs: int = 100
    batch_gops: int = 32
    lr0: float = 1e-4
    lr_half_every: int = 30
    seed: int = 1

    def validate(self) -> "TrainConfig":
        if self.epochs < 1:
            raise ConfigError(f"epochs must be positive, got {self.epochs}")
        if self.batch_gops < 1:
            raise ConfigError(f"batch_gops must be positive, got {self.batch_gops}")
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if self.lr_half_every < 1:
            raise ConfigError(f"lr_half_every must be positive, got {self.lr_half_every}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        return self


@dataclass
class DataConfig:
    """Where training frames come from and how they are cropped."""

    train_path: str = ""
    crop_size: int = 96
    width: int = 0  # required for raw .yuv inputs
    height: int = 0

    def validate(self) -> "DataConfig":
        if self.crop_size < 1:
            raise ConfigError(f"crop_size must be positive, got {self.crop_size}")
        return self


@dataclass
class PathsConfig:
    out_dir: str = "runs"
    checkpoint: str = ""


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def validate(self) -> "RunConfig":
        self.model.validate()
        self.train.validate()
        self.data.validate()
        if self.data.crop_size % self.model.block_size:
            raise ConfigError(
                f"crop_size {self.data.crop_size} not divisible by "
                f"block_size {self.model.block_size}"
            )
        return self

    def echo(self) -> dict:
        """Plain-dict snapshot embedded in checkpoints and reports."""
        return {
            "model": asdict(self.model),
            "train": asdict(self.train),
            "data": asdict(self.data),
            "paths": asdict(self.paths),
        }


_SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "data": DataConfig,
    "paths": PathsConfig,
}


def _coerce(raw: str, target_type: type, where: str) -> Any:
    if target_type is bool:
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean for '{where}': {raw!r}")
    try:
        return target_type(raw)
    except ValueError as exc:
        raise ConfigError(f"cannot parse value for '{where}': {raw!r}") from exc


def parse_run_config(path: str | Path) -> RunConfig:
    """Parse an INI run config, rejecting unknown sections and keys."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc

    cfg = RunConfig()
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section '{section}' in {path}")
        target = getattr(cfg, section)
        known = {f.name: f.type for f in fields(target)}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"unknown config key '{section}.{key}' in {path}")
            current = getattr(target, key)
            setattr(target, key, _coerce(raw, type(current), f"{section}.{key}"))
    return cfg


def write_run_config(cfg: RunConfig, path: str | Path) -> None:
    parser = configparser.ConfigParser()
    for section, payload in cfg.echo().items():
        parser[section] = {k: str(v) for k, v in payload.items()}
    with open(path, "w") as fh:
        parser.write(fh)
