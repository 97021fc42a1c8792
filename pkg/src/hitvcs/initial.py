"""Multi-branch initial reconstruction.

Each scale owns a learned linear map from a block's measurement vector back
to a B_s x B_s pixel block (B_s = B / 2^(s-1)); blocks are reassembled on
the measurement grid, giving one coarse frame estimate per scale from the
same measurements. Purely linear, no bias anywhere.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError
from .sampling import MeasurementTensor, SamplingOperator


def scale_block_size(block_size: int, scale: int) -> int:
    step = 2 ** (scale - 1)
    if scale < 1 or block_size % step:
        raise ValueError(f"block_size {block_size} has no scale-{scale} blocks")
    return block_size // step


@dataclass(frozen=True)
class UpsamplingOperator:
    """Linear measurement-to-block map for one scale, no bias."""

    scale: int
    block_size_s: int
    in_dim: int
    weights: np.ndarray  # (block_size_s**2, in_dim)

    def __post_init__(self):
        expected = (self.block_size_s**2, self.in_dim)
        if self.weights.shape != expected:
            raise ValueError(f"weights must be {expected}, got {self.weights.shape}")
        if not np.isfinite(self.weights).all():
            raise ValueError("upsampling weights must be finite")


def gaussian_upsampling_operator(
    scale: int, block_size: int, in_dim: int, seed: int
) -> UpsamplingOperator:
    """Random zero-mean init scaled by 1/sqrt(in_dim)."""
    bs = scale_block_size(block_size, scale)
    rng = np.random.default_rng(seed)
    weights = rng.normal(0.0, 1.0 / np.sqrt(in_dim), size=(bs * bs, in_dim))
    return UpsamplingOperator(scale=scale, block_size_s=bs, in_dim=in_dim, weights=weights)


def block_average_matrix(block_size: int, factor: int) -> np.ndarray:
    """Linear map averaging a B x B block down to (B/factor) x (B/factor),
    both vectorized row-major."""
    if block_size % factor:
        raise ValueError(f"factor {factor} does not divide block_size {block_size}")
    size_s = block_size // factor
    mat = np.zeros((size_s * size_s, block_size * block_size))
    weight = 1.0 / (factor * factor)
    for u in range(size_s):
        for v in range(size_s):
            row = u * size_s + v
            for du in range(factor):
                for dv in range(factor):
                    col = (u * factor + du) * block_size + (v * factor + dv)
                    mat[row, col] = weight
    return mat


def pinv_upsampling_operator(op: SamplingOperator, scale: int = 1) -> UpsamplingOperator:
    """Warm-start operator: pseudo-inverse of the sampling matrix, block-averaged
    down to the requested scale. Reconstructs exactly when the sampling matrix
    is square and full rank."""
    bs = scale_block_size(op.block_size, scale)
    weights = np.linalg.pinv(op.weights)
    if scale > 1:
        weights = block_average_matrix(op.block_size, 2 ** (scale - 1)) @ weights
    return UpsamplingOperator(scale=scale, block_size_s=bs, in_dim=op.m, weights=weights)


@dataclass(frozen=True)
class ScalePyramid:
    """Per-frame stack of initial reconstructions, one per scale, resolution
    halved per level."""

    levels: tuple

    def __post_init__(self):
        if not self.levels:
            raise ValueError("pyramid needs at least one level")
        h0, w0 = self.levels[0].shape
        for s, level in enumerate(self.levels, start=1):
            step = 2 ** (s - 1)
            if level.shape != (h0 // step, w0 // step):
                raise ValueError(
                    f"level {s} has shape {level.shape}, expected "
                    f"{(h0 // step, w0 // step)}"
                )

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, idx):
        return self.levels[idx]

    def __iter__(self):
        return iter(self.levels)


def initial_reconstruct(meas: MeasurementTensor, op: UpsamplingOperator) -> np.ndarray:
    """Map every grid cell's measurement vector to a pixel block and tile the
    blocks back into a frame at the operator's scale.

    Block vectors are reshaped row-major; cell (i, j) lands at pixel offset
    (i * B_s, j * B_s).
    """
    if op.in_dim != meas.channels:
        raise ValueError(
            f"operator expects {op.in_dim} channels, measurements have {meas.channels}"
        )
    bs = op.block_size_s
    y = torch.from_numpy(np.ascontiguousarray(meas.values.transpose(2, 0, 1)))[None]
    kernel = torch.from_numpy(op.weights).view(bs * bs, op.in_dim, 1, 1)
    blocks = F.conv2d(y, kernel, bias=None)  # (1, bs*bs, h, w)
    return F.pixel_shuffle(blocks, bs)[0, 0].numpy()


def initial_reconstruct_pyramid(meas: MeasurementTensor, ops) -> ScalePyramid:
    """Run every scale branch on the same measurement tensor."""
    by_scale = {}
    for op in ops:
        if op.scale in by_scale:
            raise ConfigError(f"duplicate upsampling operator for scale {op.scale}")
        by_scale[op.scale] = op
    n_scales = len(by_scale)
    missing = [s for s in range(1, n_scales + 1) if s not in by_scale]
    if missing:
        raise ConfigError(f"missing upsampling operators for scales {missing}")
    levels = tuple(
        initial_reconstruct(meas, by_scale[s]) for s in range(1, n_scales + 1)
    )
    return ScalePyramid(levels=levels)
