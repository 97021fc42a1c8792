"""Learned block-based compressive sampling.

A frame is split into non-overlapping B x B blocks and every block is
measured by the same m x B^2 matrix. The same linear map has two
realizations here: a stride-B bias-free convolution (`sample_frame`, the
route the trainable network uses) and an explicit per-block matrix
multiply (`matrix_form_oracle`) kept deliberately independent so the two
can cross-check each other.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

KEYFRAME = "keyframe"
NONKEYFRAME = "nonkeyframe"
_MODES = (KEYFRAME, NONKEYFRAME)


def measurement_count(ratio: float, block_size: int) -> int:
    """Measurements per block: round(ratio * B^2)."""
    return int(round(ratio * block_size * block_size))


@dataclass(frozen=True)
class SamplingOperator:
    """Per-mode sampling matrix, one row per measurement channel.

    ``weights`` has shape (m, B*B); row r reshaped row-major is the r-th
    stride-B convolution filter. There is no bias term anywhere.
    """

    mode: str
    ratio: float
    block_size: int
    weights: np.ndarray

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if self.weights.ndim != 2 or self.weights.shape[1] != self.block_size**2:
            raise ValueError(
                f"weights must be (m, {self.block_size**2}), got {self.weights.shape}"
            )
        if self.weights.shape[0] < 1:
            raise ValueError("operator needs at least one measurement row")
        if not np.isfinite(self.weights).all():
            raise ValueError("operator weights must be finite")

    @property
    def m(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class MeasurementTensor:
    """Grid of per-block measurement vectors for one frame."""

    values: np.ndarray  # (grid_h, grid_w, m)
    block_size: int
    ratio: float

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ValueError(f"values must be 3-d (h, w, m), got {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise ValueError("measurement values must be finite")

    @property
    def grid_h(self) -> int:
        return self.values.shape[0]

    @property
    def grid_w(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


def init_sampling_operator(
    ratio: float, block_size: int, seed: int, mode: str = KEYFRAME
) -> SamplingOperator:
    """Create a sampling operator with seeded, row-orthonormalized weights.

    Rows are drawn i.i.d. from a zero-mean Gaussian with variance 1/B^2 and
    then replaced by the nearest row-orthonormal matrix (polar factor), which
    keeps early training stable. Deterministic for a fixed seed.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"sampling ratio must lie in (0, 1], got {ratio}")
    if block_size < 2:
        raise ValueError(f"block_size must be >= 2, got {block_size}")
    m = measurement_count(ratio, block_size)
    if m < 1:
        raise ValueError(
            f"ratio {ratio} rounds to zero measurements for block_size {block_size}"
        )
    rng = np.random.default_rng(seed)
    weights = rng.normal(0.0, 1.0 / block_size, size=(m, block_size * block_size))
    u, _, vt = np.linalg.svd(weights, full_matrices=False)
    weights = u @ vt
    return SamplingOperator(mode=mode, ratio=ratio, block_size=block_size, weights=weights)


def _check_frame(frame: np.ndarray, block_size: int) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.ndim != 2:
        raise ValueError(f"frame must be 2-d, got shape {frame.shape}")
    h, w = frame.shape
    if h % block_size or w % block_size:
        raise ValueError(
            f"frame {h}x{w} not divisible by block_size {block_size}"
        )
    return frame.astype(np.float64, copy=False)


def sample_frame(frame: np.ndarray, op: SamplingOperator) -> MeasurementTensor:
    """Measure a frame with the stride-B convolutional form of the operator."""
    frame = _check_frame(frame, op.block_size)
    b = op.block_size
    kernel = torch.from_numpy(op.weights.reshape(op.m, 1, b, b))
    x = torch.from_numpy(frame)[None, None]
    y = F.conv2d(x, kernel, bias=None, stride=b)  # (1, m, h, w)
    values = y[0].permute(1, 2, 0).numpy()
    return MeasurementTensor(values=values, block_size=b, ratio=op.ratio)


def matrix_form_oracle(frame: np.ndarray, op: SamplingOperator) -> MeasurementTensor:
    """Measure a frame by explicit per-block y = W x, independent of any
    convolution machinery. Blocks are vectorized row-major."""
    frame = _check_frame(frame, op.block_size)
    b = op.block_size
    h, w = frame.shape[0] // b, frame.shape[1] // b
    values = np.empty((h, w, op.m), dtype=np.float64)
    for i in range(h):
        for j in range(w):
            block = frame[i * b : (i + 1) * b, j * b : (j + 1) * b]
            values[i, j] = op.weights @ block.reshape(-1)
    return MeasurementTensor(values=values, block_size=b, ratio=op.ratio)


def sample_gop(gop, key_op: SamplingOperator, nonkey_op: SamplingOperator):
    """Sample a GOP: keyframe and bounding next keyframe with ``key_op``,
    interior frames with ``nonkey_op``.

    Returns one MeasurementTensor per frame in order
    [keyframe, non-keyframes..., next_keyframe].
    """
    if key_op.block_size != nonkey_op.block_size:
        raise ValueError("keyframe and non-keyframe operators disagree on block_size")
    out = [sample_frame(gop.frames[0], key_op)]
    for frame in gop.frames[1:]:
        out.append(sample_frame(frame, nonkey_op))
    out.append(sample_frame(gop.next_keyframe, key_op))
    return out
