"""Hierarchical deep reconstruction network.

Per branch mode (keyframe / non-keyframe) the pipeline is: learned block
sampling, per-scale linear initial reconstruction, a multi-scale feature
extractor whose stages combine residual blocks with cross-scale fusion
(spatial) and keyframe feature injection (temporal), a coarse-to-fine
fusion of the per-scale features, and a final convolution back to pixels.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .errors import ConfigError
from .initial import UpsamplingOperator, pinv_upsampling_operator
from .sampling import (
    KEYFRAME,
    NONKEYFRAME,
    MeasurementTensor,
    SamplingOperator,
    init_sampling_operator,
)


class BlockSampler(nn.Module):
    """Trainable stride-B bias-free convolution realizing the sampling matrix."""

    def __init__(self, op: SamplingOperator):
        super().__init__()
        b = op.block_size
        self.mode = op.mode
        self.ratio = op.ratio
        self.block_size = b
        weight = torch.from_numpy(op.weights.reshape(op.m, 1, b, b)).float()
        self.weight = nn.Parameter(weight)

    @property
    def m(self):
        return self.weight.shape[0]

    def forward(self, x):
        return F.conv2d(x, self.weight, bias=None, stride=self.block_size)

    def to_operator(self) -> SamplingOperator:
        weights = self.weight.detach().double().reshape(self.m, -1).numpy()
        return SamplingOperator(
            mode=self.mode, ratio=self.ratio, block_size=self.block_size, weights=weights
        )


class InitialReconstructor(nn.Module):
    """Per-scale 1x1 convolution (no bias) from measurement channels to block
    pixels, tiled back via pixel shuffle."""

    def __init__(self, ops: Sequence[UpsamplingOperator]):
        super().__init__()
        self.block_sizes = [op.block_size_s for op in ops]
        convs = []
        for op in ops:
            conv = nn.Conv2d(op.in_dim, op.block_size_s**2, 1, bias=False)
            with torch.no_grad():
                conv.weight.copy_(
                    torch.from_numpy(op.weights).float().view(*conv.weight.shape)
                )
            convs.append(conv)
        self.convs = nn.ModuleList(convs)

    def forward(self, y):
        return [
            F.pixel_shuffle(conv(y), bs)
            for conv, bs in zip(self.convs, self.block_sizes)
        ]

    def to_operators(self) -> list[UpsamplingOperator]:
        ops = []
        for scale, (conv, bs) in enumerate(zip(self.convs, self.block_sizes), start=1):
            w = conv.weight.detach().double().numpy().reshape(bs * bs, -1)
            ops.append(
                UpsamplingOperator(scale=scale, block_size_s=bs, in_dim=w.shape[1], weights=w)
            )
        return ops


class FeatureExtractor(nn.Module):
    """Single-convolution feature extraction from an initial frame."""

    def __init__(self, channels):
        super().__init__()
        self.conv = nn.Conv2d(1, channels, 3, padding=1)

    def forward(self, x):
        return self.conv(x)


class ResidualBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(x)))


class Resampler(nn.Module):
    """Cross-scale feature alignment: one stride-2 convolution per octave down,
    or one stride-2 deconvolution per octave up, each followed by ReLU."""

    def __init__(self, channels, src_scale: int, dst_scale: int):
        super().__init__()
        if src_scale == dst_scale:
            raise ValueError("resampler needs distinct scales")
        self.octaves = abs(src_scale - dst_scale)
        self.upward = src_scale > dst_scale
        if self.upward:
            steps = [
                nn.ConvTranspose2d(channels, channels, 3, stride=2, padding=1, output_padding=1)
                for _ in range(self.octaves)
            ]
        else:
            steps = [
                nn.Conv2d(channels, channels, 3, stride=2, padding=1)
                for _ in range(self.octaves)
            ]
        self.steps = nn.ModuleList(steps)

    def forward(self, x):
        for step in self.steps:
            x = F.relu(step(x))
        return x


def hffm_merge(f_same, f_other, resampler: Resampler):
    """Merge a feature transmitted from another scale into this scale's
    feature: resample across the octave gap, then add element-wise."""
    factor = 2**resampler.octaves
    if resampler.upward:
        expected = (f_same.shape[-2] // factor, f_same.shape[-1] // factor)
    else:
        expected = (f_same.shape[-2] * factor, f_same.shape[-1] * factor)
    if tuple(f_other.shape[-2:]) != expected:
        raise ValueError(
            f"transmitted feature {tuple(f_other.shape[-2:])} is not "
            f"{factor}x away from {tuple(f_same.shape[-2:])}"
        )
    return f_same + resampler(f_other)


def hfim_interact(f_k1, f_k2, f_n_prev, rb: ResidualBlock):
    """Temporal interaction: both bounding keyframes' stage features plus the
    residual-block update of the non-keyframe feature, as a plain sum."""
    if f_k1.shape != f_k2.shape or f_k1.shape != f_n_prev.shape:
        raise ValueError(
            f"interaction operands must share shape, got {tuple(f_k1.shape)}, "
            f"{tuple(f_k2.shape)}, {tuple(f_n_prev.shape)}"
        )
    return f_k1 + f_k2 + rb(f_n_prev)


class ExportUpsampler(nn.Module):
    """Stride-2 deconvolution lifting a keyframe stage feature one octave
    before temporal fusion."""

    def __init__(self, channels):
        super().__init__()
        self.deconv = nn.ConvTranspose2d(
            channels, channels, 3, stride=2, padding=1, output_padding=1
        )

    def forward(self, x):
        return self.deconv(x)


class BranchExtractor(nn.Module):
    """Multi-scale feature extraction for one branch mode.

    Every stage applies a residual block per scale, merges the previous
    stage's post-block features transmitted from the other scales, and (for
    non-keyframes) adds both bounding keyframes' stage features. Keyframe
    passes export each stage's merged features for that temporal fusion.
    """

    def __init__(self, cfg: ModelConfig, keyframe: bool):
        super().__init__()
        self.cfg = cfg
        self.keyframe = keyframe
        s, j, c = cfg.scales, cfg.blocks_per_scale, cfg.channels
        self.fems = nn.ModuleList([FeatureExtractor(c) for _ in range(s)])
        self.blocks = nn.ModuleList(
            [nn.ModuleList([ResidualBlock(c) for _ in range(s)]) for _ in range(j)]
        )
        if cfg.use_hffm:
            self.resamplers = nn.ModuleDict(
                {
                    f"stage{stage}_to{dst}_from{src}": Resampler(c, src + 1, dst + 1)
                    for stage in range(j)
                    for dst in range(s)
                    for src in range(s)
                    if src != dst
                }
            )
        if keyframe and cfg.use_hfim and cfg.hfim_export_upsample:
            self.exporters = nn.ModuleDict(
                {
                    f"stage{stage}_scale{dst}": ExportUpsampler(c)
                    for stage in range(j)
                    for dst in range(s - 1)
                }
            )

    def _export_stage(self, stage: int, merged):
        s = self.cfg.scales
        if not self.cfg.hfim_export_upsample:
            return list(merged)
        out = []
        for dst in range(s - 1):
            out.append(self.exporters[f"stage{stage}_scale{dst}"](merged[dst + 1]))
        out.append(merged[s - 1])
        return out

    def forward(self, levels, key_feats=None):
        """levels: per-scale (N, 1, h_s, w_s) initial frames. key_feats: pair
        of per-stage per-scale feature lists from the two bounding keyframes.

        Returns (per-scale features, exported keyframe features or None).
        """
        cfg = self.cfg
        s, j = cfg.scales, cfg.blocks_per_scale
        if len(levels) != s:
            raise ConfigError(f"expected {s} pyramid levels, got {len(levels)}")
        consume = not self.keyframe and cfg.use_hfim
        if consume and key_feats is None:
            raise ConfigError("non-keyframe pass requires keyframe stage features")
        feats = [self.fems[i](levels[i]) for i in range(s)]
        prev_rb = feats
        exports = [] if self.keyframe and cfg.use_hfim else None
        for stage in range(j):
            rb_out = [self.blocks[stage][i](feats[i]) for i in range(s)]
            merged = list(rb_out)
            if cfg.use_hffm:
                for dst in range(s):
                    for src in range(s):
                        if src != dst:
                            merged[dst] = hffm_merge(
                                merged[dst],
                                prev_rb[src],
                                self.resamplers[f"stage{stage}_to{dst}_from{src}"],
                            )
            if exports is not None:
                exports.append(self._export_stage(stage, merged))
            if consume:
                k1, k2 = key_feats
                merged = [
                    m + k1[stage][i] + k2[stage][i] for i, m in enumerate(merged)
                ]
            prev_rb = rb_out
            feats = merged
        return feats, exports


class FusionUpsampler(nn.Module):
    """One coarse-to-fine step of the multi-scale fusion: stride-2
    deconvolution followed by two ReLU + convolution pairs."""

    def __init__(self, channels):
        super().__init__()
        self.deconv = nn.ConvTranspose2d(
            channels, channels, 3, stride=2, padding=1, output_padding=1
        )
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        x = F.relu(self.deconv(x))
        x = F.relu(self.conv1(x))
        return self.conv2(x)


class MultiScaleFuser(nn.Module):
    """Fold the per-scale features coarse-to-fine into one full-resolution map."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ups = nn.ModuleList([FusionUpsampler(cfg.channels) for _ in range(cfg.scales - 1)])

    def forward(self, feats):
        x = feats[-1]
        for i, up in enumerate(self.ups):
            finer = feats[len(feats) - 2 - i]
            x = up(x) + finer
        return x


class HitVcsNet(nn.Module):
    """Full codec: asymmetric-rate sampling plus hierarchical reconstruction."""

    def __init__(
        self,
        cfg: ModelConfig,
        key_op: SamplingOperator,
        nonkey_op: SamplingOperator,
        key_up_ops: Sequence[UpsamplingOperator],
        nonkey_up_ops: Sequence[UpsamplingOperator],
    ):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.key_sampler = BlockSampler(key_op)
        self.nonkey_sampler = BlockSampler(nonkey_op)
        self.key_initial = InitialReconstructor(key_up_ops)
        self.nonkey_initial = InitialReconstructor(nonkey_up_ops)
        self.key_branch = BranchExtractor(cfg, keyframe=True)
        self.nonkey_branch = BranchExtractor(cfg, keyframe=False)
        self.key_fuser = MultiScaleFuser(cfg)
        self.nonkey_fuser = MultiScaleFuser(cfg)
        self.key_head = nn.Conv2d(cfg.channels, 1, 3, padding=1)
        self.nonkey_head = nn.Conv2d(cfg.channels, 1, 3, padding=1)

    def _check_frames(self, frames):
        if frames.ndim != 4:
            raise ConfigError(f"expected (N, G+1, H, W) frames, got {tuple(frames.shape)}")
        n, f, h, w = frames.shape
        g = self.cfg.gop_size
        if f != g + 1:
            raise ConfigError(f"expected {g + 1} frames per GOP sample, got {f}")
        b = self.cfg.block_size
        if h % b or w % b:
            raise ConfigError(f"frame dims {h}x{w} not divisible by block_size {b}")

    def encode_gop(self, frames):
        """frames (N, G+1, H, W) -> keyframe measurements (N, 2, m_k, h, w)
        and non-keyframe measurements (N, G-1, m_n, h, w)."""
        self._check_frames(frames)
        n, f, h, w = frames.shape
        g = self.cfg.gop_size
        keys = torch.stack([frames[:, 0], frames[:, g]], dim=1).reshape(2 * n, 1, h, w)
        y_k = self.key_sampler(keys)
        nonkeys = frames[:, 1:g].reshape(n * (g - 1), 1, h, w)
        y_n = self.nonkey_sampler(nonkeys)
        gh, gw = h // self.cfg.block_size, w // self.cfg.block_size
        return (
            y_k.reshape(n, 2, self.key_sampler.m, gh, gw),
            y_n.reshape(n, g - 1, self.nonkey_sampler.m, gh, gw),
        )

    def decode_gop(self, y_k, y_n):
        """Reconstruct a GOP sample from its measurements.

        Returns (initial, deep), each (N, G+1, H, W): slot 0 and slot G are
        the bounding keyframes.
        """
        cfg = self.cfg
        n, _, m_k, gh, gw = y_k.shape
        g = cfg.gop_size
        if y_n.shape[:2] != (n, g - 1):
            raise ConfigError(
                f"expected {g - 1} non-keyframe measurement sets, got {tuple(y_n.shape[:2])}"
            )

        key_levels = self.key_initial(y_k.reshape(2 * n, m_k, gh, gw))
        key_feats, exports = self.key_branch(key_levels)
        deep_k = self.key_head(self.key_fuser(key_feats))
        if cfg.global_residual:
            deep_k = deep_k + key_levels[0]

        nonkey_levels = self.nonkey_initial(y_n.reshape(n * (g - 1), y_n.shape[2], gh, gw))
        key_feats_pair = None
        if cfg.use_hfim:
            k1 = [[f[0::2].repeat_interleave(g - 1, dim=0) for f in stage] for stage in exports]
            k2 = [[f[1::2].repeat_interleave(g - 1, dim=0) for f in stage] for stage in exports]
            key_feats_pair = (k1, k2)
        nonkey_feats, _ = self.nonkey_branch(nonkey_levels, key_feats_pair)
        deep_n = self.nonkey_head(self.nonkey_fuser(nonkey_feats))
        if cfg.global_residual:
            deep_n = deep_n + nonkey_levels[0]

        h, w = key_levels[0].shape[-2:]
        init_k = key_levels[0].reshape(n, 2, h, w)
        deep_k = deep_k.reshape(n, 2, h, w)
        init_n = nonkey_levels[0].reshape(n, g - 1, h, w)
        deep_n = deep_n.reshape(n, g - 1, h, w)
        initial = torch.cat([init_k[:, :1], init_n, init_k[:, 1:]], dim=1)
        deep = torch.cat([deep_k[:, :1], deep_n, deep_k[:, 1:]], dim=1)
        return initial, deep

    def forward(self, frames):
        """End-to-end sample + reconstruct of (N, G+1, H, W) GOP samples."""
        return self.decode_gop(*self.encode_gop(frames))


def build_model(cfg: ModelConfig, seed: int) -> HitVcsNet:
    """Deterministically construct a model: seeded sampling operators, their
    pseudo-inverse warm starts for initial reconstruction, seeded network."""
    cfg.validate()
    torch.manual_seed(seed)
    key_op = init_sampling_operator(cfg.alpha_k, cfg.block_size, seed, mode=KEYFRAME)
    nonkey_op = init_sampling_operator(
        cfg.alpha_n, cfg.block_size, seed + 1, mode=NONKEYFRAME
    )
    key_ups = [pinv_upsampling_operator(key_op, s) for s in range(1, cfg.scales + 1)]
    nonkey_ups = [pinv_upsampling_operator(nonkey_op, s) for s in range(1, cfg.scales + 1)]
    return HitVcsNet(cfg, key_op, nonkey_op, key_ups, nonkey_ups)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def reconstruct_gop(measurements: Sequence[MeasurementTensor], model: HitVcsNet):
    """Reconstruct one GOP from per-frame measurement tensors in codec order
    [keyframe, non-keyframes..., next keyframe].

    Returns (initial_frames, deep_frames) as lists of float arrays.
    """
    cfg = model.cfg
    g = cfg.gop_size
    if len(measurements) != g + 1:
        raise ConfigError(
            f"expected {g + 1} measurement tensors for gop_size {g}, got {len(measurements)}"
        )
    m_k, m_n = model.key_sampler.m, model.nonkey_sampler.m
    for idx, meas in enumerate(measurements):
        expected = m_k if idx in (0, g) else m_n
        if meas.channels != expected:
            raise ConfigError(
                f"frame {idx} has {meas.channels} measurement channels, expected {expected}"
            )
        if meas.block_size != cfg.block_size:
            raise ConfigError(
                f"frame {idx} measured with block_size {meas.block_size}, "
                f"model uses {cfg.block_size}"
            )

    def as_tensor(meas):
        return torch.from_numpy(np.ascontiguousarray(meas.values.transpose(2, 0, 1))).float()

    y_k = torch.stack([as_tensor(measurements[0]), as_tensor(measurements[g])])[None]
    y_n = torch.stack([as_tensor(m) for m in measurements[1:g]])[None]
    was_training = model.training
    model.eval()
    with torch.no_grad():
        initial, deep = model.decode_gop(y_k, y_n)
    if was_training:
        model.train()
    init_frames = [initial[0, i].numpy().astype(np.float64) for i in range(g + 1)]
    deep_frames = [deep[0, i].numpy().astype(np.float64) for i in range(g + 1)]
    return init_frames, deep_frames
