import os

import numpy as np
import pytest
import torch
from hypothesis import settings

from hitvcs.config import ModelConfig
from hitvcs.report import save_frame_png

settings.register_profile("suite", deadline=None, max_examples=25)
settings.load_profile("suite")

torch.set_num_threads(max(1, os.cpu_count() or 1))


def synthetic_sequence(n_frames, height=288, width=352, seed=0, motion=2):
    """Deterministic test video: smooth shading, band-limited texture and a
    few moving structures. Values lie in [0, 1]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    yn, xn = yy / height, xx / width

    noise = rng.standard_normal((height, width))
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.rfftfreq(width)[None, :]
    lowpass = np.exp(-(fx**2 + fy**2) / (2 * 0.06**2))
    texture = np.fft.irfft2(np.fft.rfft2(noise) * lowpass, s=(height, width))
    texture /= max(np.abs(texture).max(), 1e-12)

    frames = []
    for t in range(n_frames):
        base = 0.45 + 0.18 * np.sin(7.0 * xn + 0.13 * t) * np.cos(5.0 * yn)
        cy1 = 0.3 * height + motion * 3 * t
        cx1 = 0.25 * width + motion * 4 * t
        blob1 = 0.3 * np.exp(-(((yy - cy1) / 22.0) ** 2 + ((xx - cx1) / 22.0) ** 2))
        cy2 = 0.7 * height - motion * 2 * t
        cx2 = 0.65 * width + motion * 3 * t
        blob2 = -0.25 * np.exp(-(((yy - cy2) / 30.0) ** 2 + ((xx - cx2) / 30.0) ** 2))
        rolled = np.roll(texture, (motion * t, 2 * motion * t), axis=(0, 1))
        edge = 0.2 * ((xx + yy + 5.0 * t) % 97 < 12)
        frame = base + blob1 + blob2 + 0.22 * rolled + edge
        frames.append(np.clip(frame, 0.0, 1.0))
    return frames


@pytest.fixture(scope="session")
def tiny_cfg():
    return ModelConfig(
        block_size=8,
        scales=2,
        gop_size=2,
        channels=4,
        blocks_per_scale=1,
        alpha_k=0.5,
        alpha_n=0.1,
    )


@pytest.fixture()
def frame_dir_factory(tmp_path):
    """Write a synthetic sequence as 8-bit PNG frames and return the dir."""

    def _make(name, n_frames, height=32, width=32, seed=0):
        out = tmp_path / name
        out.mkdir(parents=True, exist_ok=True)
        for i, frame in enumerate(
            synthetic_sequence(n_frames, height=height, width=width, seed=seed)
        ):
            save_frame_png(frame, out / f"frame{i:04d}.png")
        return out

    return _make
