"""Video ingestion, luma extraction, GOP partitioning and training crops.

Frames are 2-d float arrays in [0, 1]. Sources are directories of 8-bit
images (lexicographic order) or raw planar YUV 4:2:0 files with explicit
dimensions; chroma planes are skipped.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError

# ITU-R BT.601 studio-swing luma coefficients for unit-range RGB.
_Y_COEFF = np.array([65.481, 128.553, 24.966])
_Y_OFFSET = 16.0

_IMAGE_SUFFIXES = (".png", ".bmp", ".tif", ".tiff", ".jpg", ".jpeg", ".pgm")


@dataclass(frozen=True)
class GopSample:
    """One GOP (keyframe first) plus the first frame of the following GOP."""

    frames: tuple
    next_keyframe: np.ndarray

    def __post_init__(self):
        if len(self.frames) < 2:
            raise ValueError("a GOP needs at least two frames")
        shape = self.frames[0].shape
        for frame in self.frames:
            if frame.shape != shape:
                raise ValueError("all GOP frames must share dimensions")
        if self.next_keyframe.shape != shape:
            raise ValueError("next_keyframe dimensions differ from the GOP's")

    @property
    def gop_size(self) -> int:
        return len(self.frames)

    def all_frames(self) -> list:
        """Frames in codec order: keyframe, non-keyframes, bounding keyframe."""
        return list(self.frames) + [self.next_keyframe]


def rgb_to_y(rgb: np.ndarray) -> np.ndarray:
    """BT.601 studio-swing luma of an 8-bit RGB frame, normalized to [0, 1].

    Y_8bit = 16 + 65.481 R' + 128.553 G' + 24.966 B' with R', G', B' in [0, 1].
    """
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) RGB input, got {rgb.shape}")
    unit = rgb.astype(np.float64) / 255.0
    y = _Y_OFFSET + unit @ _Y_COEFF
    return y / 255.0


def partition_gops(frames, gop_size: int) -> list[GopSample]:
    """Split a frame list into consecutive GOPs of ``gop_size`` frames.

    GOP i covers frames [i*G, (i+1)*G) and its next_keyframe is frame
    (i+1)*G. A trailing GOP with no following frame duplicates its own
    keyframe as next_keyframe.
    """
    frames = list(frames)
    if gop_size < 2:
        raise ValueError(f"gop_size must be >= 2, got {gop_size}")
    if len(frames) < gop_size:
        raise ValueError(
            f"need at least {gop_size} frames for one GOP, got {len(frames)}"
        )
    samples = []
    for start in range(0, len(frames) - gop_size + 1, gop_size):
        chunk = frames[start : start + gop_size]
        if start + gop_size < len(frames):
            next_key = frames[start + gop_size]
        else:
            next_key = chunk[0]
        samples.append(GopSample(frames=tuple(chunk), next_keyframe=next_key))
    return samples


_TRANSFORMS = (
    lambda f: f,
    lambda f: np.ascontiguousarray(f[:, ::-1]),  # horizontal flip
    lambda f: np.ascontiguousarray(f[::-1, :]),  # vertical flip
    lambda f: np.ascontiguousarray(f[::-1, ::-1]),  # 180 degree rotation
)


def augment(gop: GopSample, seed) -> GopSample:
    """Apply one of {identity, h-flip, v-flip, 180 rotation}, drawn from the
    seed, identically to every frame of the GOP."""
    rng = np.random.default_rng(seed)
    transform = _TRANSFORMS[int(rng.integers(len(_TRANSFORMS)))]
    return GopSample(
        frames=tuple(transform(f) for f in gop.frames),
        next_keyframe=transform(gop.next_keyframe),
    )


def random_crop(
    gop: GopSample, size: int, seed, block_size: int = 32, scales: int = 3
) -> GopSample:
    """Crop the same random ``size`` x ``size`` window from every frame.

    The size must be divisible by the block size and by 2^(scales-1) so the
    crop stays valid for sampling and for every pyramid level.
    """
    step = 2 ** (scales - 1)
    if size % block_size or size % step:
        raise ConfigError(
            f"crop size {size} must be divisible by block_size {block_size} "
            f"and by 2^(scales-1)={step}"
        )
    h, w = gop.frames[0].shape
    if size > h or size > w:
        raise ValueError(f"crop size {size} exceeds frame dims {h}x{w}")
    rng = np.random.default_rng(seed)
    top = int(rng.integers(h - size + 1))
    left = int(rng.integers(w - size + 1))
    window = (slice(top, top + size), slice(left, left + size))
    return GopSample(
        frames=tuple(np.ascontiguousarray(f[window]) for f in gop.frames),
        next_keyframe=np.ascontiguousarray(gop.next_keyframe[window]),
    )


def load_yuv_frames(
    path: str | Path, width: int, height: int, limit: int | None = None
) -> list[np.ndarray]:
    """Read luma planes from a raw planar YUV 4:2:0 (I420, 8-bit) file."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"yuv file not found: {path}")
    if width <= 0 or height <= 0:
        raise DataError("yuv input needs explicit positive --width/--height")
    frame_bytes = width * height * 3 // 2
    frames = []
    with open(path, "rb") as fh:
        while limit is None or len(frames) < limit:
            raw = fh.read(frame_bytes)
            if len(raw) < frame_bytes:
                break
            y_plane = np.frombuffer(raw[: width * height], dtype=np.uint8)
            frames.append(y_plane.reshape(height, width).astype(np.float64) / 255.0)
    if not frames:
        raise DataError(f"no complete frames in {path}")
    return frames


def load_image_dir(path: str | Path, limit: int | None = None) -> list[np.ndarray]:
    """Load frames from a directory of images in lexicographic order; RGB
    images are reduced to BT.601 luma, grayscale is used as-is."""
    path = Path(path)
    if not path.is_dir():
        raise DataError(f"frame directory not found: {path}")
    names = sorted(p for p in path.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)
    if limit is not None:
        names = names[:limit]
    if not names:
        raise DataError(f"no image frames in {path}")
    frames = []
    for name in names:
        with Image.open(name) as img:
            if img.mode in ("L", "I;16", "I"):
                arr = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
            else:
                arr = rgb_to_y(np.asarray(img.convert("RGB")))
        frames.append(arr)
    return frames


def load_sequence(
    path: str | Path, width: int = 0, height: int = 0, limit: int | None = None
) -> list[np.ndarray]:
    """Load a frame sequence from an image directory or a raw .yuv file."""
    path = Path(path)
    if path.is_dir():
        return load_image_dir(path, limit=limit)
    if path.suffix.lower() == ".yuv":
        return load_yuv_frames(path, width, height, limit=limit)
    raise DataError(f"unsupported sequence source: {path}")


class GopDataset:
    """Training dataset of augmented random crops over GOP samples.

    Batch composition is a pure function of (seed, epoch): iterating the
    same epoch twice yields identical arrays.
    """

    def __init__(
        self,
        sequences,
        gop_size: int,
        crop_size: int,
        block_size: int,
        scales: int,
        seed: int,
        augment_samples: bool = True,
    ):
        self.samples = []
        for frames in sequences:
            self.samples.extend(partition_gops(frames, gop_size))
        if not self.samples:
            raise DataError("no GOP samples available for training")
        for gop in self.samples:
            h, w = gop.frames[0].shape
            if crop_size > min(h, w):
                raise ConfigError(
                    f"crop_size {crop_size} exceeds frame dims {h}x{w}"
                )
        self.crop_size = crop_size
        self.block_size = block_size
        self.scales = scales
        self.seed = seed
        self.augment_samples = augment_samples

    def __len__(self):
        return len(self.samples)

    def epoch_batches(self, epoch: int, batch_gops: int):
        """Yield (batch, gop+1, H, W) float32 arrays for one epoch."""
        rng = np.random.default_rng((self.seed, epoch))
        order = rng.permutation(len(self.samples))
        for start in range(0, len(order), batch_gops):
            chunk = order[start : start + batch_gops]
            stacks = []
            for idx in chunk:
                gop = self.samples[int(idx)]
                if gop.frames[0].shape != (self.crop_size, self.crop_size):
                    gop = random_crop(
                        gop, self.crop_size, rng, self.block_size, self.scales
                    )
                if self.augment_samples:
                    gop = augment(gop, rng)
                stacks.append(np.stack(gop.all_frames()))
            yield np.stack(stacks).astype(np.float32)
