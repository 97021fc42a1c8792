"""Binary measurement container and GOP archive.

Per-frame container, little-endian:
    magic "HVCS" | format version u16 | block_size u16 | grid_h u16 |
    grid_w u16 | m u32 | ratio f32 | grid_h*grid_w*m f32 values in
    (row, col, channel) order.

A GOP archive is a u32 frame count followed by that many containers.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np

from .errors import DataError
from .sampling import MeasurementTensor

MAGIC = b"HVCS"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHHHHIf")
_COUNT = struct.Struct("<I")


def write_measurement(fh: BinaryIO, meas: MeasurementTensor) -> None:
    fh.write(
        _HEADER.pack(
            MAGIC,
            FORMAT_VERSION,
            meas.block_size,
            meas.grid_h,
            meas.grid_w,
            meas.channels,
            meas.ratio,
        )
    )
    fh.write(np.ascontiguousarray(meas.values, dtype="<f4").tobytes())


def read_measurement(fh: BinaryIO) -> MeasurementTensor:
    raw = fh.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise DataError("truncated measurement container header")
    magic, version, block_size, grid_h, grid_w, m, ratio = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise DataError(f"bad container magic {magic!r}")
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported container version {version}")
    count = grid_h * grid_w * m
    payload = fh.read(4 * count)
    if len(payload) != 4 * count:
        raise DataError("truncated measurement container payload")
    values = np.frombuffer(payload, dtype="<f4").reshape(grid_h, grid_w, m)
    return MeasurementTensor(
        values=values.astype(np.float64), block_size=block_size, ratio=float(ratio)
    )


def write_archive(path: str | Path, measurements: Sequence[MeasurementTensor]) -> None:
    """Write a GOP archive: frame-count header then one container per frame."""
    with open(path, "wb") as fh:
        fh.write(_COUNT.pack(len(measurements)))
        for meas in measurements:
            write_measurement(fh, meas)


def read_archive(path: str | Path) -> list[MeasurementTensor]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"archive not found: {path}")
    with open(path, "rb") as fh:
        raw = fh.read(_COUNT.size)
        if len(raw) != _COUNT.size:
            raise DataError("truncated archive header")
        (count,) = _COUNT.unpack(raw)
        return [read_measurement(fh) for _ in range(count)]
