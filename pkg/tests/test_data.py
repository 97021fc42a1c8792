import numpy as np
import pytest
from hypothesis import given, strategies as st

from hitvcs.data import (
    GopDataset,
    GopSample,
    augment,
    load_image_dir,
    load_sequence,
    load_yuv_frames,
    partition_gops,
    random_crop,
    rgb_to_y,
)
from hitvcs.errors import ConfigError, DataError

from conftest import synthetic_sequence


def coordinate_frames(n, h=16, w=20):
    """Frames whose pixel values encode (frame, row, col) uniquely."""
    out = []
    for k in range(n):
        yy, xx = np.mgrid[0:h, 0:w]
        out.append((k * 10000 + yy * 100 + xx).astype(np.float64))
    return out


class TestRgbToY:
    def test_white(self):
        y = rgb_to_y(np.full((2, 2, 3), 255, dtype=np.uint8))
        np.testing.assert_allclose(y, (16 + 65.481 + 128.553 + 24.966) / 255.0)
        np.testing.assert_allclose(y, 235.0 / 255.0, atol=1e-12)

    def test_black(self):
        y = rgb_to_y(np.zeros((3, 3, 3), dtype=np.uint8))
        np.testing.assert_allclose(y, 16.0 / 255.0)

    def test_pure_red(self):
        rgb = np.zeros((1, 1, 3), dtype=np.uint8)
        rgb[..., 0] = 255
        np.testing.assert_allclose(rgb_to_y(rgb), (16.0 + 65.481) / 255.0)

    def test_output_in_unit_range(self):
        rng = np.random.default_rng(0)
        y = rgb_to_y(rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8))
        assert y.min() >= 0.0 and y.max() <= 1.0

    def test_bad_shape_rejected(self):
        with pytest.raises(ValueError):
            rgb_to_y(np.zeros((4, 4)))


class TestPartitionGops:
    def test_seventeen_frames_two_gops(self):
        frames = coordinate_frames(17)
        samples = partition_gops(frames, 8)
        assert len(samples) == 2
        np.testing.assert_array_equal(samples[0].next_keyframe, frames[8])
        np.testing.assert_array_equal(samples[1].next_keyframe, frames[16])
        np.testing.assert_array_equal(samples[1].frames[0], frames[8])

    def test_exact_gop_duplicates_own_keyframe(self):
        frames = coordinate_frames(8)
        samples = partition_gops(frames, 8)
        assert len(samples) == 1
        np.testing.assert_array_equal(samples[0].next_keyframe, frames[0])

    def test_two_gop_eval_protocol_slice(self):
        frames = coordinate_frames(20)
        samples = partition_gops(frames[:17], 8)
        assert len(samples) == 2
        covered = [f for s in samples for f in s.frames]
        assert len(covered) == 16
        np.testing.assert_array_equal(samples[-1].next_keyframe, frames[16])

    def test_too_few_frames_rejected(self):
        with pytest.raises(ValueError):
            partition_gops(coordinate_frames(7), 8)

    def test_partition_covers_without_overlap(self):
        frames = coordinate_frames(25)
        samples = partition_gops(frames, 8)
        assert len(samples) == 3
        for a, b in zip(samples[:-1], samples[1:]):
            np.testing.assert_array_equal(a.next_keyframe, b.frames[0])
        flat = [f for s in samples for f in s.frames]
        for got, expected in zip(flat, frames):
            np.testing.assert_array_equal(got, expected)


def infer_transform(before, after):
    candidates = {
        "identity": before,
        "hflip": before[:, ::-1],
        "vflip": before[::-1, :],
        "rot180": before[::-1, ::-1],
    }
    matches = [name for name, c in candidates.items() if np.array_equal(after, c)]
    assert len(matches) == 1, matches
    return matches[0]


class TestAugment:
    @given(seed=st.integers(0, 200))
    def test_same_transform_for_every_frame(self, seed):
        frames = coordinate_frames(4)
        gop = GopSample(frames=tuple(frames[:3]), next_keyframe=frames[3])
        out = augment(gop, seed)
        names = {
            infer_transform(b, a)
            for b, a in zip(gop.all_frames(), out.all_frames())
        }
        assert len(names) == 1

    def test_all_four_transforms_reachable(self):
        frames = coordinate_frames(3)
        gop = GopSample(frames=tuple(frames[:2]), next_keyframe=frames[2])
        seen = set()
        for seed in range(64):
            seen.add(infer_transform(frames[0], augment(gop, seed).frames[0]))
        assert seen == {"identity", "hflip", "vflip", "rot180"}

    def test_flip_is_involution(self):
        frames = coordinate_frames(3)
        gop = GopSample(frames=tuple(frames[:2]), next_keyframe=frames[2])
        for seed in range(64):
            once = augment(gop, seed)
            twice = augment(once, seed)
            if infer_transform(frames[0], once.frames[0]) != "identity":
                for a, b in zip(twice.all_frames(), gop.all_frames()):
                    np.testing.assert_array_equal(a, b)


class TestRandomCrop:
    def _gop(self, h=288, w=352, n=3):
        frames = coordinate_frames(n + 1, h=h, w=w)
        return GopSample(frames=tuple(frames[:n]), next_keyframe=frames[n])

    def test_crop_96_from_cif(self):
        out = random_crop(self._gop(), 96, seed=0, block_size=32, scales=3)
        assert all(f.shape == (96, 96) for f in out.all_frames())

    def test_indivisible_size_rejected(self):
        with pytest.raises(ConfigError):
            random_crop(self._gop(), 80, seed=0, block_size=32, scales=3)

    def test_size_64_accepted_at_scale3(self):
        out = random_crop(self._gop(), 64, seed=1, block_size=32, scales=3)
        assert out.frames[0].shape == (64, 64)

    def test_oversized_crop_rejected(self):
        with pytest.raises(ValueError):
            random_crop(self._gop(h=64, w=64), 96, seed=0, block_size=32, scales=2)

    def test_same_window_across_frames(self):
        gop = self._gop(h=64, w=96)
        out = random_crop(gop, 32, seed=3, block_size=32, scales=1)
        # coordinates encode position: offsets must agree across frames
        base = out.frames[0] % 10000
        for k, frame in enumerate(out.all_frames()):
            np.testing.assert_array_equal(frame % 10000, base)


class TestLoaders:
    def test_image_dir_round_trip(self, frame_dir_factory):
        path = frame_dir_factory("seq", 4, height=24, width=32, seed=1)
        frames = load_image_dir(path)
        assert len(frames) == 4
        assert frames[0].shape == (24, 32)
        assert all(0.0 <= f.min() and f.max() <= 1.0 for f in frames)

    def test_empty_dir_rejected(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        with pytest.raises(DataError):
            load_image_dir(empty)

    def test_missing_dir_rejected(self, tmp_path):
        with pytest.raises(DataError):
            load_image_dir(tmp_path / "absent")

    def test_yuv_i420_loader(self, tmp_path):
        h, w = 16, 24
        frames = [
            (np.clip(f, 0, 1) * 255).astype(np.uint8)
            for f in synthetic_sequence(3, height=h, width=w, seed=2)
        ]
        path = tmp_path / "clip.yuv"
        with open(path, "wb") as fh:
            for frame in frames:
                fh.write(frame.tobytes())
                fh.write(np.full(w * h // 2, 128, dtype=np.uint8).tobytes())
        loaded = load_yuv_frames(path, width=w, height=h)
        assert len(loaded) == 3
        for got, src in zip(loaded, frames):
            np.testing.assert_allclose(got, src.astype(np.float64) / 255.0)

    def test_yuv_needs_dims(self, tmp_path):
        path = tmp_path / "clip.yuv"
        path.write_bytes(b"\x00" * 384)
        with pytest.raises(DataError):
            load_yuv_frames(path, width=0, height=0)

    def test_load_sequence_dispatch(self, frame_dir_factory, tmp_path):
        path = frame_dir_factory("seq2", 3, height=16, width=16, seed=0)
        assert len(load_sequence(path)) == 3
        with pytest.raises(DataError):
            load_sequence(tmp_path / "mystery.bin")


class TestGopDataset:
    def _dataset(self, seed=0):
        frames = synthetic_sequence(9, height=32, width=32, seed=4)
        return GopDataset(
            [frames], gop_size=2, crop_size=16, block_size=8, scales=2, seed=seed
        )

    def test_batches_pure_function_of_seed_epoch(self):
        a = [b.copy() for b in self._dataset(seed=9).epoch_batches(3, 2)]
        b = [b.copy() for b in self._dataset(seed=9).epoch_batches(3, 2)]
        assert len(a) == len(b)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_epochs_differ(self):
        ds = self._dataset(seed=9)
        a = np.concatenate([b.reshape(-1) for b in ds.epoch_batches(0, 2)])
        b = np.concatenate([b.reshape(-1) for b in ds.epoch_batches(1, 2)])
        assert not np.array_equal(a, b)

    def test_batch_shapes_and_range(self):
        for batch in self._dataset().epoch_batches(0, 3):
            assert batch.ndim == 4
            assert batch.shape[1:] == (3, 16, 16)
            assert batch.dtype == np.float32
            assert batch.min() >= 0.0 and batch.max() <= 1.0

    def test_empty_sources_rejected(self):
        with pytest.raises(ValueError):
            GopDataset([coordinate_frames(1)], gop_size=2, crop_size=16,
                       block_size=8, scales=2, seed=0)
