import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

import hitvcs.metrics as metrics_mod
from hitvcs.config import ModelConfig
from hitvcs.metrics import (
    FrameRecord,
    MetricReport,
    evaluate_sequences,
    gaussian_window,
    psnr,
    ssim,
)
from hitvcs.network import build_model
from hitvcs.report import (
    render_eval_figures,
    render_training_curve,
    save_frame_png,
    load_frame_png,
    write_metric_csv,
    write_metric_json,
)

from conftest import synthetic_sequence


def ssim_loop_oracle(a, b, window_size=11, sigma=1.5, k1=0.01, k2=0.03):
    """Straight-from-formula SSIM with explicit per-window loops."""
    window = gaussian_window(window_size, sigma)
    c1, c2 = k1**2, k2**2
    h, w = a.shape
    values = []
    for i in range(h - window_size + 1):
        for j in range(w - window_size + 1):
            pa = a[i : i + window_size, j : j + window_size]
            pb = b[i : i + window_size, j : j + window_size]
            mu_a = (window * pa).sum()
            mu_b = (window * pb).sum()
            var_a = (window * (pa - mu_a) ** 2).sum()
            var_b = (window * (pb - mu_b) ** 2).sum()
            cov = (window * (pa - mu_a) * (pb - mu_b)).sum()
            values.append(
                ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
            )
    return float(np.mean(values))


class TestPsnr:
    def test_identical_frames_hit_cap(self):
        a = np.random.default_rng(0).random((16, 16))
        assert psnr(a, a) == 100.0

    def test_uniform_difference_is_twenty_db(self):
        a = np.full((8, 8), 0.5)
        assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)

    def test_matches_two_line_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            a, b = rng.random((12, 18)), rng.random((12, 18))
            expected = 10.0 * np.log10(1.0 / np.mean((a - b) ** 2))
            assert psnr(a, b) == pytest.approx(expected, abs=1e-9)

    @given(seed=st.integers(0, 500))
    def test_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.random((8, 8)), rng.random((8, 8))
        assert psnr(a, b) == psnr(b, a)

    def test_strictly_decreasing_in_noise_amplitude(self):
        rng = np.random.default_rng(2)
        a = rng.random((16, 16))
        noise = rng.standard_normal((16, 16))
        values = [psnr(a, a + amp * noise) for amp in (0.01, 0.02, 0.05, 0.1)]
        assert all(x > y for x, y in zip(values, values[1:]))

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((4, 4)), np.zeros((4, 5)))


class TestSsim:
    def test_self_similarity_is_one(self):
        a = np.random.default_rng(3).random((16, 16))
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)

    @given(seed=st.integers(0, 300))
    def test_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.random((12, 12)), rng.random((12, 12))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_bounded_by_one(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            a, b = rng.random((14, 14)), rng.random((14, 14))
            assert abs(ssim(a, b)) <= 1.0 + 1e-12

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(3):
            a, b = rng.random((20, 28)), rng.random((20, 28))
            assert ssim(a, b) == pytest.approx(ssim_loop_oracle(a, b), abs=1e-6)

    def test_correlated_pair_matches_oracle(self):
        rng = np.random.default_rng(6)
        a = rng.random((24, 24))
        b = np.clip(a + 0.05 * rng.standard_normal(a.shape), 0, 1)
        assert ssim(a, b) == pytest.approx(ssim_loop_oracle(a, b), abs=1e-6)
        assert ssim(a, b) > 0.5

    def test_window_too_large_rejected(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((10, 30)), np.zeros((10, 30)))

    def test_gaussian_window_normalized(self):
        window = gaussian_window()
        assert window.shape == (11, 11)
        assert window.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.argmax(window) == 5 * 11 + 5


class TestEvaluateProtocol:
    def _model(self):
        cfg = ModelConfig(block_size=8, scales=2, gop_size=8, channels=4,
                          blocks_per_scale=1)
        return build_model(cfg, seed=0)

    def _sequences(self, n=6, frames=17):
        return {
            f"seq{i}": synthetic_sequence(frames, height=16, width=16, seed=i)
            for i in range(n)
        }

    def test_identity_stub_caps_metrics(self, monkeypatch):
        model = self._model()
        sequences = self._sequences(n=2)
        stash = {}

        def stub(measurements, model):
            frames = stash["gop"].all_frames()
            return [f.copy() for f in frames], [f.copy() for f in frames]

        real_sample_gop = metrics_mod.sample_gop

        def capture(gop, key_op, nonkey_op):
            stash["gop"] = gop
            return real_sample_gop(gop, key_op, nonkey_op)

        monkeypatch.setattr(metrics_mod, "sample_gop", capture)
        monkeypatch.setattr(metrics_mod, "reconstruct_gop", stub)
        report = evaluate_sequences(model, sequences)
        assert all(r.psnr_db == 100.0 for r in report.rows)
        assert all(r.ssim == pytest.approx(1.0, abs=1e-12) for r in report.rows)

    def test_row_counts_and_types(self):
        model = self._model()
        report = evaluate_sequences(model, self._sequences(n=6))
        assert len(report.rows) == 6 * 16
        for name in report.sequence_names():
            rows = report.select("all", sequence=name)
            assert [r.frame_index for r in rows] == list(range(16))
            assert [r.frame_type for r in rows].count("key") == 2
            assert [r.frame_type for r in rows].count("nonkey") == 14

    def test_short_sequence_rejected(self):
        from hitvcs.errors import DataError

        model = self._model()
        with pytest.raises(DataError):
            evaluate_sequences(model, {"short": synthetic_sequence(10, 16, 16)})

    def test_aggregates_split_key_and_nonkey(self):
        report = MetricReport()
        for i in range(4):
            report.rows.append(FrameRecord("s", i, "key" if i == 0 else "nonkey",
                                           40.0 if i == 0 else 30.0, 0.9))
        assert report.aggregate("all")["psnr_db"] == pytest.approx(32.5)
        assert report.aggregate("nonkey")["psnr_db"] == pytest.approx(30.0)
        assert report.aggregate("all") != report.aggregate("nonkey")


class TestReportWriters:
    def _report(self):
        report = MetricReport(metadata={"alpha_n": 0.1})
        for seq in ("a", "b"):
            for i in range(4):
                report.rows.append(
                    FrameRecord(seq, i, "key" if i == 0 else "nonkey",
                                30.0 + i, 0.9 + 0.01 * i)
                )
        return report

    def test_csv_layout(self, tmp_path):
        path = write_metric_csv(self._report(), tmp_path / "report.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "sequence,frame_index,frame_type,psnr_db,ssim"
        assert len([l for l in lines if ",sequence_mean," in l]) == 2
        assert len([l for l in lines if l.startswith("average,")]) == 2
        assert len(lines) == 1 + 8 + 2 + 2

    def test_json_mirror(self, tmp_path):
        path = write_metric_json(self._report(), tmp_path / "report.json")
        payload = json.loads(path.read_text())
        assert payload["metadata"]["alpha_n"] == 0.1
        assert len(payload["frames"]) == 8
        assert set(payload["per_sequence"]) == {"a", "b"}
        assert "aggregate" in payload and "aggregate_nonkey" in payload

    def test_figures_rendered(self, tmp_path):
        paths = render_eval_figures(self._report(), tmp_path)
        assert all(p.is_file() and p.stat().st_size > 0 for p in paths)

    def test_training_curve_rendered(self, tmp_path):
        rows = [
            {"step": i, "loss_total": 100.0 / (i + 1), "lr": 1e-4}
            for i in range(20)
        ]
        path = render_training_curve(rows, tmp_path / "curve.png")
        assert path.is_file() and path.stat().st_size > 0

    def test_frame_png_round_trip(self, tmp_path):
        frame = synthetic_sequence(1, height=16, width=16, seed=7)[0]
        path = save_frame_png(frame, tmp_path / "f.png")
        back = load_frame_png(path)
        assert np.abs(back - frame).max() <= 0.5 / 255.0 + 1e-12
