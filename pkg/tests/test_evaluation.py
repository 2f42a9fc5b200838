import csv

import numpy as np
import pytest

from noisesep.errors import ConfigError, ParameterError
from noisesep.evaluation import (
    EVAL_HEADER, evaluate, evaluate_items, export_spectrogram, num_frames, read_pgm, score_outputs, sdr,
    sdri, si_snri, spectrogram,
)
from noisesep.objective import METRIC_CAP_DB, si_snr
from noisesep.separator import SeparatorConfig, SeparatorModel
from noisesep.signals import AudioSignal, DatasetConfig, make_dataset, make_item

from conftest import TINY


class TestMetrics:
    def test_identities(self, rng):
        ref, mix = rng.standard_normal(64), rng.standard_normal(64)
        assert si_snri(mix, ref, mix) == 0.0
        assert sdri(mix, ref, mix) == 0.0

    def test_perfect_estimate_is_cap_minus_mixture(self, rng):
        ref, mix = rng.standard_normal(64), rng.standard_normal(64)
        assert si_snri(ref, ref, mix) == pytest.approx(METRIC_CAP_DB - si_snr(mix, ref), abs=1e-12)
        assert sdri(ref, ref, mix) == pytest.approx(METRIC_CAP_DB - sdr(mix, ref), abs=1e-12)

    def test_si_snri_two_call_oracle(self, rng):
        ref, mix, est = rng.standard_normal((3, 64))
        assert si_snri(est, ref, mix) == si_snr(est, ref) - si_snr(mix, ref)

    def test_sdr_hand_example(self):
        assert sdr([1, 1], [1, 0]) == pytest.approx(0.0, abs=1e-12)
        assert sdr([1, 0.5], [1, 0]) == pytest.approx(10 * np.log10(4), abs=1e-12)
        assert sdri([1, 1], [1, 0], [1, 0.5]) == pytest.approx(-6.0206, abs=1e-4)

    def test_sdr_not_scale_invariant(self, rng):
        ref = rng.standard_normal(64)
        est = ref + 0.3 * rng.standard_normal(64)
        assert abs(sdr(2 * est, ref) - sdr(est, ref)) > 1.0
        assert abs(si_snr(2 * est, ref) - si_snr(est, ref)) < 1e-9


def stems_item(seed=0):
    return make_item(DatasetConfig("unused", duration_s=0.1), seed)


class TestScoring:
    def test_oracle_outputs_at_cap_with_identity(self):
        item = stems_item()
        row = score_outputs([s.samples for s in item.speakers], item.noise.samples, item)
        assert row.perm == (0, 1)
        mix = item.mixture.samples
        expect = np.mean([METRIC_CAP_DB - si_snr(mix, s.samples) for s in item.speakers])
        assert row.si_snri_db == pytest.approx(expect, abs=1e-9)
        assert row.noise_si_snr_db == METRIC_CAP_DB

    def test_shuffled_outputs_give_same_row(self, rng):
        item = stems_item(2)
        ests = [s.samples + 0.3 * rng.standard_normal(len(s)) for s in item.speakers]
        a = score_outputs(ests, None, item)
        b = score_outputs(ests[::-1], None, item)
        assert b.perm == a.perm[::-1]
        assert (a.si_snri_db, a.sdri_db) == (b.si_snri_db, b.sdri_db)


class TestEvaluate:
    @pytest.fixture
    def setup(self, tmp_path):
        manifest = make_dataset(DatasetConfig(tmp_path / "data", num_items=3, duration_s=0.1, seed=4))
        model = SeparatorModel.init(SeparatorConfig(**TINY), seed=0)
        ckpt = model.save(tmp_path / "m.ckpt")
        return manifest, ckpt, model

    def test_csv_contract(self, setup, tmp_path):
        manifest, ckpt, _ = setup
        rep = evaluate(ckpt, manifest.path, tmp_path / "r.csv")
        rows = list(csv.reader(open(tmp_path / "r.csv")))
        assert rows[0] == EVAL_HEADER == ["item", "perm", "si_snri_db", "sdri_db", "noise_si_snr_db"]
        body = rows[1:-1]
        assert len(body) == len(manifest) == len(rep.items)
        # aggregate recomputed from the CSV itself
        for col in (2, 3, 4):
            assert float(rows[-1][col]) == pytest.approx(np.mean([float(r[col]) for r in body]), abs=1e-5)

    def test_byte_identical_reruns(self, setup, tmp_path):
        manifest, ckpt, _ = setup
        evaluate(ckpt, manifest.path, tmp_path / "a.csv")
        evaluate(ckpt, manifest.path, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_workers_preserve_order(self, setup):
        manifest, _, model = setup
        items = manifest.load_all()
        a = evaluate_items(model, items, workers=1)
        b = evaluate_items(model, items, workers=3)
        assert a == b

    def test_speaker_count_mismatch(self, setup):
        _, _, model = setup
        item3 = make_item(DatasetConfig("unused", num_speakers=3, duration_s=0.1), 0)
        with pytest.raises(ConfigError):
            evaluate_items(model, [item3])


class TestSpectrogram:
    def test_tone_peak_bin(self):
        t = np.arange(8000) / 8000
        spec = spectrogram(AudioSignal(np.sin(2 * np.pi * 1000 * t)))
        assert spec.magnitude.shape[1] == 129
        assert np.all(np.argmax(spec.magnitude, axis=1) == 32)
        assert spec.bin_hz(32) == 1000.0

    def test_zero_signal(self):
        assert np.all(spectrogram(AudioSignal(np.zeros(600))).magnitude == 0)

    @pytest.mark.parametrize("T,frame,hop", [(256, 256, 64), (1000, 256, 64), (999, 128, 32), (300, 64, 50)])
    def test_frame_count(self, T, frame, hop):
        spec = spectrogram(AudioSignal(np.ones(T)), frame, hop)
        assert spec.magnitude.shape == (num_frames(T, frame, hop), frame // 2 + 1)
        assert num_frames(T, frame, hop) == (T - frame) // hop + 1

    def test_too_short(self):
        with pytest.raises(ParameterError):
            spectrogram(AudioSignal(np.ones(100)))

    def test_files(self, tmp_path, rng):
        sig = AudioSignal(rng.standard_normal(1000))
        pgm, csv_path, spec = export_spectrogram(sig, tmp_path / "s")
        img = read_pgm(pgm)
        assert img.shape == (129, spec.magnitude.shape[0])
        assert img.min() == 0 and img.max() == 255
        np.testing.assert_allclose(np.loadtxt(csv_path, delimiter=","), spec.magnitude, rtol=1e-7)
