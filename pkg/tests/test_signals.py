import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import periodogram

from noisesep.errors import DegenerateInputError, FormatError, ParameterError
from noisesep.signals import (
    AudioSignal, DatasetConfig, MixtureItem, NOISE_KINDS, SOURCE_KINDS, make_dataset, make_item,
    measured_snr_db, mix_at_snr, read_manifest, read_wav, synth_noise, synth_source, write_wav,
)


class TestAudioSignal:
    @pytest.mark.parametrize("samples,sr", [([], 8000), ([0.1], 0), ([np.nan], 8000), ([np.inf], 8000)])
    def test_invariants(self, samples, sr):
        with pytest.raises(ParameterError):
            AudioSignal(np.asarray(samples, dtype=float), sr)

    def test_mixture_item_lengths_must_agree(self):
        a, b = AudioSignal(np.zeros(4)), AudioSignal(np.zeros(5))
        with pytest.raises(ParameterError):
            MixtureItem(a, [a, a], b, 0.0)


class TestSynthSource:
    def test_length_and_peak(self):
        s = synth_source("harmonic", 1.0, 220.0, seed=7)
        assert len(s) == 8000
        assert np.max(np.abs(s.samples)) == pytest.approx(0.5, abs=1e-15)

    def test_deterministic(self):
        a = synth_source("harmonic", 1.0, 220.0, seed=7).samples
        b = synth_source("harmonic", 1.0, 220.0, seed=7).samples
        assert a.tobytes() == b.tobytes()

    def test_chirp_autocorrelation_at_zero_lag(self):
        x = synth_source("chirp", 0.5, 300.0, seed=1).samples
        ac = np.correlate(x, x, mode="full")
        assert ac[len(x) - 1] / np.dot(x, x) == pytest.approx(1.0, abs=1e-15)
        assert np.argmax(ac) == len(x) - 1

    @pytest.mark.parametrize("kwargs", [dict(duration_s=0.0), dict(duration_s=-1.0), dict(f0_hz=0.0),
                                        dict(f0_hz=4000.0), dict(f0_hz=5000.0)])
    def test_invalid_arguments(self, kwargs):
        args = dict(kind="harmonic", duration_s=0.5, f0_hz=200.0, seed=0) | kwargs
        with pytest.raises(ParameterError):
            synth_source(**args)

    def test_unknown_kind(self):
        with pytest.raises(ParameterError):
            synth_source("speech", 0.5, 200.0, 0)

    def test_distinct_sources_weakly_correlated(self):
        sigs = [synth_source(k, 1.0, f, seed=i).samples
                for i, (k, f) in enumerate(zip(SOURCE_KINDS, (150.0, 230.0, 340.0)))]
        for i in range(3):
            for j in range(i + 1, 3):
                a, b = sigs[i], sigs[j]
                assert abs(np.dot(a, b)) / np.sqrt(np.dot(a, a) * np.dot(b, b)) < 0.5


class TestSynthNoise:
    @pytest.mark.parametrize("kind", NOISE_KINDS)
    def test_zero_mean(self, kind):
        n = synth_noise(kind, 1.0, seed=3).samples
        assert len(n) == 8000
        assert abs(n.mean()) < 1e-3 * np.sqrt(np.mean(n ** 2))

    def test_seed_changes_sequence(self):
        a = synth_noise("white", 1.0, seed=3).samples
        b = synth_noise("white", 1.0, seed=4).samples
        assert not np.array_equal(a, b)
        assert np.array_equal(a, synth_noise("white", 1.0, seed=3).samples)

    def test_pink_energy_tilts_low(self):
        f, p = periodogram(synth_noise("pink", 2.0, seed=5).samples, fs=8000)
        low = p[(f >= 50) & (f <= 500)].sum()
        high = p[(f >= 2000) & (f <= 3950)].sum()
        assert low > high

    def test_invalid_duration(self):
        with pytest.raises(ParameterError):
            synth_noise("white", 0.0, seed=0)


class TestMixAtSnr:
    def _const_power(self, p, n=1000, seed=0):
        x = np.random.default_rng(seed).choice([-1.0, 1.0], size=n)
        return AudioSignal(x * np.sqrt(p))

    def test_snr_zero_matches_loudest(self):
        s1, s2 = self._const_power(0.04), self._const_power(0.01, seed=1)
        item = mix_at_snr([s1, s2], self._const_power(1.0, seed=2), 0.0)
        assert item.noise.power == pytest.approx(0.04, rel=1e-12)
        assert item.speakers[0].samples is not None
        np.testing.assert_array_equal(item.speakers[0].samples, s1.samples)

    def test_plus_three_db(self):
        item = mix_at_snr([self._const_power(0.04)], self._const_power(1.0, seed=2), 3.0)
        assert item.noise.power == pytest.approx(0.04 / 10 ** 0.3, rel=1e-12)
        assert item.noise.power == pytest.approx(0.02005, abs=1e-5)

    def test_mixture_is_sum_of_stems(self):
        item = make_item(DatasetConfig("unused"), 0)
        total = sum(s.samples for s in item.speakers) + item.noise.samples
        np.testing.assert_allclose(item.mixture.samples, total, atol=1e-6)

    @settings(max_examples=40, deadline=None)
    @given(snr=st.floats(-20, 20), seed=st.integers(0, 10_000))
    def test_measured_snr_exact(self, snr, seed):
        rng = np.random.default_rng(seed)
        spk = [AudioSignal(rng.standard_normal(64) * rng.uniform(0.1, 2)) for _ in range(2)]
        item = mix_at_snr(spk, AudioSignal(rng.standard_normal(64)), snr)
        assert measured_snr_db(item) == pytest.approx(snr, abs=1e-9)

    def test_silent_noise_is_degenerate(self):
        with pytest.raises(DegenerateInputError):
            mix_at_snr([self._const_power(0.1)], AudioSignal(np.zeros(1000)), 0.0)

    def test_silent_speakers_are_degenerate(self):
        with pytest.raises(DegenerateInputError):
            mix_at_snr([AudioSignal(np.zeros(1000))], self._const_power(1.0), 0.0)


class TestWav:
    def test_pcm16_round_trip(self, tmp_path):
        info = write_wav(tmp_path / "a.wav", AudioSignal(np.array([0.0, 0.5, -0.5])), "pcm16")
        back = read_wav(info.path)
        np.testing.assert_allclose(back.samples, [0.0, 0.5, -0.5], atol=1 / 32768)
        assert info.clipped_samples == 0

    def test_float32_bit_exact(self, tmp_path, rng):
        x = rng.uniform(-1, 1, 257).astype(np.float32).astype(np.float64)
        back = read_wav(write_wav(tmp_path / "f.wav", AudioSignal(x, 16000), "float32").path)
        assert back.sample_rate == 16000
        assert back.samples.tobytes() == x.tobytes()

    def test_clipping_is_recorded(self, tmp_path):
        with pytest.warns(RuntimeWarning):
            info = write_wav(tmp_path / "c.wav", AudioSignal(np.array([0.0, 1.5, -2.0])), "pcm16")
        assert info.clipped_samples == 2
        assert info.warnings

    def test_header_only_file(self, tmp_path):
        import struct
        hdr = b"RIFF" + struct.pack("<I", 36) + b"WAVEfmt " + struct.pack("<IHHIIHH", 16, 1, 1, 8000, 16000, 2, 16)
        hdr += b"data" + struct.pack("<I", 0)
        assert len(hdr) == 44
        (tmp_path / "h.wav").write_bytes(hdr)
        with pytest.raises(FormatError):
            read_wav(tmp_path / "h.wav")

    def test_stereo_rejected(self, tmp_path):
        from scipy.io import wavfile
        wavfile.write(tmp_path / "s.wav", 8000, np.zeros((10, 2), dtype=np.int16))
        with pytest.raises(FormatError):
            read_wav(tmp_path / "s.wav")

    def test_garbage_rejected(self, tmp_path):
        (tmp_path / "g.wav").write_bytes(b"not a wav at all")
        with pytest.raises(FormatError):
            read_wav(tmp_path / "g.wav")

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(-1, 1), min_size=1, max_size=64))
    def test_pcm16_bound_property(self, tmp_path_factory, values):
        path = tmp_path_factory.mktemp("w") / "p.wav"
        back = read_wav(write_wav(path, AudioSignal(np.array(values)), "pcm16").path)
        assert np.max(np.abs(back.samples - np.array(values))) <= 1 / 32768


class TestDataset:
    def test_counts_and_snr_range(self, tmp_path):
        m = make_dataset(DatasetConfig(tmp_path, num_items=8, duration_s=1.0, snr_range=(-6, 3), seed=0))
        wavs = sorted(p.name for p in (tmp_path / "train").glob("*.wav"))
        assert sum(n.endswith("_mix.wav") for n in wavs) == 8
        assert sum(n.endswith(("_s1.wav", "_s2.wav")) for n in wavs) == 16
        assert sum(n.endswith("_noise.wav") for n in wavs) == 8
        assert all(-6 <= e.snr_db <= 3 for e in m.items)

    def test_byte_identical_reruns(self, tmp_path):
        cfg = dict(num_items=3, duration_s=0.25, seed=11)
        make_dataset(DatasetConfig(tmp_path / "a", **cfg))
        make_dataset(DatasetConfig(tmp_path / "b", **cfg))
        for p in sorted((tmp_path / "a").rglob("*")):
            if p.is_file():
                assert p.read_bytes() == (tmp_path / "b" / p.relative_to(tmp_path / "a")).read_bytes()

    def test_manifest_round_trip(self, tmp_path):
        m = make_dataset(DatasetConfig(tmp_path, num_items=2, num_speakers=3, duration_s=0.25))
        back = read_manifest(m.path)
        assert back.num_speakers == 3 and back.sample_rate == 8000 and back.split == "train"
        item = back.load_item(1)
        assert item.num_speakers == 3
        ref = make_item(DatasetConfig(tmp_path, num_items=2, num_speakers=3, duration_s=0.25), 1)
        np.testing.assert_allclose(item.mixture.samples, ref.mixture.samples, atol=1e-7)

    def test_manifest_missing_file(self, tmp_path):
        m = make_dataset(DatasetConfig(tmp_path, num_items=1, duration_s=0.1))
        next((tmp_path / "train").glob("*_noise.wav")).unlink()
        with pytest.raises((FormatError, FileNotFoundError)):
            read_manifest(m.path)

    @pytest.mark.parametrize("kw", [dict(snr_range=(-30, 0)), dict(num_speakers=4), dict(num_items=0)])
    def test_invalid_config(self, tmp_path, kw):
        with pytest.raises(ParameterError):
            make_dataset(DatasetConfig(tmp_path, **kw))

    def test_unwritable_directory(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError):
            make_dataset(DatasetConfig(blocker / "sub", num_items=1, duration_s=0.1))
