import numpy as np
import pytest
from scipy.io import wavfile

from speechq import signal as sig


def write_pcm16(path, samples, rate=16000):
    wavfile.write(path, rate, np.asarray(samples, dtype=np.int16))


@pytest.fixture
def cfg():
    return sig.StftConfig.for_sample_rate(16000)


class TestLoadWav:
    def test_silence(self, tmp_path):
        path = tmp_path / "silence.wav"
        write_pcm16(path, np.zeros(16000))
        w = sig.load_wav(path)
        assert w.sample_rate == 16000
        assert len(w) == 16000
        assert np.all(w.samples == 0.0)

    def test_full_scale_pcm16(self, tmp_path):
        path = tmp_path / "fs.wav"
        write_pcm16(path, np.array([-32768, 32767, 0]))
        w = sig.load_wav(path)
        assert w.samples[0] == -1.0
        assert abs(w.samples[1] - 32767 / 32768) < 1e-12

    def test_float32_passthrough(self, tmp_path):
        path = tmp_path / "f32.wav"
        wavfile.write(path, 8000, np.array([0.25, -0.5], dtype=np.float32))
        w = sig.load_wav(path)
        assert w.sample_rate == 8000
        np.testing.assert_allclose(w.samples, [0.25, -0.5], atol=1e-7)

    def test_stereo_keeps_left_with_warning(self, tmp_path):
        path = tmp_path / "stereo.wav"
        stereo = np.stack([np.full(100, 1000), np.full(100, -1000)], axis=1).astype(np.int16)
        wavfile.write(path, 16000, stereo)
        with pytest.warns(UserWarning, match="channels"):
            w = sig.load_wav(path)
        assert np.all(w.samples > 0)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            sig.load_wav(tmp_path / "nope.wav")

    def test_malformed_header(self, tmp_path):
        path = tmp_path / "junk.wav"
        path.write_bytes(b"this is not a RIFF file at all, not even close")
        with pytest.raises(sig.WavFormatError, match="malformed"):
            sig.load_wav(path)

    def test_unsupported_encoding(self, tmp_path):
        path = tmp_path / "i32.wav"
        wavfile.write(path, 16000, np.zeros(100, dtype=np.int32))
        with pytest.raises(sig.WavFormatError, match="unsupported"):
            sig.load_wav(path)

    def test_save_roundtrip_float32(self, tmp_path):
        path = tmp_path / "rt.wav"
        w = sig.Waveform(np.linspace(-0.9, 0.9, 50), 16000)
        sig.save_wav(path, w)
        back = sig.load_wav(path)
        np.testing.assert_allclose(back.samples, w.samples, atol=1e-7)


class TestWaveform:
    def test_rejects_nan(self):
        with pytest.raises(ValueError, match="non-finite"):
            sig.Waveform(np.array([0.0, np.nan]), 16000)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            sig.Waveform(np.array([]), 16000)

    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            sig.Waveform(np.zeros(10), 0)


class TestStft:
    def test_zero_input(self, cfg):
        w = sig.Waveform(np.zeros(16000), 16000)
        spec = sig.stft(w, cfg)
        assert spec.shape == (257, 61)
        assert np.all(spec == 0)

    def test_frame_count_arithmetic(self, cfg):
        assert cfg.num_frames(16000) == (16000 - 512) // 256 + 1 == 61

    def test_too_short_input(self, cfg):
        w = sig.Waveform(np.zeros(100), 16000)
        with pytest.raises(ValueError, match="shorter than one window"):
            sig.stft(w, cfg)

    def test_cosine_at_bin_center_matches_dft_oracle(self, cfg):
        # Oracle: the plain DFT definition applied to each windowed frame.
        k = 20
        freq = k * 16000 / cfg.fft_len
        t = np.arange(8192) / 16000
        w = sig.Waveform(np.cos(2 * np.pi * freq * t), 16000)
        spec = sig.stft(w, cfg)

        n = np.arange(cfg.window_len)
        for frame_idx in (0, 5, 17):
            frame = w.samples[frame_idx * cfg.hop_len : frame_idx * cfg.hop_len + cfg.window_len]
            windowed = frame * cfg.window
            oracle = np.array(
                [np.sum(windowed * np.exp(-2j * np.pi * f * n / cfg.fft_len)) for f in range(cfg.n_bins)]
            )
            np.testing.assert_allclose(spec[:, frame_idx], oracle, atol=1e-9)
            mags = np.abs(oracle)
            assert np.argmax(mags) == k
            outside_main_lobe = np.delete(mags, range(k - 3, k + 4))
            assert mags[k] > 20 * np.max(outside_main_lobe)

    def test_linearity(self, cfg):
        rng = np.random.default_rng(5)
        x = rng.standard_normal(4000)
        y = rng.standard_normal(4000)
        a, b = 1.7, -0.6
        left = sig.stft(sig.Waveform(a * x + b * y, 16000), cfg)
        right = a * sig.stft(sig.Waveform(x, 16000), cfg) + b * sig.stft(sig.Waveform(y, 16000), cfg)
        np.testing.assert_allclose(left, right, atol=1e-12)

    def test_parseval_per_frame(self, cfg):
        rng = np.random.default_rng(6)
        w = sig.Waveform(rng.standard_normal(4000), 16000)
        spec = sig.stft(w, cfg)
        weights = np.full(cfg.n_bins, 2.0)
        weights[0] = weights[-1] = 1.0
        for frame_idx in range(spec.shape[1]):
            frame = w.samples[frame_idx * cfg.hop_len : frame_idx * cfg.hop_len + cfg.window_len]
            time_energy = np.sum((frame * cfg.window) ** 2)
            spec_energy = np.sum(weights * np.abs(spec[:, frame_idx]) ** 2) / cfg.fft_len
            assert abs(time_energy - spec_energy) <= 1e-9 * max(time_energy, 1e-30)


class TestIstft:
    def test_roundtrip_interior(self, cfg):
        rng = np.random.default_rng(7)
        w = sig.Waveform(rng.standard_normal(16000), 16000)
        back = sig.istft(sig.stft(w, cfg), cfg)
        assert len(back) == 15872
        interior = slice(cfg.window_len, len(back) - cfg.window_len)
        num = np.linalg.norm(back.samples[interior] - w.samples[: len(back)][interior])
        den = np.linalg.norm(w.samples[: len(back)][interior])
        assert num / den < 1e-6

    def test_zero_spectrogram(self, cfg):
        spec = np.zeros((257, 10), dtype=complex)
        w = sig.istft(spec, cfg)
        assert np.all(w.samples == 0)
        assert len(w) == 9 * 256 + 512

    def test_dimension_mismatch(self, cfg):
        with pytest.raises(ValueError, match="does not match"):
            sig.istft(np.zeros((100, 10), dtype=complex), cfg)

    def test_roundtrip_many_seeds(self, cfg):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            w = sig.Waveform(rng.standard_normal(6000), 16000)
            back = sig.istft(sig.stft(w, cfg), cfg)
            interior = slice(cfg.window_len, len(back) - cfg.window_len)
            ref = w.samples[: len(back)]
            err = np.linalg.norm(back.samples[interior] - ref[interior]) / np.linalg.norm(ref[interior])
            assert err < 1e-6


class TestLps:
    def test_unit_magnitude(self):
        spec = np.ones((4, 5), dtype=complex)
        np.testing.assert_allclose(sig.lps(spec), 0.0, atol=1e-15)

    def test_floor_on_zeros(self):
        out = sig.lps(np.zeros((3, 3), dtype=complex))
        np.testing.assert_allclose(out, np.log(1e-12))

    def test_magnitude_e(self):
        spec = np.full((2, 2), np.e, dtype=complex)
        np.testing.assert_allclose(sig.lps(spec), 2.0, atol=1e-12)


class TestStftConfig:
    def test_hop_must_be_half_window(self):
        with pytest.raises(ValueError, match="hop_len"):
            sig.StftConfig(window_len=512, hop_len=128)

    def test_cola_window_enforced(self):
        with pytest.raises(ValueError, match="overlap-add"):
            sig.StftConfig(window_len=512, hop_len=256, window=np.ones(512))

    def test_standard_16k(self):
        cfg = sig.StftConfig.for_sample_rate(16000)
        assert (cfg.window_len, cfg.hop_len, cfg.n_bins) == (512, 256, 257)
