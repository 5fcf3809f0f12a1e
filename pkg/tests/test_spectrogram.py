import librosa
import numpy as np
import pytest

from first_shot_asd.audio_io import AudioClip
from first_shot_asd.errors import ConfigError
from first_shot_asd.spectrogram import (CACHE_HEADER, Spectrogram, SpectrogramCache, SpectrogramConfig,
                                        SpectrogramError, load_spectrogram, log_mel, mel_filterbank,
                                        save_spectrogram)


class TestSpectrogramConfig:
    def test_defaults(self):
        cfg = SpectrogramConfig()
        assert (cfg.n_fft, cfg.hop, cfg.n_mels, cfg.sample_rate) == (1024, 512, 128, 16000)

    @pytest.mark.parametrize("options", [
        {"n_fft": 256, "hop": 512},
        {"hop": 0},
        {"fmax": 9000.0},
        {"fmin": 8000.0},
        {"n_mels": 0},
        {"log_floor": 0.0},
    ])
    def test_invalid(self, options):
        with pytest.raises(ConfigError):
            SpectrogramConfig.from_dict(options)

    def test_frame_count(self):
        assert SpectrogramConfig().n_frames(16000) == 30


class TestLogMel:
    def test_shape(self):
        spec = log_mel(AudioClip(np.zeros(16000), 16000), SpectrogramConfig())
        assert spec.values.shape == (128, 30)

    def test_all_zero_clip_is_floored(self):
        cfg = SpectrogramConfig()
        spec = log_mel(AudioClip(np.zeros(16000), 16000), cfg)
        assert np.all(spec.values == np.log(cfg.log_floor))

    def test_sine_peaks_in_its_mel_bin(self):
        cfg = SpectrogramConfig()
        k = 100
        centre = librosa.mel_frequencies(n_mels=cfg.n_mels + 2, fmin=cfg.fmin, fmax=cfg.fmax, htk=False)[k + 1]
        t = np.arange(32000) / cfg.sample_rate
        spec = log_mel(AudioClip(0.5 * np.sin(2 * np.pi * centre * t), cfg.sample_rate), cfg)
        assert int(np.argmax(spec.values.mean(axis=1))) == k

    def test_doubling_amplitude_adds_log4(self, rng):
        cfg = SpectrogramConfig()
        samples = 0.1 * rng.standard_normal(16000)
        quiet = log_mel(AudioClip(samples, 16000), cfg).values
        loud = log_mel(AudioClip(2 * samples, 16000), cfg).values
        above = quiet > np.log(cfg.log_floor) + 1.0
        assert above.all()
        np.testing.assert_allclose(loud - quiet, np.log(4.0), atol=1e-9)

    def test_dropping_one_hop_drops_one_frame(self, rng, small_spectrogram_cfg):
        cfg = small_spectrogram_cfg
        samples = 0.1 * rng.standard_normal(cfg.n_fft + 10 * cfg.hop)
        full = log_mel(AudioClip(samples, cfg.sample_rate), cfg).values
        shifted = log_mel(AudioClip(samples[cfg.hop:], cfg.sample_rate), cfg).values
        assert full.shape == (cfg.n_mels, 11)
        assert shifted.shape == (cfg.n_mels, 10)
        np.testing.assert_allclose(shifted, full[:, 1:], rtol=0, atol=1e-9)

    def test_sample_rate_mismatch(self):
        with pytest.raises(SpectrogramError, match="Sample rate mismatch"):
            log_mel(AudioClip(np.zeros(16000), 8000), SpectrogramConfig())

    def test_too_short(self):
        with pytest.raises(SpectrogramError, match="shorter than one frame"):
            log_mel(AudioClip(np.zeros(1000), 16000), SpectrogramConfig())


class TestMelFilterbank:
    def test_cached_and_read_only(self):
        cfg = SpectrogramConfig()
        fb = mel_filterbank(cfg)
        assert fb is mel_filterbank(SpectrogramConfig())
        assert fb.shape == (128, 513)
        assert not fb.flags.writeable

    def test_empty_filters_rejected(self):
        with pytest.raises(SpectrogramError, match="empty filters"):
            mel_filterbank(SpectrogramConfig(n_fft=64, hop=32, n_mels=128))


class TestSpectrogramFile:
    def test_round_trip_is_exact(self, tmp_path, rng):
        spec = Spectrogram(rng.standard_normal((4, 7)))
        path = save_spectrogram(spec, tmp_path / "x.lmel")
        raw = path.read_bytes()
        assert raw[:4] == b"LMEL"
        assert len(raw) == CACHE_HEADER.size + 8 * 28
        np.testing.assert_array_equal(load_spectrogram(path).values, spec.values)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.lmel"
        path.write_bytes(CACHE_HEADER.pack(b"XXXX", 1, 1) + b"\0" * 8)
        with pytest.raises(SpectrogramError, match="magic"):
            load_spectrogram(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "short.lmel"
        path.write_bytes(CACHE_HEADER.pack(b"LMEL", 2, 2) + b"\0" * 8)
        with pytest.raises(SpectrogramError, match="does not match"):
            load_spectrogram(path)

    def test_non_finite_rejected(self):
        with pytest.raises(SpectrogramError):
            Spectrogram(np.array([[0.0, np.inf]]))


class TestSpectrogramCache:
    def test_second_lookup_hits(self, tmp_path, write_wav):
        source = write_wav("clip.wav", np.zeros(100, dtype=np.int16))
        cache = SpectrogramCache(tmp_path / "cache")
        calls = []

        def compute():
            calls.append(1)
            return Spectrogram(np.ones((2, 3)))

        first = cache.get_or_compute(source, {"n_mels": 2}, compute)
        second = cache.get_or_compute(source, {"n_mels": 2}, compute)
        assert len(calls) == 1
        assert (cache.hits, cache.misses) == (1, 1)
        np.testing.assert_array_equal(first.values, second.values)

    def test_settings_change_the_key(self, tmp_path, write_wav):
        source = write_wav("clip.wav", np.zeros(100, dtype=np.int16))
        cache = SpectrogramCache(tmp_path / "cache")
        assert cache.key(source, {"n_mels": 2}) != cache.key(source, {"n_mels": 3})

    def test_disabled(self, tmp_path):
        cache = SpectrogramCache(None)
        assert not cache.enabled
        spec = cache.get_or_compute(tmp_path / "unused.wav", {}, lambda: Spectrogram(np.ones((1, 1))))
        assert spec.values.shape == (1, 1)
