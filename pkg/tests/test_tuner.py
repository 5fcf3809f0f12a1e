import numpy as np
import pytest

from first_shot_asd.audio_io import AudioClip
from first_shot_asd.errors import ConfigError
from first_shot_asd.gmm import GmmFitConfig
from first_shot_asd.spectrogram import Spectrogram, SpectrogramConfig, log_mel
from first_shot_asd.synth_interface import stub_signal
from first_shot_asd.tuner import (BASELINES, GridPoint, RTuner, TunerError, TuningConfig, TuningResult,
                                  compare_selected_r, tune_r, tune_r_from_spectrograms, write_trace_csv)

SAMPLE_RATE = 16000
FRONT_END = SpectrogramConfig(n_fft=512, hop=256, n_mels=32, sample_rate=SAMPLE_RATE)


def clips(n, anomalous, seed):
    rng = np.random.default_rng(seed)
    return [AudioClip(stub_signal(440.0, SAMPLE_RATE, SAMPLE_RATE, rng, anomalous), SAMPLE_RATE) for _ in range(n)]


@pytest.fixture(scope="module")
def burst_corpus():
    real = [log_mel(c, FRONT_END) for c in clips(20, False, 1)]
    normals = [log_mel(c, FRONT_END) for c in clips(10, False, 2)]
    anomalies = [log_mel(c, FRONT_END) for c in clips(10, True, 3)]
    return real, normals, anomalies


class TestTuningConfig:
    def test_default_grid(self):
        grid = TuningConfig().grid()
        assert len(grid) == 111
        assert grid[0] == 0.0
        assert grid[1] == 0.01
        assert grid[-1] == 1.1

    def test_grids_share_values(self):
        short = TuningConfig(r_max=1.0).grid()
        assert short == TuningConfig().grid()[:101]

    @pytest.mark.parametrize("options", [
        {"r_step": 0.0},
        {"r_min": 0.8, "r_max": 0.5},
        {"r_max": 1.5},
        {"objective_mode": "median"},
        {"p": 0.0},
    ])
    def test_invalid(self, options):
        with pytest.raises(ConfigError):
            TuningConfig.from_dict(options)


class TestTune:
    def test_burst_anomalies_prefer_small_r(self, burst_corpus):
        cfg = TuningConfig(r_step=0.1, gmm_cfg=GmmFitConfig(n_components=2))
        result = tune_r_from_spectrograms(*burst_corpus, cfg, machine_type="toy")
        assert [p.r for p in result.trace] == cfg.grid()
        assert result.best_objective == max(p.objective for p in result.trace)
        assert result.r_selected <= 0.5
        assert result.baselines["max_pooling"].objective >= result.baselines["average_pooling"].objective
        assert result.best_objective >= result.baselines["average_pooling"].objective

    def test_extended_range_is_never_worse(self, burst_corpus):
        full = tune_r_from_spectrograms(*burst_corpus, TuningConfig(r_step=0.1))
        short = tune_r_from_spectrograms(*burst_corpus, TuningConfig(r_step=0.1, r_max=1.0))
        assert full.best_objective >= short.best_objective
        by_r = {p.r: p.objective for p in full.trace}
        for point in short.trace:
            assert by_r[point.r] == point.objective

    def test_constant_scores_select_r_min(self):
        flat = [Spectrogram(np.ones((4, 6))) for _ in range(5)]
        result = tune_r_from_spectrograms(flat, flat, flat, TuningConfig(r_min=0.2, r_step=0.3, p=0.5))
        assert result.r_selected == 0.2
        assert {p.auc for p in result.trace} == {0.5}

    def test_workers_do_not_change_the_trace(self, burst_corpus):
        cfg = TuningConfig(r_step=0.25)
        serial = tune_r_from_spectrograms(*burst_corpus, cfg, workers=1)
        threaded = tune_r_from_spectrograms(*burst_corpus, cfg, workers=3)
        assert serial.trace == threaded.trace

    def test_baselines_outside_the_grid(self, burst_corpus):
        result = tune_r_from_spectrograms(*burst_corpus, TuningConfig(r_min=0.3, r_max=0.6, r_step=0.1))
        assert set(result.baselines) == set(BASELINES)
        assert result.baselines["max_pooling"].r == 0.0
        assert result.baselines["average_pooling"].r == 1.0

    def test_from_audio_clips(self):
        result = tune_r(clips(6, False, 4), clips(3, False, 5), clips(3, True, 6),
                        TuningConfig(r_step=0.5, p=0.5), spectrogram_cfg=FRONT_END, machine_type="toy")
        assert result.machine_type == "toy"
        assert [p.r for p in result.trace] == [0.0, 0.5, 1.0]

    def test_missing_anomalies(self):
        with pytest.raises(TunerError, match="synthetic anomaly"):
            tune_r(clips(3, False, 1), clips(2, False, 2), [], TuningConfig(), spectrogram_cfg=FRONT_END)

    def test_too_few_real_normals(self, burst_corpus):
        _, normals, anomalies = burst_corpus
        with pytest.raises(TunerError, match="real normal"):
            tune_r_from_spectrograms(normals[:1], normals, anomalies, TuningConfig())

    def test_mixed_front_ends(self, burst_corpus):
        real, normals, _ = burst_corpus
        odd = [Spectrogram(np.ones((8, 10)))]
        with pytest.raises(TunerError, match="front-end"):
            tune_r_from_spectrograms(real, normals, odd, TuningConfig())

    def test_evaluate_before_prepare(self):
        with pytest.raises(TunerError):
            RTuner(TuningConfig()).evaluate_r(0.5)


class TestResultFiles:
    def test_trace_csv(self, tmp_path):
        result = TuningResult("toy", 0.1, [GridPoint(0.0, 0.5, 0.5, 0.5), GridPoint(0.1, 0.9, 0.95, 0.85)])
        lines = write_trace_csv(result, tmp_path / "t.csv").read_text().splitlines()
        assert lines == ["r,objective,auc,pauc", "0.0,0.5,0.5,0.5", "0.1,0.9,0.95,0.85"]
        assert result.selected.objective == 0.9

    def test_compare_selected_r(self):
        synthetic = TuningResult("toy", 0.99, [GridPoint(0.99, 1.0, 1.0, 1.0)])
        reference = TuningResult("toy", 1.02, [GridPoint(1.02, 1.0, 1.0, 1.0)])
        assert compare_selected_r(synthetic, reference) == {
            "machine_type": "toy", "synthetic_r": 0.99, "real_r": 1.02, "difference": 0.03,
        }
