from pathlib import Path

import numpy as np
import pytest
from scipy.io import wavfile

from first_shot_asd.config import Config
from first_shot_asd.spectrogram import SpectrogramConfig


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def write_wav(tmp_path):
    """Write raw sample data with scipy and return the path."""

    def _write(name, data, sample_rate=16000):
        path = Path(tmp_path) / name
        path.parent.mkdir(parents=True, exist_ok=True)
        wavfile.write(str(path), sample_rate, data)
        return path

    return _write


@pytest.fixture
def small_spectrogram_cfg():
    return SpectrogramConfig(n_fft=512, hop=256, n_mels=32, sample_rate=16000, fmin=0.0, fmax=8000.0)


@pytest.fixture
def config():
    return Config()
