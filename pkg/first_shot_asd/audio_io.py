"""
Audio I/O Module

Decodes RIFF/WAVE clips into mono float buffers, writes them back, and
implements the frame-energy silence removal applied to synthetic clips.
"""

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
from scipy.io import wavfile

from .errors import AsdError, ConfigError

logger = logging.getLogger(__name__)

PCM16_SCALE = 32768.0

# Frames with exactly zero energy count as silent regardless of the threshold
SILENT_DB = -np.inf


class AudioIOError(AsdError):
    """Exception raised when an audio file cannot be read or written."""
    pass


@dataclass(eq=False)
class AudioClip:
    """A mono clip of amplitudes in [-1, 1] at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: int
    source_path: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if int(self.sample_rate) <= 0:
            raise AudioIOError(f"Sample rate must be positive, got {self.sample_rate}: {self.source_path}")
        self.sample_rate = int(self.sample_rate)
        if not np.all(np.isfinite(self.samples)):
            raise AudioIOError(f"Audio contains non-finite samples: {self.source_path}")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        """Clip length in seconds."""
        return len(self) / self.sample_rate

    def with_samples(self, samples: np.ndarray) -> "AudioClip":
        """Return a clip with the same rate and source but new samples."""
        return AudioClip(samples=samples, sample_rate=self.sample_rate, source_path=self.source_path)


@dataclass(frozen=True)
class SilenceRemovalConfig:
    """Options for the remove-silence preprocessing.

    threshold_db is relative: frames quieter than the loudest frame by more
    than this many dB are dropped.
    """

    enabled: bool = True
    threshold_db: float = 30.0
    frame_len: int = 1024
    hop_len: int = 512
    apply_to_real: bool = False

    def __post_init__(self):
        if not self.threshold_db > 0:
            raise ConfigError(f"silence.threshold_db must be > 0, got {self.threshold_db}")
        if not (self.frame_len >= self.hop_len >= 1):
            raise ConfigError(
                f"silence requires frame_len >= hop_len >= 1, got frame_len={self.frame_len}, hop_len={self.hop_len}"
            )

    @classmethod
    def from_dict(cls, options: Dict[str, Any]) -> "SilenceRemovalConfig":
        return cls(
            enabled=bool(options.get("enabled", True)),
            threshold_db=float(options.get("threshold_db", 30.0)),
            frame_len=int(options.get("frame_len", 1024)),
            hop_len=int(options.get("hop_len", 512)),
            apply_to_real=bool(options.get("apply_to_real", False)),
        )


def decode_wav(path: Union[str, Path]) -> AudioClip:
    """Decode a PCM 16-bit or IEEE float 32-bit WAV file into a mono clip.

    Multichannel audio is averaged to mono and 16-bit samples are scaled by
    1/32768, so -32768 maps to exactly -1.0.

    Args:
        path: Path to the WAV file

    Returns:
        The decoded AudioClip
    """
    path = Path(path)
    try:
        with warnings.catch_warnings():
            # Unknown RIFF chunks (LIST, bext, ...) are skipped by scipy with a warning
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            sample_rate, data = wavfile.read(str(path))
    except FileNotFoundError as e:
        raise AudioIOError(f"Audio file not found: {path}") from e
    except (ValueError, OSError, EOFError) as e:
        raise AudioIOError(f"Cannot read WAV file {path}: {e}") from e

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise AudioIOError(f"Unsupported WAV encoding {data.dtype} (expected PCM 16-bit or float 32-bit): {path}")

    if samples.ndim == 2:
        samples = samples.mean(axis=1)

    if samples.size == 0:
        raise AudioIOError(f"WAV file contains no audio: {path}")
    if not np.all(np.isfinite(samples)):
        raise AudioIOError(f"WAV file contains non-finite samples: {path}")

    peak = float(np.max(np.abs(samples)))
    if peak > 1.0:
        logger.warning(f"Clipping float samples with peak {peak:.3f} to [-1, 1]: {path}")
        samples = np.clip(samples, -1.0, 1.0)

    return AudioClip(samples=samples, sample_rate=int(sample_rate), source_path=str(path))


def encode_wav(clip: AudioClip, path: Union[str, Path], subtype: str = "PCM_16") -> Path:
    """Write a clip to a mono WAV file.

    Args:
        clip: The clip to write
        path: Destination path
        subtype: "PCM_16" or "FLOAT"

    Returns:
        The written path
    """
    path = Path(path)
    if subtype == "PCM_16":
        data = np.clip(np.round(clip.samples * PCM16_SCALE), -32768, 32767).astype(np.int16)
    elif subtype == "FLOAT":
        data = clip.samples.astype(np.float32)
    else:
        raise AudioIOError(f"Unsupported WAV subtype {subtype!r}: {path}")

    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        wavfile.write(str(path), clip.sample_rate, data)
    except OSError as e:
        raise AudioIOError(f"Cannot write WAV file {path}: {e}") from e
    return path


def frame_starts(n_samples: int, frame_len: int, hop_len: int) -> np.ndarray:
    """Start offsets of the analysis frames covering a clip.

    Frames advance by hop_len; one extra frame aligned to the end is added
    when the hop grid leaves a tail uncovered. A clip shorter than frame_len
    is a single frame.
    """
    if n_samples <= frame_len:
        return np.array([0], dtype=np.int64)
    starts = np.arange(0, n_samples - frame_len + 1, hop_len, dtype=np.int64)
    if starts[-1] + frame_len < n_samples:
        starts = np.append(starts, n_samples - frame_len)
    return starts


def frame_energies_db(samples: np.ndarray, cfg: SilenceRemovalConfig) -> np.ndarray:
    """RMS level in dB of every analysis frame; digital silence is -inf."""
    starts = frame_starts(samples.shape[0], cfg.frame_len, cfg.hop_len)
    energies = np.empty(starts.shape[0], dtype=np.float64)
    for i, start in enumerate(starts):
        frame = samples[start:start + cfg.frame_len]
        rms = np.sqrt(np.mean(frame * frame))
        energies[i] = 20.0 * np.log10(rms) if rms > 0 else SILENT_DB
    return energies


def silent_frame_mask(samples: np.ndarray, cfg: SilenceRemovalConfig) -> np.ndarray:
    """Boolean mask of the frames remove_silence keeps."""
    energies = frame_energies_db(samples, cfg)
    loudest = int(np.argmax(energies))
    keep = np.isfinite(energies) & (energies >= energies[loudest] - cfg.threshold_db)
    if not keep.any():
        keep[loudest] = True
    return keep


def remove_silence(clip: AudioClip, cfg: SilenceRemovalConfig) -> AudioClip:
    """Drop frames whose level falls more than threshold_db below the loudest frame.

    A sample survives when it belongs to at least one kept frame, so the
    output is an order-preserving subsequence of the input and never longer.
    When every frame is silent the loudest (first) frame is kept.

    Args:
        clip: Input clip
        cfg: Silence removal options

    Returns:
        The trimmed clip
    """
    if len(clip) == 0:
        raise AudioIOError(f"Cannot remove silence from an empty clip: {clip.source_path}")
    if not cfg.enabled:
        return clip

    starts = frame_starts(len(clip), cfg.frame_len, cfg.hop_len)
    keep = silent_frame_mask(clip.samples, cfg)

    covered = np.zeros(len(clip), dtype=bool)
    for start in starts[keep]:
        covered[start:start + cfg.frame_len] = True

    dropped = int((~keep).sum())
    if dropped:
        logger.debug(f"Removed {dropped}/{keep.size} silent frames from {clip.source_path or 'clip'}")
    return clip.with_samples(clip.samples[covered])
