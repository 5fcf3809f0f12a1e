"""
Spectrogram Module

Turns an AudioClip into the M x N log-mel matrix pooled by the TWFR step,
and reads/writes the little-endian spectrogram cache format.
"""

import hashlib
import logging
import struct
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Union

import librosa
import numpy as np

from .audio_io import AudioClip
from .errors import AsdError, ConfigError

logger = logging.getLogger(__name__)

CACHE_MAGIC = b"LMEL"
CACHE_HEADER = struct.Struct("<4sII")


class SpectrogramError(AsdError):
    """Exception raised for errors during spectrogram extraction or caching."""
    pass


@dataclass(frozen=True)
class SpectrogramConfig:
    """Front-end parameters for the log-mel spectrogram."""

    n_fft: int = 1024
    hop: int = 512
    n_mels: int = 128
    sample_rate: int = 16000
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-10

    def __post_init__(self):
        if not (self.n_fft >= self.hop >= 1):
            raise ConfigError(f"spectrogram requires n_fft >= hop >= 1, got n_fft={self.n_fft}, hop={self.hop}")
        if not (0 <= self.fmin < self.fmax <= self.sample_rate / 2):
            raise ConfigError(
                f"spectrogram requires 0 <= fmin < fmax <= sample_rate/2, "
                f"got fmin={self.fmin}, fmax={self.fmax}, sample_rate={self.sample_rate}"
            )
        if self.n_mels < 1:
            raise ConfigError(f"spectrogram.n_mels must be >= 1, got {self.n_mels}")
        if not self.log_floor > 0:
            raise ConfigError(f"spectrogram.log_floor must be > 0, got {self.log_floor}")

    @classmethod
    def from_dict(cls, options: Dict[str, Any]) -> "SpectrogramConfig":
        return cls(
            n_fft=int(options.get("n_fft", 1024)),
            hop=int(options.get("hop", 512)),
            n_mels=int(options.get("n_mels", 128)),
            sample_rate=int(options.get("sample_rate", 16000)),
            fmin=float(options.get("fmin", 0.0)),
            fmax=float(options.get("fmax", 8000.0)),
            log_floor=float(options.get("log_floor", 1e-10)),
        )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def n_frames(self, n_samples: int) -> int:
        """Number of frames for a clip of n_samples (no padding)."""
        return 1 + (n_samples - self.n_fft) // self.hop


@dataclass(eq=False)
class Spectrogram:
    """Log-mel energies with mel bins on rows and time frames on columns."""

    values: np.ndarray
    source_path: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] < 1 or self.values.shape[0] < 1:
            raise SpectrogramError(f"Spectrogram must be a non-empty 2-D matrix, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise SpectrogramError(f"Spectrogram contains non-finite values: {self.source_path}")

    @property
    def mel_bins(self) -> int:
        return self.values.shape[0]

    @property
    def frames(self) -> int:
        return self.values.shape[1]


@lru_cache(maxsize=16)
def mel_filterbank(cfg: SpectrogramConfig) -> np.ndarray:
    """Slaney-style, area-normalised triangular filterbank of shape (n_mels, 1 + n_fft // 2).

    The returned array is shared between callers and is read-only.
    """
    fb = librosa.filters.mel(
        sr=cfg.sample_rate,
        n_fft=cfg.n_fft,
        n_mels=cfg.n_mels,
        fmin=cfg.fmin,
        fmax=cfg.fmax,
        htk=False,
        norm="slaney",
        dtype=np.float64,
    )
    empty = np.flatnonzero(~np.any(fb > 0, axis=1))
    if empty.size:
        raise SpectrogramError(
            f"Mel filterbank has {empty.size} empty filters (first: {int(empty[0])}); "
            f"lower n_mels or raise n_fft (n_fft={cfg.n_fft}, n_mels={cfg.n_mels})"
        )
    fb.setflags(write=False)
    return fb


def power_spectrogram(samples: np.ndarray, cfg: SpectrogramConfig) -> np.ndarray:
    """Hann-windowed power STFT without centre padding."""
    stft = librosa.stft(
        np.asarray(samples, dtype=np.float64),
        n_fft=cfg.n_fft,
        hop_length=cfg.hop,
        win_length=cfg.n_fft,
        window="hann",
        center=False,
    )
    return np.abs(stft) ** 2


def log_mel(clip: AudioClip, cfg: SpectrogramConfig) -> Spectrogram:
    """Compute the natural-log mel power spectrogram of a clip.

    Args:
        clip: Input clip at cfg.sample_rate
        cfg: Front-end configuration

    Returns:
        Spectrogram of shape (n_mels, 1 + (len - n_fft) // hop)
    """
    if clip.sample_rate != cfg.sample_rate:
        raise SpectrogramError(
            f"Sample rate mismatch: clip has {clip.sample_rate} Hz, config expects {cfg.sample_rate} Hz: {clip.source_path}"
        )
    if len(clip) < cfg.n_fft:
        raise SpectrogramError(
            f"Clip shorter than one frame ({len(clip)} < n_fft={cfg.n_fft} samples): {clip.source_path}"
        )

    mel = mel_filterbank(cfg) @ power_spectrogram(clip.samples, cfg)
    return Spectrogram(values=np.log(np.maximum(mel, cfg.log_floor)), source_path=clip.source_path)


def save_spectrogram(spec: Spectrogram, path: Union[str, Path]) -> Path:
    """Write a spectrogram as magic 'LMEL', uint32 M, uint32 N, then M*N little-endian float64 (row-major)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = np.ascontiguousarray(spec.values, dtype="<f8").tobytes(order="C")
    with open(path, "wb") as f:
        f.write(CACHE_HEADER.pack(CACHE_MAGIC, spec.mel_bins, spec.frames))
        f.write(payload)
    return path


def load_spectrogram(path: Union[str, Path]) -> Spectrogram:
    """Read a spectrogram written by save_spectrogram."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise SpectrogramError(f"Cannot read spectrogram cache {path}: {e}") from e

    if len(raw) < CACHE_HEADER.size:
        raise SpectrogramError(f"Truncated spectrogram cache header: {path}")
    magic, n_mels, n_frames = CACHE_HEADER.unpack_from(raw)
    if magic != CACHE_MAGIC:
        raise SpectrogramError(f"Bad spectrogram cache magic {magic!r}: {path}")
    expected = CACHE_HEADER.size + 8 * n_mels * n_frames
    if len(raw) != expected:
        raise SpectrogramError(f"Spectrogram cache size {len(raw)} does not match header ({expected} bytes): {path}")

    values = np.frombuffer(raw, dtype="<f8", offset=CACHE_HEADER.size).reshape(n_mels, n_frames)
    return Spectrogram(values=values.astype(np.float64), source_path=str(path))


class SpectrogramCache:
    """On-disk memo of spectrograms keyed by source file identity and front-end settings."""

    def __init__(self, directory: Optional[Union[str, Path]]):
        """Initialize the cache.

        Args:
            directory: Cache directory; None or "" disables caching
        """
        self.directory = Path(directory) if directory else None
        self.hits = 0
        self.misses = 0

    @property
    def enabled(self) -> bool:
        return self.directory is not None

    def key(self, source: Path, settings: Dict[str, Any]) -> str:
        """Cache key from the file path, size, mtime and the extraction settings."""
        stat = source.stat()
        ident = f"{source.resolve()}|{stat.st_size}|{stat.st_mtime_ns}|{sorted(settings.items())}"
        return hashlib.sha256(ident.encode("utf-8")).hexdigest()

    def get_or_compute(self, source: Path, settings: Dict[str, Any], compute: Callable[[], Spectrogram]) -> Spectrogram:
        if not self.enabled:
            return compute()

        cache_path = self.directory / f"{self.key(source, settings)}.lmel"
        if cache_path.exists():
            try:
                spec = load_spectrogram(cache_path)
                spec.source_path = str(source)
                self.hits += 1
                return spec
            except SpectrogramError as e:
                logger.warning(f"Ignoring unreadable cache entry: {e}")

        spec = compute()
        save_spectrogram(spec, cache_path)
        self.misses += 1
        return spec
