"""
Time-weighted frequency representation (TWFR).

Each mel bin's energies are sorted in descending order over time and then
pooled with normalised geometric weights r^0, r^1, ..., r^(N-1). r = 0 is
max pooling, r = 1 is average pooling and r > 1 favours the quieter frames.
"""

from typing import Dict, List, Sequence

import numpy as np

from .errors import AsdError
from .spectrogram import Spectrogram

R_MIN = 0.0
R_MAX = 1.10

# A pooled vector of length M (one value per mel bin)
TwfrVector = np.ndarray


class TwfrError(AsdError):
    """Exception raised for invalid pooling arguments."""
    pass


def check_r(r: float) -> float:
    """Validate a pooling exponent against the supported range [0, 1.10]."""
    r = float(r)
    if not (R_MIN <= r <= R_MAX + 1e-12):
        raise TwfrError(f"Pooling exponent r={r} outside [{R_MIN}, {R_MAX}]")
    return r


def ranked_values(values: np.ndarray) -> np.ndarray:
    """Sort every row in descending order; equal values keep their frame order."""
    order = np.argsort(-values, axis=1, kind="stable")
    return np.take_along_axis(values, order, axis=1)


def ranking(spec: Spectrogram) -> Spectrogram:
    """Sort each mel bin of a spectrogram independently in descending order over time."""
    return Spectrogram(values=ranked_values(spec.values), source_path=spec.source_path)


def weights(r: float, n_frames: int) -> np.ndarray:
    """Normalised rank weights [r^0, ..., r^(N-1)] / z(r).

    Powers are accumulated by repeated multiplication and 0^0 is 1, so r = 0
    puts all the mass on the top-ranked frame.

    Args:
        r: Pooling exponent
        n_frames: Number of time frames N

    Returns:
        Array of N non-negative weights summing to one
    """
    r = check_r(r)
    if n_frames < 1:
        raise TwfrError(f"n_frames must be >= 1, got {n_frames}")

    powers = np.empty(n_frames, dtype=np.float64)
    powers[0] = 1.0
    if n_frames > 1:
        powers[1:] = np.cumprod(np.full(n_frames - 1, r))
    return powers / powers.sum()


def twfr_from_ranked(ranked: np.ndarray, r: float) -> TwfrVector:
    """Pool an already ranked (M, N) matrix."""
    return ranked @ weights(r, ranked.shape[1])


def twfr(spec: Spectrogram, r: float) -> TwfrVector:
    """Compute R(X) = Ranking(X) . w(r) for one spectrogram.

    Args:
        spec: Log-mel spectrogram X
        r: Pooling exponent

    Returns:
        Vector of length spec.mel_bins
    """
    return twfr_from_ranked(ranked_values(spec.values), r)


def ranked_matrices(specs: Sequence[Spectrogram]) -> List[np.ndarray]:
    """Rank a set of spectrograms once so they can be pooled at many r values."""
    return [ranked_values(spec.values) for spec in specs]


def twfr_batch(ranked: Sequence[np.ndarray], r: float) -> np.ndarray:
    """Pool a set of ranked matrices at one r, stacked as (n_clips, M).

    Clips may differ in length; weights are computed once per distinct N.
    """
    if not ranked:
        raise TwfrError("Cannot pool an empty set of spectrograms")
    by_length: Dict[int, np.ndarray] = {}
    rows = []
    for matrix in ranked:
        n_frames = matrix.shape[1]
        if n_frames not in by_length:
            by_length[n_frames] = weights(r, n_frames)
        rows.append(matrix @ by_length[n_frames])
    return np.vstack(rows)
