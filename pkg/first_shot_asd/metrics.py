"""
Evaluation metrics: AUC, pAUC, their combinations and the score/label CSV files.
"""

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import rankdata

from .errors import AsdError

OBJECTIVE_MODES = ("auc", "pauc", "arithmetic", "harmonic")
LABELS = ("normal", "anomaly")
DEFAULT_P = 0.1


class MetricsError(AsdError):
    """Exception raised for invalid metric inputs or malformed score/label files."""
    pass


@dataclass(frozen=True)
class ScoredClip:
    clip_id: str
    score: float
    label: str

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise MetricsError(f"Score of {self.clip_id!r} is not finite: {self.score!r}")
        if self.label not in LABELS:
            raise MetricsError(f"Unknown label {self.label!r} for clip {self.clip_id!r}")


@dataclass(frozen=True)
class EvalReport:
    """AUC/pAUC summary of one scored set."""

    auc: float
    pauc: float
    p: float
    n_pos: int
    n_neg: int
    objective: float
    mode: str = "harmonic"
    machine_type: str = ""


def _split(scored: Iterable[ScoredClip]) -> Tuple[List[ScoredClip], List[ScoredClip]]:
    anomalies, normals = [], []
    for clip in scored:
        (anomalies if clip.label == "anomaly" else normals).append(clip)
    if not anomalies or not normals:
        raise MetricsError(
            f"AUC needs both classes, got {len(anomalies)} anomalies and {len(normals)} normals"
        )
    return anomalies, normals


def _mann_whitney(positive: np.ndarray, negative: np.ndarray) -> float:
    """Fraction of (positive, negative) pairs ordered correctly, ties counting one half."""
    ranks = rankdata(np.concatenate([positive, negative]), method="average")
    n_pos, n_neg = positive.size, negative.size
    u = ranks[:n_pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc(scored: Iterable[ScoredClip]) -> float:
    """Area under the ROC curve with anomalies as positives."""
    anomalies, normals = _split(scored)
    return _mann_whitney(
        np.array([c.score for c in anomalies], dtype=np.float64),
        np.array([c.score for c in normals], dtype=np.float64),
    )


def pauc(scored: Iterable[ScoredClip], p: float = DEFAULT_P) -> float:
    """AUC restricted to the false-positive-rate range [0, p].

    Only the top floor(p * n_neg) normals by score (ties broken by clip_id)
    are kept, and the anomalies are compared against that subset.
    """
    if not (0 < p <= 1):
        raise MetricsError(f"pAUC requires 0 < p <= 1, got {p}")
    anomalies, normals = _split(scored)
    n_keep = math.floor(p * len(normals) + 1e-9)
    if n_keep < 1:
        raise MetricsError(f"p={p} keeps no normals out of {len(normals)} (need floor(p * n_neg) >= 1)")

    hardest = sorted(normals, key=lambda c: (-c.score, c.clip_id))[:n_keep]
    return _mann_whitney(
        np.array([c.score for c in anomalies], dtype=np.float64),
        np.array([c.score for c in hardest], dtype=np.float64),
    )


def combine(auc_value: float, pauc_value: float, mode: str) -> float:
    """Combine AUC and pAUC into the tuning objective."""
    if mode == "auc":
        return auc_value
    if mode == "pauc":
        return pauc_value
    if mode == "arithmetic":
        return (auc_value + pauc_value) / 2.0
    if mode == "harmonic":
        total = auc_value + pauc_value
        return 0.0 if total == 0 else 2.0 * auc_value * pauc_value / total
    raise MetricsError(f"Unknown objective mode {mode!r} (expected one of {', '.join(OBJECTIVE_MODES)})")


def objective(scored: Sequence[ScoredClip], mode: str = "harmonic", p: float = DEFAULT_P) -> float:
    """Tuning objective E over a scored set."""
    if mode not in OBJECTIVE_MODES:
        raise MetricsError(f"Unknown objective mode {mode!r} (expected one of {', '.join(OBJECTIVE_MODES)})")
    return combine(auc(scored), pauc(scored, p), mode)


def evaluate(scored: Sequence[ScoredClip], p: float = DEFAULT_P, mode: str = "harmonic",
             machine_type: str = "") -> EvalReport:
    """Build an EvalReport for one scored set."""
    auc_value = auc(scored)
    pauc_value = pauc(scored, p)
    n_pos = sum(1 for c in scored if c.label == "anomaly")
    return EvalReport(
        auc=auc_value,
        pauc=pauc_value,
        p=p,
        n_pos=n_pos,
        n_neg=len(scored) - n_pos,
        objective=combine(auc_value, pauc_value, mode),
        mode=mode,
        machine_type=machine_type,
    )


def harmonic_mean(values: Sequence[float]) -> float:
    """Harmonic mean used to aggregate per-machine results; 0 if any value is 0."""
    values = list(values)
    if not values:
        raise MetricsError("Cannot average an empty list of values")
    if any(v <= 0 for v in values):
        return 0.0
    return len(values) / sum(1.0 / v for v in values)


def roc_points(scored: Sequence[ScoredClip]) -> List[Tuple[float, float, float]]:
    """Raw (fpr, tpr, threshold) points for external ROC plotting, from (0, 0) to (1, 1)."""
    anomalies, normals = _split(scored)
    scores = np.array([c.score for c in scored], dtype=np.float64)
    positive = np.array([c.label == "anomaly" for c in scored])

    points = [(0.0, 0.0, math.inf)]
    for threshold in np.unique(scores)[::-1]:
        predicted = scores >= threshold
        tpr = float(np.sum(predicted & positive)) / len(anomalies)
        fpr = float(np.sum(predicted & ~positive)) / len(normals)
        points.append((fpr, tpr, float(threshold)))
    return points


def write_scores(path: Union[str, Path], rows: Iterable[Tuple[str, float]],
                 labels: Optional[Dict[str, str]] = None) -> Path:
    """Write `clip_id,score` rows (plus `label` when labels are given) at full precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["clip_id", "score", "label"] if labels is not None else ["clip_id", "score"])
        for clip_id, value in rows:
            row = [clip_id, repr(float(value))]
            if labels is not None:
                row.append(labels[clip_id])
            writer.writerow(row)
    return path


def read_scores(path: Union[str, Path]) -> List[Tuple[str, float, Optional[str]]]:
    """Read a score CSV; the label column is optional."""
    path = Path(path)
    rows = []
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None or not {"clip_id", "score"} <= set(reader.fieldnames):
                raise MetricsError(f"Score file must have a clip_id,score header: {path}")
            for line_no, row in enumerate(reader, start=2):
                try:
                    value = float(row["score"])
                except (TypeError, ValueError):
                    raise MetricsError(f"Invalid score {row['score']!r} on line {line_no} of {path}") from None
                rows.append((row["clip_id"], value, row.get("label") or None))
    except OSError as e:
        raise MetricsError(f"Cannot read score file {path}: {e}") from e
    return rows


def read_labels(path: Union[str, Path]) -> Dict[str, Tuple[str, Optional[str]]]:
    """Read a `clip_id,label[,machine_type]` CSV into clip_id -> (label, machine_type)."""
    path = Path(path)
    labels: Dict[str, Tuple[str, Optional[str]]] = {}
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None or not {"clip_id", "label"} <= set(reader.fieldnames):
                raise MetricsError(f"Label file must have a clip_id,label header: {path}")
            for row in reader:
                if row["label"] not in LABELS:
                    raise MetricsError(f"Unknown label {row['label']!r} for clip {row['clip_id']!r} in {path}")
                if row["clip_id"] in labels:
                    raise MetricsError(f"Duplicate clip {row['clip_id']!r} in label file {path}")
                labels[row["clip_id"]] = (row["label"], row.get("machine_type") or None)
    except OSError as e:
        raise MetricsError(f"Cannot read label file {path}: {e}") from e
    return labels


def write_labels(path: Union[str, Path], rows: Iterable[Tuple[str, str, str]]) -> Path:
    """Write `clip_id,machine_type,label` rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["clip_id", "machine_type", "label"])
        for clip_id, machine_type, label in rows:
            writer.writerow([clip_id, machine_type, label])
    return path


def clip_id(machine_type: str, file_name: str) -> str:
    """Dataset-wide clip id; DCASE file names repeat across machine types."""
    return f"{machine_type}/{file_name}" if machine_type else file_name
