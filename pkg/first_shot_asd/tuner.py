"""
Grid search of the pooling exponent r.

For every grid value the TWFR vectors are recomputed, a GMM is refitted on
the real normal clips and the synthetic normal/anomaly clips are scored to
evaluate the objective. The largest objective wins; ties go to the smallest r.
"""

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import gmm
from .audio_io import AudioClip
from .errors import AsdError, ConfigError
from .metrics import OBJECTIVE_MODES, ScoredClip, auc, combine, pauc
from .spectrogram import Spectrogram, SpectrogramConfig, log_mel
from .twfr import R_MAX, R_MIN, ranked_matrices, twfr_batch

logger = logging.getLogger(__name__)

BASELINES = {"max_pooling": 0.0, "average_pooling": 1.0}


class TunerError(AsdError):
    """Exception raised when r cannot be tuned on the given clips."""
    pass


@dataclass(frozen=True)
class TuningConfig:
    r_min: float = 0.0
    r_max: float = 1.10
    r_step: float = 0.01
    objective_mode: str = "harmonic"
    p: float = 0.1
    gmm_cfg: gmm.GmmFitConfig = field(default_factory=gmm.GmmFitConfig)

    def __post_init__(self):
        if not self.r_step > 0:
            raise ConfigError(f"tuning.r_step must be > 0, got {self.r_step}")
        if self.r_min > self.r_max:
            raise ConfigError(f"tuning.r_min ({self.r_min}) must not exceed tuning.r_max ({self.r_max})")
        if self.r_min < R_MIN or self.r_max > R_MAX + 1e-12:
            raise ConfigError(f"tuning range [{self.r_min}, {self.r_max}] must lie within [{R_MIN}, {R_MAX}]")
        if self.objective_mode not in OBJECTIVE_MODES:
            raise ConfigError(f"tuning.objective_mode must be one of {', '.join(OBJECTIVE_MODES)}, got {self.objective_mode!r}")
        if not (0 < self.p <= 1):
            raise ConfigError(f"tuning.p must be in (0, 1], got {self.p}")

    @classmethod
    def from_dict(cls, options: Dict[str, Any], gmm_cfg: Optional[gmm.GmmFitConfig] = None) -> "TuningConfig":
        return cls(
            r_min=float(options.get("r_min", 0.0)),
            r_max=float(options.get("r_max", 1.10)),
            r_step=float(options.get("r_step", 0.01)),
            objective_mode=str(options.get("objective_mode", "harmonic")),
            p=float(options.get("p", 0.1)),
            gmm_cfg=gmm_cfg or gmm.GmmFitConfig(),
        )

    def grid(self) -> List[float]:
        """Grid values r_min + i * r_step, rounded so overlapping grids share exact values."""
        count = math.floor((self.r_max - self.r_min) / self.r_step + 1e-9) + 1
        return [round(self.r_min + i * self.r_step, 10) for i in range(count)]


@dataclass(frozen=True)
class GridPoint:
    r: float
    objective: float
    auc: float
    pauc: float


@dataclass
class TuningResult:
    machine_type: str
    r_selected: float
    trace: List[GridPoint]
    baselines: Dict[str, GridPoint] = field(default_factory=dict)

    @property
    def objective_by_r(self) -> List[Tuple[float, float]]:
        return [(point.r, point.objective) for point in self.trace]

    @property
    def selected(self) -> GridPoint:
        return next(point for point in self.trace if point.r == self.r_selected)

    @property
    def best_objective(self) -> float:
        return self.selected.objective


class RTuner:
    """Evaluates the objective over the r grid for one machine type."""

    def __init__(self, cfg: TuningConfig, workers: int = 1):
        """Initialize the tuner.

        Args:
            cfg: Tuning configuration
            workers: Threads used to evaluate grid points concurrently
        """
        self.cfg = cfg
        self.workers = max(1, int(workers))
        self._train: List[np.ndarray] = []
        self._eval: List[np.ndarray] = []
        self._eval_clips: List[Tuple[str, str]] = []

    def prepare(self, real_normals: Sequence[Spectrogram], synth_normals: Sequence[Spectrogram],
                synth_anomalies: Sequence[Spectrogram]) -> None:
        """Rank every spectrogram once; the ranked matrices are reused at every r."""
        for name, specs in (("real normal", real_normals), ("synthetic normal", synth_normals),
                            ("synthetic anomaly", synth_anomalies)):
            if not specs:
                raise TunerError(f"No {name} clips to tune on")
        if len(real_normals) < self.cfg.gmm_cfg.n_components:
            raise TunerError(
                f"Need at least {self.cfg.gmm_cfg.n_components} real normal clips for "
                f"{self.cfg.gmm_cfg.n_components} GMM components, got {len(real_normals)}"
            )
        mel_bins = {spec.mel_bins for spec in (*real_normals, *synth_normals, *synth_anomalies)}
        if len(mel_bins) != 1:
            raise TunerError(f"Spectrograms do not share one front-end (mel bins: {sorted(mel_bins)})")

        self._train = ranked_matrices(real_normals)
        self._eval = ranked_matrices(synth_normals) + ranked_matrices(synth_anomalies)
        self._eval_clips = (
            [(f"normal/{i:05d}", "normal") for i in range(len(synth_normals))]
            + [(f"anomaly/{i:05d}", "anomaly") for i in range(len(synth_anomalies))]
        )

    def evaluate_r(self, r: float) -> GridPoint:
        """Refit the GMM on real normals pooled at r and score the synthetic clips."""
        if not self._train:
            raise TunerError("RTuner.prepare must be called before evaluating r")
        model = gmm.fit(twfr_batch(self._train, r), self.cfg.gmm_cfg)
        scores = gmm.score_batch(model, twfr_batch(self._eval, r))
        scored = [
            ScoredClip(clip_id=clip_id, score=float(value), label=label)
            for (clip_id, label), value in zip(self._eval_clips, scores)
        ]
        auc_value = auc(scored)
        pauc_value = pauc(scored, self.cfg.p)
        return GridPoint(
            r=r,
            objective=combine(auc_value, pauc_value, self.cfg.objective_mode),
            auc=auc_value,
            pauc=pauc_value,
        )

    def tune(self, machine_type: str = "") -> TuningResult:
        grid = self.cfg.grid()
        logger.info(f"Tuning r for {machine_type or 'machine'} over {len(grid)} grid points")

        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                trace = list(pool.map(self.evaluate_r, grid))
        else:
            trace = [self.evaluate_r(r) for r in grid]

        best = trace[0]
        for point in trace[1:]:
            if point.objective > best.objective:
                best = point

        by_r = {point.r: point for point in trace}
        baselines = {
            name: by_r[r] if r in by_r else self.evaluate_r(r)
            for name, r in BASELINES.items()
        }
        logger.info(
            f"Selected r={best.r:.2f} for {machine_type or 'machine'} "
            f"(objective {best.objective:.4f}, AUC {best.auc:.4f}, pAUC {best.pauc:.4f})"
        )
        return TuningResult(machine_type=machine_type, r_selected=best.r, trace=trace, baselines=baselines)


def tune_r_from_spectrograms(real_normals: Sequence[Spectrogram], synth_normals: Sequence[Spectrogram],
                             synth_anomalies: Sequence[Spectrogram], cfg: TuningConfig,
                             machine_type: str = "", workers: int = 1) -> TuningResult:
    tuner = RTuner(cfg, workers=workers)
    tuner.prepare(real_normals, synth_normals, synth_anomalies)
    return tuner.tune(machine_type)


def tune_r(real_normals: Sequence[AudioClip], synth_normals: Sequence[AudioClip],
           synth_anomalies: Sequence[AudioClip], cfg: TuningConfig,
           spectrogram_cfg: Optional[SpectrogramConfig] = None,
           machine_type: str = "", workers: int = 1) -> TuningResult:
    """Select r = argmax E(r, synthetic anomalies, synthetic normals).

    Args:
        real_normals: Real normal clips used to fit the GMM
        synth_normals: Synthetic normal clips (scored as normal)
        synth_anomalies: Synthetic anomalous clips (scored as anomaly)
        cfg: Tuning configuration
        spectrogram_cfg: Front-end shared by all clips
        machine_type: Machine type recorded on the result
        workers: Threads used for grid evaluation

    Returns:
        TuningResult with the full grid trace
    """
    spectrogram_cfg = spectrogram_cfg or SpectrogramConfig()
    for name, clips in (("real normal", real_normals), ("synthetic normal", synth_normals),
                        ("synthetic anomaly", synth_anomalies)):
        if not clips:
            raise TunerError(f"No {name} clips to tune on")
    return tune_r_from_spectrograms(
        [log_mel(clip, spectrogram_cfg) for clip in real_normals],
        [log_mel(clip, spectrogram_cfg) for clip in synth_normals],
        [log_mel(clip, spectrogram_cfg) for clip in synth_anomalies],
        cfg,
        machine_type=machine_type,
        workers=workers,
    )


def write_trace_csv(result: TuningResult, path: Union[str, Path]) -> Path:
    """Write the grid trace as `r,objective,auc,pauc`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["r", "objective", "auc", "pauc"])
        for point in result.trace:
            writer.writerow([repr(point.r), repr(point.objective), repr(point.auc), repr(point.pauc)])
    return path


def compare_selected_r(synthetic: TuningResult, reference: TuningResult) -> Dict[str, Any]:
    """Compare r tuned on synthetic clips with r tuned on real labelled anomalies."""
    return {
        "machine_type": synthetic.machine_type or reference.machine_type,
        "synthetic_r": synthetic.r_selected,
        "real_r": reference.r_selected,
        "difference": round(abs(synthetic.r_selected - reference.r_selected), 10),
    }
