"""
Pipeline Module

Runs the first-shot workflow over a DCASE-style dataset tree: caption
export, stand-in generation, r tuning, GMM fitting, scoring and evaluation.
Every command reads and writes plain files, so each one can be rerun on its
own and produces the same bytes for the same inputs.

Output layout under the output directory:

    models/<machine>/manifest.tsv    captions for the external generator
    models/<machine>/tuning.csv      grid trace
    models/<machine>/tuning.json     selected r, baselines, config fingerprint
    models/<machine>/model.json      fitted GMM with r and fingerprint
    models/<machine>/config.json     configuration the model was fitted with
"""

import json
import logging
import shutil
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

from . import gmm
from .audio_io import AudioClip, decode_wav, remove_silence
from .config import Config
from .errors import AsdError
from .metadata import load_templates
from .metrics import (EvalReport, ScoredClip, clip_id, evaluate, read_labels, read_scores, roc_points,
                      write_labels, write_scores)
from .report import write_report
from .scanner import DatasetLayout, scan_dataset
from .spectrogram import Spectrogram, SpectrogramCache, log_mel
from .synth_interface import CaptionManifest, build_manifest, generate_stub, ingest_synthetic, read_manifest, \
    write_manifest
from .toy_fixture import DEFAULT_TOY_MACHINE, LABELS_FILE, make_toy_dataset
from .tuner import GridPoint, TuningResult, compare_selected_r, tune_r_from_spectrograms, write_trace_csv
from .twfr import check_r, ranked_matrices, twfr_batch

MANIFEST_FILE = "manifest.tsv"
TUNING_CSV = "tuning.csv"
TUNING_JSON = "tuning.json"
MODEL_FILE = "model.json"
CONFIG_FILE = "config.json"


class PipelineError(AsdError):
    """Exception raised when a pipeline command cannot run on its inputs."""
    pass


class Pipeline:
    """Command implementations sharing one configuration and output directory."""

    def __init__(self, config: Config, output_directory: Union[str, Path]):
        """Initialize the pipeline.

        Args:
            config: Loaded configuration
            output_directory: Root for models, scores and reports
        """
        self.config = config
        self.run = config.run_config()
        self.output_directory = Path(output_directory)
        self.templates = load_templates(self.run.templates_path or None)
        self.cache = SpectrogramCache(self.run.cache_directory or None)
        self.logger = logging.getLogger(__name__)

    def model_dir(self, machine_type: str) -> Path:
        return self.output_directory / "models" / machine_type

    def _scan(self, dataset_root: Union[str, Path]) -> DatasetLayout:
        layout = scan_dataset(Path(dataset_root))
        counts = layout.to_dict()["counts"]
        self.logger.info(f"Scanned {layout.root}: " + ", ".join(f"{key} {n}" for key, n in counts.items()))
        return layout

    def _map(self, func, items: Sequence) -> List:
        """Apply func to every item, on a thread pool when more than one worker is configured."""
        if self.run.workers > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.run.workers) as pool:
                return list(pool.map(func, items))
        return [func(item) for item in items]

    def real_spectrogram(self, path: Path) -> Spectrogram:
        """Log-mel spectrogram of a dataset clip, through the on-disk cache when one is configured."""
        silence = self.run.silence

        def compute() -> Spectrogram:
            clip = decode_wav(path)
            if silence.enabled and silence.apply_to_real:
                clip = remove_silence(clip, silence)
            return log_mel(clip, self.run.spectrogram)

        return self.cache.get_or_compute(path, {"fingerprint": self.run.fingerprint()}, compute)

    def _real_normals(self, layout: DatasetLayout, machine_type: str) -> List[Spectrogram]:
        layout.normal_train_metadata(machine_type)
        paths = [clip.file_path for clip in layout.labelled_clips(machine_type, "train")
                 if clip.metadata.condition == "normal"]
        self.logger.info(f"Extracting {len(paths)} real normal clips of {machine_type}")
        return self._map(self.real_spectrogram, paths)

    def cmd_captions(self, dataset_root: Union[str, Path], machine_type: str,
                     out: Optional[Union[str, Path]] = None) -> CaptionManifest:
        """Write the caption manifest for one machine type.

        Args:
            dataset_root: DCASE-style dataset root
            machine_type: Target machine type
            out: Manifest path (defaults to models/<machine>/manifest.tsv)

        Returns:
            The written CaptionManifest
        """
        layout = self._scan(dataset_root)
        metadata = layout.normal_train_metadata(machine_type)
        manifest = build_manifest(metadata, self.templates, self.run.per_caption_count)
        path = write_manifest(manifest, Path(out) if out else self.model_dir(machine_type) / MANIFEST_FILE)
        self.logger.info(
            f"{machine_type}: {len(metadata)} normal training clips, {len(manifest) // 2} distinct captions, "
            f"{len(manifest)} manifest entries, {manifest.requested('normal')} normal and "
            f"{manifest.requested('anomaly')} anomaly clips requested -> {path}"
        )
        return manifest

    def cmd_generate_stub(self, manifest_path: Union[str, Path], out_dir: Union[str, Path]) -> List[Path]:
        """Run the deterministic stand-in generator for a manifest and keep a copy of the manifest next to its output."""
        manifest_path = Path(manifest_path)
        out_dir = Path(out_dir)
        manifest = read_manifest(manifest_path)
        written = generate_stub(manifest, out_dir, sample_rate=self.run.spectrogram.sample_rate,
                                clip_seconds=self.run.clip_seconds, seed=self.run.seed)
        copy = out_dir / MANIFEST_FILE
        if not copy.exists() or not copy.samefile(manifest_path):
            shutil.copyfile(manifest_path, copy)
        return written

    def _find_manifest(self, synth_dir: Path, machine_type: str, manifest_path: Optional[Union[str, Path]]) -> Path:
        candidates = [Path(manifest_path)] if manifest_path else [
            synth_dir / MANIFEST_FILE, self.model_dir(machine_type) / MANIFEST_FILE
        ]
        for candidate in candidates:
            if candidate.is_file():
                return candidate
        raise PipelineError(
            f"No caption manifest found (looked in {', '.join(str(c) for c in candidates)}); "
            f"run `captions` for {machine_type} first"
        )

    def cmd_tune(self, dataset_root: Union[str, Path], machine_type: str, synth_dir: Union[str, Path],
                 manifest_path: Optional[Union[str, Path]] = None, reference: bool = False) -> TuningResult:
        """Select r on synthetic clips and persist the grid trace.

        Args:
            dataset_root: DCASE-style dataset root
            machine_type: Target machine type
            synth_dir: Directory of generated WAVs named after the manifest
            manifest_path: Manifest the WAVs were generated from
            reference: Also tune on the labelled real test clips and record the difference

        Returns:
            The TuningResult
        """
        synth_dir = Path(synth_dir)
        if not synth_dir.is_dir():
            raise PipelineError(
                f"Synthetic audio directory not found: {synth_dir}. Run `captions` and generate audio for "
                f"the manifest with a text-to-audio model, or run `generate-stub` for a stand-in corpus"
            )
        manifest_path = self._find_manifest(synth_dir, machine_type, manifest_path)
        manifest = read_manifest(manifest_path)
        corpus = ingest_synthetic(synth_dir, manifest, silence=self.run.silence,
                                  missing_tolerance=self.run.missing_tolerance,
                                  workers=self.run.workers, manifest_ref=str(manifest_path))
        corpus.require_both_conditions()

        layout = self._scan(dataset_root)
        real_normals = self._real_normals(layout, machine_type)

        def extract(clip: AudioClip) -> Spectrogram:
            return log_mel(clip, self.run.spectrogram)

        synth_normals = self._map(extract, corpus.normals)
        synth_anomalies = self._map(extract, corpus.anomalies)

        result = tune_r_from_spectrograms(real_normals, synth_normals, synth_anomalies, self.run.tuning,
                                          machine_type=machine_type, workers=self.run.workers)

        document: Dict[str, Any] = {
            "machine_type": machine_type,
            "r_selected": result.r_selected,
            "objective": result.best_objective,
            "objective_mode": self.run.tuning.objective_mode,
            "p": self.run.tuning.p,
            "baselines": {name: asdict(point) for name, point in sorted(result.baselines.items())},
            "trace": [asdict(point) for point in result.trace],
            "synthetic": {"normals": len(corpus.normals), "anomalies": len(corpus.anomalies),
                          "missing": corpus.missing, "extra": corpus.extra},
            "fingerprint": self.run.fingerprint(),
        }
        if reference:
            document["reference"] = compare_selected_r(result, self._reference_tuning(layout, machine_type,
                                                                                       real_normals))

        out_dir = self.model_dir(machine_type)
        write_trace_csv(result, out_dir / TUNING_CSV)
        _write_json(document, out_dir / TUNING_JSON)
        return result

    def _reference_tuning(self, layout: DatasetLayout, machine_type: str,
                          real_normals: Sequence[Spectrogram]) -> TuningResult:
        """Tune r on the real labelled test clips, as a supervised reference."""
        clips = layout.labelled_clips(machine_type, "test")
        normals = [c.file_path for c in clips if c.metadata.condition == "normal"]
        anomalies = [c.file_path for c in clips if c.metadata.condition == "anomaly"]
        if not normals or not anomalies:
            raise PipelineError(
                f"Reference tuning needs labelled normal and anomaly test clips for {machine_type}, "
                f"got {len(normals)} normals and {len(anomalies)} anomalies"
            )
        self.logger.info(f"Reference tuning on {len(normals)} real normal and {len(anomalies)} real anomaly test clips")
        return tune_r_from_spectrograms(real_normals, self._map(self.real_spectrogram, normals),
                                        self._map(self.real_spectrogram, anomalies), self.run.tuning,
                                        machine_type=machine_type, workers=self.run.workers)

    def cmd_fit(self, dataset_root: Union[str, Path], machine_type: str, r: Optional[float] = None) -> Path:
        """Fit the GMM on TWFR(r) of the real normal training clips.

        When r is None the value selected by cmd_tune is used; that tuning
        run must share the current spectrogram/silence fingerprint. The
        effective configuration is saved next to the model.

        Returns:
            Path of the written model.json
        """
        if r is None:
            document = _read_tuning_document(self.model_dir(machine_type))
            tuned_with = document.get("fingerprint")
            if tuned_with != self.run.fingerprint():
                raise PipelineError(
                    f"r for {machine_type} was tuned with different spectrogram/silence settings "
                    f"(tuning fingerprint {tuned_with}, current {self.run.fingerprint()}); rerun `tune` or pass --r"
                )
            r = _tuning_from_document(document, self.model_dir(machine_type) / TUNING_JSON).r_selected
        r = check_r(float(r))

        specs = self._real_normals(self._scan(dataset_root), machine_type)
        train = twfr_batch(ranked_matrices(specs), r)
        model = gmm.fit(train, self.run.gmm)
        train_log_likelihood = gmm.mean_log_likelihood(model, train)
        model.metadata = {
            "machine_type": machine_type,
            "r": r,
            "fingerprint": self.run.fingerprint(),
            "feature_settings": self.run.feature_settings(),
            "n_train": len(specs),
            "train_mean_log_likelihood": train_log_likelihood,
        }
        path = gmm.save_model(model, self.model_dir(machine_type) / MODEL_FILE)
        self.config.save(str(self.model_dir(machine_type) / CONFIG_FILE))
        self.logger.info(
            f"Fitted {model.n_components}-component GMM for {machine_type} at r={r:g} on {len(specs)} clips "
            f"({model.n_iter} EM iterations, {gmm.parameter_count(model)} parameters, "
            f"mean log-likelihood {train_log_likelihood:.3f}) -> {path}"
        )
        return path

    def cmd_score(self, model_path: Union[str, Path], wav_dir: Union[str, Path],
                  out_csv: Union[str, Path]) -> Path:
        """Score every WAV below wav_dir and write `clip_id,score` rows sorted by clip id.

        Clip ids are <machine_type>/<file name>. The model's config
        fingerprint must match the current spectrogram and silence settings.
        """
        model = gmm.load_model(model_path)
        fingerprint = model.metadata.get("fingerprint")
        if fingerprint != self.run.fingerprint():
            raise PipelineError(
                f"Model {model_path} was fitted with different spectrogram/silence settings "
                f"(model fingerprint {fingerprint}, current {self.run.fingerprint()}); refit the model"
            )
        if "r" not in model.metadata:
            raise PipelineError(f"Model {model_path} does not record its pooling exponent r")
        r = check_r(float(model.metadata["r"]))
        machine_type = str(model.metadata.get("machine_type", ""))

        wav_dir = Path(wav_dir)
        if not wav_dir.is_dir():
            raise PipelineError(f"Directory to score does not exist: {wav_dir}")
        paths = sorted((p for p in wav_dir.rglob("*") if p.is_file() and p.suffix.lower() == ".wav"),
                       key=lambda p: (p.name, str(p)))
        by_name: Dict[str, List[Path]] = defaultdict(list)
        for path in paths:
            by_name[path.name].append(path)
        duplicates = {name: found for name, found in by_name.items() if len(found) > 1}
        if duplicates:
            listing = "; ".join(f"{name}: {', '.join(str(p) for p in found)}" for name, found in sorted(duplicates.items()))
            raise PipelineError(f"Duplicate clip file names under {wav_dir}: {listing}")

        rows = []
        if paths:
            specs = self._map(self.real_spectrogram, paths)
            scores = gmm.score_batch(model, twfr_batch(ranked_matrices(specs), r))
            rows = sorted((clip_id(machine_type, p.name), float(s)) for p, s in zip(paths, scores))
        else:
            self.logger.warning(f"No WAV files under {wav_dir}; writing an empty score file")

        path = write_scores(out_csv, rows)
        self.logger.info(f"Scored {len(rows)} clips with {model_path} -> {path}")
        return path

    def cmd_eval(self, score_csvs: Sequence[Union[str, Path]], labels_csv: Union[str, Path],
                 p: Optional[float] = None, out_dir: Optional[Union[str, Path]] = None,
                 models_dir: Optional[Union[str, Path]] = None) -> List[EvalReport]:
        """Join score files with labels and write per-machine and aggregate results.

        Args:
            score_csvs: Score files written by cmd_score
            labels_csv: `clip_id,machine_type,label` file
            p: pAUC false-positive-rate limit (evaluation.p when None)
            out_dir: Report directory (the output directory when None)
            models_dir: Directory of per-machine tuning results to list in the report

        Returns:
            Per-machine EvalReports sorted by machine type
        """
        p = self.run.eval_p if p is None else float(p)
        out_dir = Path(out_dir) if out_dir else self.output_directory
        labels = read_labels(labels_csv)

        groups: Dict[str, List[ScoredClip]] = defaultdict(list)
        seen = set()
        for score_csv in score_csvs:
            for cid, value, _ in read_scores(score_csv):
                if cid not in labels:
                    raise PipelineError(f"Clip {cid!r} from {score_csv} has no label in {labels_csv}")
                if cid in seen:
                    raise PipelineError(f"Clip {cid!r} is scored more than once ({score_csv})")
                seen.add(cid)
                label, machine_type = labels[cid]
                machine_type = machine_type or (cid.split("/", 1)[0] if "/" in cid else "all")
                groups[machine_type].append(ScoredClip(clip_id=cid, score=value, label=label))
        if not groups:
            raise PipelineError("No scored clips to evaluate")

        reports = [evaluate(groups[m], p=p, mode=self.run.eval_mode, machine_type=m) for m in sorted(groups)]
        for m in sorted(groups):
            _write_roc(groups[m], out_dir / f"roc_{m}.csv")

        tuning: Dict[str, TuningResult] = {}
        if models_dir:
            for m in groups:
                if (Path(models_dir) / m / TUNING_JSON).is_file():
                    tuning[m] = load_tuning(Path(models_dir) / m)
        write_report(reports, out_dir, tuning)
        for report in reports:
            self.logger.info(f"{report.machine_type}: AUC {report.auc:.4f}, pAUC {report.pauc:.4f}")
        return reports

    def cmd_labels(self, dataset_root: Union[str, Path], out_csv: Union[str, Path],
                   machine_types: Optional[Sequence[str]] = None) -> Path:
        """Write the label file of the test splits, read from the DCASE file names."""
        layout = self._scan(dataset_root)
        rows = []
        for machine_type in machine_types or layout.machine_types:
            for clip in layout.labelled_clips(machine_type, "test"):
                rows.append((clip_id(machine_type, clip.clip_id), machine_type, clip.metadata.condition))
        if not rows:
            raise PipelineError(f"No labelled test clips found in {dataset_root}")
        return write_labels(out_csv, sorted(rows))

    def cmd_params(self, models_dir: Optional[Union[str, Path]] = None) -> Dict[str, int]:
        """parameter_count of every persisted model, keyed by machine type."""
        models_dir = Path(models_dir) if models_dir else self.output_directory / "models"
        counts = {}
        for path in sorted(models_dir.glob(f"*/{MODEL_FILE}")):
            counts[path.parent.name] = gmm.parameter_count(gmm.load_model(path))
        if not counts:
            raise PipelineError(f"No models found under {models_dir}")
        return counts

    def run_toy(self, machine_types: Sequence[str] = (DEFAULT_TOY_MACHINE,), n_train: int = 50,
                n_test: int = 20) -> Dict[str, Any]:
        """Build the toy dataset and run every command on it.

        Returns:
            Summary with the per-machine reports and tuning results
        """
        dataset_root = self.output_directory / "toy_dataset"
        labels = make_toy_dataset(dataset_root, machine_types, n_train=n_train, n_test=n_test,
                                  sample_rate=self.run.spectrogram.sample_rate,
                                  clip_seconds=self.run.clip_seconds, seed=self.run.seed,
                                  templates=self.templates)
        tuning: Dict[str, TuningResult] = {}
        score_files = []
        for machine_type in machine_types:
            self.cmd_captions(dataset_root, machine_type)
            synth_dir = self.output_directory / "synthetic" / machine_type
            self.cmd_generate_stub(self.model_dir(machine_type) / MANIFEST_FILE, synth_dir)
            tuning[machine_type] = self.cmd_tune(dataset_root, machine_type, synth_dir)
            model_path = self.cmd_fit(dataset_root, machine_type)
            score_files.append(self.cmd_score(model_path, dataset_root / machine_type / "test",
                                              self.output_directory / "scores" / f"{machine_type}.csv"))
        reports = self.cmd_eval(score_files, labels, models_dir=self.output_directory / "models")
        return {"reports": reports, "tuning": tuning, "labels": dataset_root / LABELS_FILE}


def _write_json(document: Dict[str, Any], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _write_roc(scored: Sequence[ScoredClip], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write("fpr,tpr,threshold\n")
        for fpr, tpr, threshold in roc_points(scored):
            f.write(f"{fpr!r},{tpr!r},{threshold!r}\n")
    return path


def _read_tuning_document(model_dir: Union[str, Path]) -> Dict[str, Any]:
    path = Path(model_dir) / TUNING_JSON
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except FileNotFoundError as e:
        raise PipelineError(f"No tuning result at {path}; run `tune` first or pass --r") from e
    except (OSError, json.JSONDecodeError) as e:
        raise PipelineError(f"Cannot read tuning result {path}: {e}") from e
    if not isinstance(document, dict):
        raise PipelineError(f"Malformed tuning result {path}: not a JSON object")
    return document


def load_tuning(model_dir: Union[str, Path]) -> TuningResult:
    """Rebuild the TuningResult persisted by cmd_tune."""
    return _tuning_from_document(_read_tuning_document(model_dir), Path(model_dir) / TUNING_JSON)


def _tuning_from_document(document: Dict[str, Any], path: Path) -> TuningResult:
    try:
        return TuningResult(
            machine_type=document["machine_type"],
            r_selected=float(document["r_selected"]),
            trace=[GridPoint(**point) for point in document["trace"]],
            baselines={name: GridPoint(**point) for name, point in document["baselines"].items()},
        )
    except (KeyError, TypeError, ValueError) as e:
        raise PipelineError(f"Malformed tuning result {path}: {e}") from e
