"""
Synthetic Audio Interface Module

Exports caption manifests for an external text-to-audio generator, ingests
the WAV files it returns, and provides a deterministic stand-in generator
so the pipeline can run offline.
"""

import csv
import hashlib
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .audio_io import AudioClip, AudioIOError, SilenceRemovalConfig, decode_wav, encode_wav, remove_silence
from .errors import AsdError
from .metadata import Caption, ClipMetadata, MetadataError, TemplateSet, to_anomaly_caption

logger = logging.getLogger(__name__)

MANIFEST_FIELDS = ("output_stem", "machine_type", "condition", "requested_count", "caption")


class SynthError(AsdError):
    """Exception raised for manifest or synthetic corpus problems."""
    pass


@dataclass(frozen=True)
class ManifestEntry:
    caption: Caption
    machine_type: str
    condition: str
    requested_count: int
    output_stem: str

    def __post_init__(self):
        if self.requested_count < 1:
            raise SynthError(f"requested_count must be >= 1 for {self.output_stem!r}, got {self.requested_count}")
        if self.condition != self.caption.condition:
            raise SynthError(f"Entry {self.output_stem!r} condition does not match its caption")
        if any(ch in self.caption.text for ch in "\t\r\n"):
            raise SynthError(f"Caption for {self.output_stem!r} contains a tab or line break")

    def file_names(self) -> List[str]:
        """Names the generator must produce: <output_stem>_<k>.wav for k = 0 .. requested_count - 1."""
        return [f"{self.output_stem}_{k}.wav" for k in range(self.requested_count)]


@dataclass
class CaptionManifest:
    entries: List[ManifestEntry]

    def __post_init__(self):
        stems = [entry.output_stem for entry in self.entries]
        duplicates = sorted({stem for stem in stems if stems.count(stem) > 1})
        if duplicates:
            raise SynthError(f"Duplicate output stems in manifest: {', '.join(duplicates)}")

    def __len__(self) -> int:
        return len(self.entries)

    def requested(self, condition: str) -> int:
        return sum(entry.requested_count for entry in self.entries if entry.condition == condition)


@dataclass
class SyntheticCorpus:
    machine_type: str
    normals: List[AudioClip]
    anomalies: List[AudioClip]
    manifest_ref: str = ""
    missing: List[str] = field(default_factory=list)
    extra: List[str] = field(default_factory=list)

    def require_both_conditions(self) -> None:
        if not self.normals or not self.anomalies:
            raise SynthError(
                f"Synthetic corpus for {self.machine_type} needs normal and anomaly clips, "
                f"got {len(self.normals)} normals and {len(self.anomalies)} anomalies"
            )


def build_manifest(metadata: Sequence[ClipMetadata], templates: TemplateSet,
                   per_caption_count: int = 10) -> CaptionManifest:
    """One normal and one anomaly entry per distinct caption of a target machine's normal clips.

    Args:
        metadata: Normal-condition labels of one machine type
        templates: Caption templates
        per_caption_count: Clips requested per entry

    Returns:
        The CaptionManifest, entries in first-seen caption order
    """
    if not metadata:
        raise SynthError("Cannot build a manifest from empty metadata")
    machine_types = sorted({meta.machine_type for meta in metadata})
    if len(machine_types) != 1:
        raise SynthError(f"Manifest metadata mixes machine types: {', '.join(machine_types)}")
    anomalous = [meta for meta in metadata if meta.condition != "normal"]
    if anomalous:
        raise SynthError(
            f"Target machine metadata must be normal-only; found {len(anomalous)} anomaly clip(s), "
            f"e.g. index {anomalous[0].clip_index}"
        )

    captions: Dict[str, Caption] = {}
    for meta in metadata:
        caption = templates.caption(meta)
        captions.setdefault(caption.text, caption)

    machine_type = machine_types[0]
    entries = []
    for i, caption in enumerate(captions.values()):
        for variant in (caption, to_anomaly_caption(caption)):
            entries.append(ManifestEntry(
                caption=variant,
                machine_type=machine_type,
                condition=variant.condition,
                requested_count=per_caption_count,
                output_stem=f"{machine_type}_cap{i:03d}_{variant.condition}",
            ))
    return CaptionManifest(entries=entries)


def write_manifest(manifest: CaptionManifest, path: Union[str, Path]) -> Path:
    """Write the manifest as UTF-8 tab-separated records with a header line.

    Fields are written verbatim (no quoting); the file only appears at path
    once every record has been written.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    partial = path.with_name(path.name + ".partial")
    try:
        with open(partial, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, delimiter="\t", lineterminator="\n", quoting=csv.QUOTE_NONE, quotechar=None)
            writer.writerow(MANIFEST_FIELDS)
            for entry in manifest.entries:
                writer.writerow([entry.output_stem, entry.machine_type, entry.condition,
                                 entry.requested_count, entry.caption.text])
        os.replace(partial, path)
    except (OSError, csv.Error) as e:
        partial.unlink(missing_ok=True)
        raise SynthError(f"Error writing manifest {path}: {e}") from e
    return path


def read_manifest(path: Union[str, Path]) -> CaptionManifest:
    """Read a manifest written by write_manifest."""
    path = Path(path)
    entries = []
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f, delimiter="\t", quoting=csv.QUOTE_NONE, quotechar=None)
            if tuple(reader.fieldnames or ()) != MANIFEST_FIELDS:
                raise SynthError(f"Manifest header must be {' '.join(MANIFEST_FIELDS)}: {path}")
            for line_no, row in enumerate(reader, start=2):
                try:
                    caption = Caption(text=row["caption"], condition=row["condition"], machine_type=row["machine_type"])
                    entries.append(ManifestEntry(
                        caption=caption,
                        machine_type=row["machine_type"],
                        condition=row["condition"],
                        requested_count=int(row["requested_count"]),
                        output_stem=row["output_stem"],
                    ))
                except (MetadataError, ValueError, TypeError) as e:
                    raise SynthError(f"Invalid manifest record on line {line_no} of {path}: {e}") from e
    except FileNotFoundError as e:
        raise SynthError(f"Manifest not found: {path}") from e
    except OSError as e:
        raise SynthError(f"Cannot read manifest {path}: {e}") from e
    return CaptionManifest(entries=entries)


def ingest_synthetic(directory: Union[str, Path], manifest: CaptionManifest,
                     silence: Optional[SilenceRemovalConfig] = None,
                     missing_tolerance: float = 0.0, workers: int = 1,
                     manifest_ref: str = "") -> SyntheticCorpus:
    """Load generated WAVs named <output_stem>_<k>.wav and split them by condition.

    Extra WAVs are reported and ignored. Missing files are an error once
    they exceed missing_tolerance as a fraction of all requested files.

    Args:
        directory: Directory holding the generated WAV files
        manifest: The manifest the files were generated from
        silence: Silence removal applied to every clip (skipped when None or disabled)
        missing_tolerance: Allowed fraction of missing files
        workers: Threads used for decoding
        manifest_ref: Manifest identifier recorded on the corpus

    Returns:
        The SyntheticCorpus
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise SynthError(f"Synthetic audio directory does not exist: {directory}")
    if not manifest.entries:
        raise SynthError("Cannot ingest against an empty manifest")

    expected: Dict[str, ManifestEntry] = {}
    for entry in manifest.entries:
        for name in entry.file_names():
            expected[name] = entry
    present = {p.name: p for p in directory.iterdir() if p.is_file() and p.suffix.lower() == ".wav"}

    missing = sorted(set(expected) - set(present))
    extra = sorted(set(present) - set(expected))
    if len(missing) > missing_tolerance * len(expected):
        raise SynthError(
            f"{len(missing)} of {len(expected)} synthetic files missing in {directory} "
            f"(tolerance {missing_tolerance:.0%}): {', '.join(missing)}"
        )
    if missing:
        logger.warning(f"{len(missing)} synthetic file(s) missing (within tolerance): {', '.join(missing)}")
    if extra:
        logger.warning(f"Ignoring {len(extra)} WAV file(s) not in the manifest: {', '.join(extra)}")

    names = [name for name in expected if name in present]

    def load(name: str) -> AudioClip:
        try:
            clip = decode_wav(present[name])
        except AudioIOError as e:
            raise SynthError(f"Undecodable synthetic file: {e}") from e
        if silence is not None and silence.enabled:
            clip = remove_silence(clip, silence)
        return clip

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            clips = list(pool.map(load, names))
    else:
        clips = [load(name) for name in names]

    normals = [clip for name, clip in zip(names, clips) if expected[name].condition == "normal"]
    anomalies = [clip for name, clip in zip(names, clips) if expected[name].condition == "anomaly"]
    machine_types = sorted({entry.machine_type for entry in manifest.entries})
    logger.info(f"Ingested {len(normals)} normal and {len(anomalies)} anomaly synthetic clips from {directory}")

    return SyntheticCorpus(
        machine_type=",".join(machine_types),
        normals=normals,
        anomalies=anomalies,
        manifest_ref=manifest_ref,
        missing=missing,
        extra=extra,
    )


def stable_seed(*parts: object) -> int:
    """Platform-independent 64-bit seed from the given parts."""
    joined = "\x1f".join(str(part) for part in parts)
    return int.from_bytes(hashlib.sha256(joined.encode("utf-8")).digest()[:8], "little")


def caption_tone_hz(caption_text: str) -> float:
    """Tone frequency of the stand-in signal, derived from the normal form of a caption.

    The normal and anomaly variants of one caption share the same tone.
    """
    normal_text = caption_text.replace("anomaly", "normal")
    return 200.0 + 25.0 * (stable_seed("tone", normal_text) % 40)


def stub_signal(tone_hz: float, n_samples: int, sample_rate: int, rng: np.random.Generator,
                anomalous: bool) -> np.ndarray:
    """Stationary tone plus noise; anomalous signals add short broadband bursts."""
    t = np.arange(n_samples) / sample_rate
    phase = rng.uniform(0.0, 2.0 * np.pi)
    signal = 0.3 * np.sin(2.0 * np.pi * tone_hz * t + phase) + 0.05 * rng.standard_normal(n_samples)
    if anomalous:
        burst_len = max(1, int(0.02 * sample_rate))
        for _ in range(int(rng.integers(2, 5))):
            start = int(rng.integers(0, max(1, n_samples - burst_len)))
            burst = 0.8 * rng.standard_normal(burst_len) * np.hanning(burst_len)
            signal[start:start + burst_len] += burst[:n_samples - start]
    return np.clip(signal, -1.0, 1.0)


def generate_stub(manifest: CaptionManifest, out_dir: Union[str, Path], sample_rate: int = 16000,
                  clip_seconds: float = 2.0, seed: int = 0) -> List[Path]:
    """Write every file a manifest requests using the deterministic stand-in generator.

    Each clip is seeded from (seed, caption, k), so reruns write identical files.

    Returns:
        Paths of the written WAV files, in manifest order
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_samples = int(round(clip_seconds * sample_rate))

    written = []
    for entry in manifest.entries:
        tone_hz = caption_tone_hz(entry.caption.text)
        for k, name in enumerate(entry.file_names()):
            rng = np.random.default_rng(stable_seed("stub", seed, entry.caption.text, k))
            samples = stub_signal(tone_hz, n_samples, sample_rate, rng, anomalous=entry.condition == "anomaly")
            written.append(encode_wav(AudioClip(samples=samples, sample_rate=sample_rate,
                                                source_path=name), out_dir / name))
    logger.info(f"Generated {len(written)} stand-in clips in {out_dir}")
    return written
