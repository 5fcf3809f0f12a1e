"""
Bundled toy experiment.

Writes a small DCASE-style tree in which normal clips are a stationary tone
plus noise and anomalous clips add transient bursts. Each clip's tone is
derived from its caption, the same way the stand-in generator derives it,
so stub-generated synthetic clips resemble the real toy clips.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .audio_io import AudioClip, encode_wav
from .errors import ConfigError
from .metadata import ClipMetadata, TemplateSet, load_templates, render_filename
from .metrics import clip_id, write_labels
from .synth_interface import caption_tone_hz, stable_seed, stub_signal

logger = logging.getLogger(__name__)

# Attribute values per toy machine type; keys match config/caption_templates.json
TOY_MACHINES: Dict[str, Tuple[Tuple[str, Tuple[str, ...]], ...]] = {
    "toy-drone": (("prop", ("A", "B")), ("mic", ("1",))),
    "toy-nscale": (("spd", ("3", "5")),),
    "toy-tank": (("model", ("T1", "T2")),),
    "toy-vacuum": (("level", ("1", "2")),),
    "toy-bandsaw": (("vel", ("6", "9")),),
    "toy-grinder": (("grindstone", ("1", "2")), ("plate", ("1",))),
    "toy-shaker": (("freq", ("30", "50")),),
}
DEFAULT_TOY_MACHINE = "toy-tank"
LABELS_FILE = "labels.csv"


def _attribute_sets(machine_type: str) -> List[Tuple[Tuple[str, str], ...]]:
    """Every combination of a toy machine's attribute values, in a fixed order."""
    combos: List[Tuple[Tuple[str, str], ...]] = [()]
    for key, values in TOY_MACHINES[machine_type]:
        combos = [combo + ((key, value),) for combo in combos for value in values]
    return combos


def _write_clip(root: Path, machine_type: str, meta: ClipMetadata, templates: TemplateSet,
                sample_rate: int, clip_seconds: float, seed: int) -> Path:
    tone_hz = caption_tone_hz(templates.caption(meta.with_condition("normal")).text)
    name = render_filename(meta)
    rng = np.random.default_rng(stable_seed("toy", seed, machine_type, name))
    samples = stub_signal(tone_hz, int(round(clip_seconds * sample_rate)), sample_rate, rng,
                          anomalous=meta.condition == "anomaly")
    path = root / machine_type / meta.partition / name
    encode_wav(AudioClip(samples=samples, sample_rate=sample_rate, source_path=name), path)
    return path


def make_toy_dataset(root: Path, machine_types: Sequence[str] = (DEFAULT_TOY_MACHINE,),
                     n_train: int = 50, n_test: int = 20, sample_rate: int = 16000,
                     clip_seconds: float = 2.0, seed: int = 0,
                     templates: Optional[TemplateSet] = None) -> Path:
    """Write the toy dataset and its test labels.

    Args:
        root: Dataset root to create
        machine_types: Toy machine types to generate (keys of TOY_MACHINES)
        n_train: Normal training clips per machine
        n_test: Test clips per condition per machine
        sample_rate: Sample rate of the written WAVs
        clip_seconds: Clip length
        seed: Seed for every clip

    Returns:
        Path of the written labels file
    """
    root = Path(root)
    templates = templates or load_templates()
    label_rows = []
    for machine_type in machine_types:
        if machine_type not in TOY_MACHINES:
            raise ConfigError(f"Unknown toy machine type {machine_type!r} (available: {', '.join(TOY_MACHINES)})")
        combos = _attribute_sets(machine_type)

        for i in range(n_train):
            meta = ClipMetadata(machine_type, "00", "source", "train", "normal", f"{i:04d}", combos[i % len(combos)])
            _write_clip(root, machine_type, meta, templates, sample_rate, clip_seconds, seed)

        index = 0
        for condition in ("normal", "anomaly"):
            for i in range(n_test):
                meta = ClipMetadata(machine_type, "00", "source", "test", condition, f"{index:04d}",
                                    combos[i % len(combos)])
                path = _write_clip(root, machine_type, meta, templates, sample_rate, clip_seconds, seed)
                label_rows.append((clip_id(machine_type, path.name), machine_type, condition))
                index += 1
        logger.info(f"Wrote toy machine {machine_type}: {n_train} train, {2 * n_test} test clips")

    return write_labels(root / LABELS_FILE, label_rows)
