"""
Clip metadata and caption templates.

Parses DCASE-style file names such as
``section_00_source_test_normal_0001_car_B2_spd_31V_mic_1.wav`` and renders
them into text captions with one template per machine type.
"""

import json
import re
import string
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

from .errors import AsdError

CONDITIONS = ("normal", "anomaly")
DOMAINS = ("source", "target")
PARTITIONS = ("train", "test")

# DCASE marks clips of machines without attributes with this trailing token
NO_ATTRIBUTE_TOKEN = "noAttribute"

DEFAULT_TEMPLATES_PATH = Path(__file__).parent.parent / "config" / "caption_templates.json"


class MetadataError(AsdError):
    """Exception raised for malformed labels, templates or captions."""
    pass


@dataclass(frozen=True)
class ClipMetadata:
    """Structured form of a clip label."""

    machine_type: str
    section: str
    domain_split: str
    partition: str
    condition: str
    clip_index: str
    attributes: Tuple[Tuple[str, str], ...] = ()

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise MetadataError(f"Unknown condition {self.condition!r}")

    def attribute_dict(self) -> Dict[str, str]:
        return dict(self.attributes)

    def with_condition(self, condition: str) -> "ClipMetadata":
        return replace(self, condition=condition)


@dataclass(frozen=True)
class Caption:
    """A caption and the condition/machine it describes."""

    text: str
    condition: str
    machine_type: str

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise MetadataError(f"Unknown caption condition {self.condition!r}")
        occurrences = count_word(self.text, self.condition)
        if occurrences != 1:
            raise MetadataError(
                f"Caption must contain {self.condition!r} exactly once, found {occurrences}: {self.text!r}"
            )


@dataclass(frozen=True)
class CaptionTemplate:
    """Descriptive text pattern for one machine type, e.g.
    'This is the {condition} sound of a toy car with model {car} ...'."""

    machine_type: str
    pattern: str
    placeholders: Tuple[str, ...] = field(init=False)

    def __post_init__(self):
        try:
            names = [name for _, name, _, _ in string.Formatter().parse(self.pattern) if name is not None]
        except ValueError as e:
            raise MetadataError(f"Malformed template for {self.machine_type}: {e}") from e
        if any(name == "" for name in names):
            raise MetadataError(f"Template for {self.machine_type} has an unnamed placeholder: {self.pattern!r}")
        if names.count("condition") != 1:
            raise MetadataError(f"Template for {self.machine_type} must use {{condition}} exactly once: {self.pattern!r}")
        literal = self.pattern.replace("{condition}", "")
        for word in CONDITIONS:
            if count_word(literal, word):
                raise MetadataError(f"Template for {self.machine_type} contains the word {word!r} outside {{condition}}")
        object.__setattr__(self, "placeholders", tuple(dict.fromkeys(names)))

    @property
    def attribute_keys(self) -> Tuple[str, ...]:
        return tuple(name for name in self.placeholders if name != "condition")


def count_word(text: str, word: str) -> int:
    return len(re.findall(rf"\b{re.escape(word)}\b", text))


def parse_label(filename: Union[str, Path], machine_type: str = "") -> ClipMetadata:
    """Parse a DCASE-style clip file name.

    Expected form: section_<sec>_<domain>_<partition>_<condition>_<index>(_<key>_<value>)*.wav
    Trailing tokens are read pairwise as attributes, so values may not contain
    underscores. A lone trailing 'noAttribute' token means no attributes.

    Args:
        filename: File name or path
        machine_type: Machine type the clip belongs to (usually its directory)

    Returns:
        Parsed ClipMetadata
    """
    name = Path(filename).name
    stem = name[:-4] if name.lower().endswith(".wav") else name
    tokens = stem.split("_")

    if len(tokens) < 6 or tokens[0] != "section":
        raise MetadataError(f"Malformed label {name!r}: expected section_<sec>_<domain>_<partition>_<condition>_<index>")
    _, section, domain, partition, condition, index = tokens[:6]
    if domain not in DOMAINS:
        raise MetadataError(f"Malformed label {name!r}: unknown domain {domain!r}")
    if partition not in PARTITIONS:
        raise MetadataError(f"Malformed label {name!r}: unknown partition {partition!r}")
    if condition not in CONDITIONS:
        raise MetadataError(f"Malformed label {name!r}: unknown condition {condition!r}")

    rest = tokens[6:]
    if rest == [NO_ATTRIBUTE_TOKEN]:
        rest = []
    if len(rest) % 2:
        raise MetadataError(f"Malformed label {name!r}: attribute key {rest[-1]!r} has no value")
    attributes = tuple((rest[i], rest[i + 1]) for i in range(0, len(rest), 2))
    for key, value in attributes:
        if not key or not value:
            raise MetadataError(f"Malformed label {name!r}: empty attribute token")

    return ClipMetadata(
        machine_type=machine_type,
        section=section,
        domain_split=domain,
        partition=partition,
        condition=condition,
        clip_index=index,
        attributes=attributes,
    )


def render_filename(meta: ClipMetadata) -> str:
    """Canonical file name of a label; parse_label inverts it."""
    parts = ["section", meta.section, meta.domain_split, meta.partition, meta.condition, meta.clip_index]
    for key, value in meta.attributes:
        parts.extend([key, value])
    return "_".join(parts) + ".wav"


def render_caption(meta: ClipMetadata, template: CaptionTemplate) -> Caption:
    """Fill a machine type's template from a label.

    Args:
        meta: Parsed label
        template: Template of the same machine type

    Returns:
        The rendered Caption carrying meta's condition
    """
    if meta.machine_type and meta.machine_type.lower() != template.machine_type.lower():
        raise MetadataError(
            f"Template for {template.machine_type!r} cannot caption a {meta.machine_type!r} clip"
        )
    values = meta.attribute_dict()
    missing = [key for key in template.attribute_keys if key not in values]
    if missing:
        raise MetadataError(
            f"Label {render_filename(meta)!r} has no attribute {missing[0]!r} required by the {template.machine_type} template"
        )
    values["condition"] = meta.condition
    text = template.pattern.format_map(values)
    return Caption(text=text, condition=meta.condition, machine_type=template.machine_type)


def to_anomaly_caption(caption: Caption) -> Caption:
    """Replace the single word 'normal' with 'anomaly'."""
    if caption.condition != "normal":
        raise MetadataError(f"Only normal captions can be turned into anomaly captions: {caption.text!r}")
    if count_word(caption.text, "normal") != 1:
        raise MetadataError(f"Caption does not contain the word 'normal' exactly once: {caption.text!r}")
    text = re.sub(r"\bnormal\b", "anomaly", caption.text, count=1)
    return Caption(text=text, condition="anomaly", machine_type=caption.machine_type)


class TemplateSet:
    """Caption templates indexed by machine type (case-insensitive)."""

    def __init__(self, templates: Iterable[CaptionTemplate]):
        self._templates: Dict[str, CaptionTemplate] = {}
        for template in templates:
            self._templates[template.machine_type.lower()] = template

    def __contains__(self, machine_type: str) -> bool:
        return machine_type.lower() in self._templates

    def __len__(self) -> int:
        return len(self._templates)

    def machine_types(self) -> List[str]:
        return sorted(t.machine_type for t in self._templates.values())

    def get(self, machine_type: str) -> CaptionTemplate:
        try:
            return self._templates[machine_type.lower()]
        except KeyError:
            raise MetadataError(f"No caption template for machine type {machine_type!r}") from None

    def caption(self, meta: ClipMetadata) -> Caption:
        return render_caption(meta, self.get(meta.machine_type))


def load_templates(path: Optional[Union[str, Path]] = None) -> TemplateSet:
    """Load a JSON object mapping machine type to caption pattern.

    Args:
        path: Template file; defaults to config/caption_templates.json

    Returns:
        The loaded TemplateSet
    """
    path = Path(path) if path else DEFAULT_TEMPLATES_PATH
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise MetadataError(f"Error loading caption templates from {path}: {e}") from e

    if not isinstance(document, dict):
        raise MetadataError(f"Caption template file must be a JSON object: {path}")
    return TemplateSet(
        CaptionTemplate(machine_type=machine_type, pattern=pattern)
        for machine_type, pattern in document.items()
        if not machine_type.startswith("_")
    )
