from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from .errors import AsdError
from .metadata import ClipMetadata, MetadataError, parse_label

SPLITS = ("train", "test")


class ScanError(AsdError):
    """Exception raised when a dataset tree cannot be scanned."""
    pass


class ClipFile:
    """Represents one WAV file of the dataset with its parsed label."""

    def __init__(self, file_path: Path, relative_path: Path, machine_type: str, split: str):
        """Initialize a clip file.

        Args:
            file_path: Absolute path to the WAV file
            relative_path: Path relative to the dataset root
            machine_type: Machine directory the file belongs to
            split: "train" or "test"
        """
        self.file_path = file_path
        self.relative_path = relative_path
        self.machine_type = machine_type
        self.split = split
        self.clip_id = file_path.name
        self.metadata: Optional[ClipMetadata] = None
        self.parse_error: Optional[str] = None

    def parse(self) -> None:
        """Parse the file name into metadata, remembering the error if it is malformed."""
        try:
            self.metadata = parse_label(self.file_path.name, machine_type=self.machine_type)
        except MetadataError as e:
            self.parse_error = str(e)


class DatasetLayout:
    """A DCASE-style tree: <root>/<machine_type>/{train,test}/*.wav."""

    def __init__(self, root: Path, clips: Dict[Tuple[str, str], List[ClipFile]]):
        self.root = root
        self._clips = clips
        self.machine_types = sorted({machine for machine, _ in clips})
        self.splits = SPLITS

    def has_machine(self, machine_type: str) -> bool:
        return machine_type in self.machine_types

    def clips(self, machine_type: str, split: str) -> List[ClipFile]:
        if not self.has_machine(machine_type):
            raise ScanError(
                f"Unknown machine type {machine_type!r} in {self.root} "
                f"(available: {', '.join(self.machine_types) or 'none'})"
            )
        return list(self._clips.get((machine_type, split), []))

    def labelled_clips(self, machine_type: str, split: str) -> List[ClipFile]:
        """Clips of a split whose names all parse; unparseable names are listed in the error."""
        clips = self.clips(machine_type, split)
        broken = [clip for clip in clips if clip.metadata is None]
        if broken:
            listing = "; ".join(f"{clip.relative_path}: {clip.parse_error}" for clip in broken)
            raise ScanError(f"{len(broken)} unparseable file name(s) in {machine_type}/{split}: {listing}")
        return clips

    def normal_train_metadata(self, machine_type: str) -> List[ClipMetadata]:
        clips = self.labelled_clips(machine_type, "train")
        if not clips:
            raise ScanError(f"Machine type {machine_type!r} has no training clips in {self.root}")
        return [clip.metadata for clip in clips if clip.metadata.condition == "normal"]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "root": str(self.root),
            "machine_types": self.machine_types,
            "counts": {
                f"{machine}/{split}": len(files) for (machine, split), files in sorted(self._clips.items())
            },
        }


class DatasetScanner:
    """Scans a dataset root for machine directories and their WAV files."""

    def __init__(self, root: Path):
        """Initialize the dataset scanner.

        Args:
            root: Dataset root directory
        """
        self.root = Path(root)

    def scan(self) -> DatasetLayout:
        """Scan the dataset root.

        Returns:
            The DatasetLayout with every clip parsed
        """
        if not self.root.exists() or not self.root.is_dir():
            raise ScanError(f"Dataset directory does not exist: {self.root}")

        clips: Dict[Tuple[str, str], List[ClipFile]] = {}
        for machine_dir in sorted(p for p in self.root.iterdir() if p.is_dir()):
            for split in SPLITS:
                split_dir = machine_dir / split
                if not split_dir.is_dir():
                    continue
                files = sorted(p for p in split_dir.iterdir() if p.is_file() and p.suffix.lower() == ".wav")
                entries = []
                for path in files:
                    clip = ClipFile(path, path.relative_to(self.root), machine_dir.name, split)
                    clip.parse()
                    entries.append(clip)
                clips[(machine_dir.name, split)] = entries
        return DatasetLayout(self.root, clips)


def scan_dataset(root: Path) -> DatasetLayout:
    """Scan a dataset directory.

    Args:
        root: Dataset root

    Returns:
        The DatasetLayout
    """
    scanner = DatasetScanner(root)
    return scanner.scan()
