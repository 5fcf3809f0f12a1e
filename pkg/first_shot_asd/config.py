import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

from .audio_io import SilenceRemovalConfig
from .errors import ConfigError
from .gmm import GmmFitConfig
from .spectrogram import SpectrogramConfig
from .tuner import TuningConfig

CONFIG_DIR = Path(__file__).parent.parent / "config"


@dataclass(frozen=True)
class RunConfig:
    """Typed view of every setting one pipeline run depends on."""

    spectrogram: SpectrogramConfig = field(default_factory=SpectrogramConfig)
    silence: SilenceRemovalConfig = field(default_factory=SilenceRemovalConfig)
    tuning: TuningConfig = field(default_factory=TuningConfig)
    gmm: GmmFitConfig = field(default_factory=GmmFitConfig)
    templates_path: str = ""
    seed: int = 0
    cache_directory: str = ""
    per_caption_count: int = 10
    missing_tolerance: float = 0.0
    clip_seconds: float = 2.0
    workers: int = 1
    eval_p: float = 0.1
    eval_mode: str = "harmonic"

    @classmethod
    def from_dict(cls, config: Dict[str, Any]) -> "RunConfig":
        seed = int(config.get("seed", 0))
        spectrogram_options = config.get("spectrogram", {})
        synthesis = config.get("synthesis", {})
        evaluation = config.get("evaluation", {})
        gmm_cfg = GmmFitConfig.from_dict(config.get("gmm", {}), seed=seed)

        per_caption_count = int(synthesis.get("per_caption_count", 10))
        missing_tolerance = float(synthesis.get("missing_tolerance", 0.0))
        workers = int(config.get("scoring", {}).get("workers", 1))
        if per_caption_count < 1:
            raise ConfigError(f"synthesis.per_caption_count must be >= 1, got {per_caption_count}")
        if not (0.0 <= missing_tolerance <= 1.0):
            raise ConfigError(f"synthesis.missing_tolerance must be in [0, 1], got {missing_tolerance}")
        if workers < 1:
            raise ConfigError(f"scoring.workers must be >= 1, got {workers}")

        return cls(
            spectrogram=SpectrogramConfig.from_dict(spectrogram_options),
            silence=SilenceRemovalConfig.from_dict(config.get("silence", {})),
            tuning=TuningConfig.from_dict(config.get("tuning", {}), gmm_cfg=gmm_cfg),
            gmm=gmm_cfg,
            templates_path=str(config.get("templates_path", "") or ""),
            seed=seed,
            cache_directory=str(spectrogram_options.get("cache_directory", "") or ""),
            per_caption_count=per_caption_count,
            missing_tolerance=missing_tolerance,
            clip_seconds=float(synthesis.get("clip_seconds", 2.0)),
            workers=workers,
            eval_p=float(evaluation.get("p", 0.1)),
            eval_mode=str(evaluation.get("objective_mode", "harmonic")),
        )

    def feature_settings(self) -> Dict[str, Any]:
        """Settings that change extracted features for real clips."""
        return {
            "spectrogram": self.spectrogram.to_dict(),
            "silence": {
                "enabled": self.silence.enabled,
                "threshold_db": self.silence.threshold_db,
                "frame_len": self.silence.frame_len,
                "hop_len": self.silence.hop_len,
                "apply_to_real": self.silence.apply_to_real,
            },
        }

    def fingerprint(self) -> str:
        """SHA-256 of the canonical JSON of the spectrogram and silence settings."""
        canonical = json.dumps(self.feature_settings(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Merge override into base key by key; nested sections are merged, not replaced."""
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value
    return base


class Config:
    """Configuration manager for the anomalous sound detection pipeline.

    Loads configuration from a JSON file with default values and user overrides.
    """

    def __init__(self, config_path: Optional[str] = None):
        """Initialize the configuration system.

        Args:
            config_path: Path to a custom configuration file. If None, the default
                configuration will be used, and user_config.json if it exists.
        """
        self.config: Dict[str, Any] = {}
        self._load_default_config()

        user_config_path = CONFIG_DIR / "user_config.json"
        if user_config_path.exists():
            self._load_custom_config(str(user_config_path))

        # Explicitly provided config file overrides the user config
        if config_path:
            self._load_custom_config(config_path)

        self._validate_config()

    def _load_default_config(self) -> None:
        """Load the default configuration file."""
        default_config_path = CONFIG_DIR / "default_config.json"

        try:
            with open(default_config_path, "r") as f:
                self.config = json.load(f)
        except (FileNotFoundError, json.JSONDecodeError) as e:
            raise ConfigError(f"Error loading default configuration: {e}")

    def _load_custom_config(self, config_path: str) -> None:
        """Load a custom configuration file and merge it into the current settings.

        Args:
            config_path: Path to the custom configuration file.
        """
        try:
            with open(config_path, "r") as f:
                custom_config = json.load(f)
        except (FileNotFoundError, json.JSONDecodeError) as e:
            raise ConfigError(f"Error loading custom configuration {config_path}: {e}")

        if not isinstance(custom_config, dict):
            raise ConfigError(f"Configuration file must contain a JSON object: {config_path}")
        _merge(self.config, custom_config)

    def _validate_config(self) -> None:
        """Validate the configuration values by building the typed view."""
        self.run_config()

        if self.config.get("dataset_root"):
            root = Path(self.config["dataset_root"])
            if not root.exists() or not root.is_dir():
                raise ConfigError(f"Dataset directory does not exist: {root}")

    def get(self, key: str, default: Any = None) -> Any:
        """Get a configuration value.

        Args:
            key: The configuration key.
            default: Default value if the key doesn't exist.

        Returns:
            The configuration value.
        """
        return self.config.get(key, default)

    def set(self, key: str, value: Any) -> None:
        """Set a configuration value.

        Args:
            key: The configuration key.
            value: The value to set.
        """
        self.config[key] = value

    def set_option(self, section: str, key: str, value: Any) -> None:
        """Set one key inside a configuration section and re-validate."""
        self.config.setdefault(section, {})[key] = value
        self.run_config()

    def to_dict(self) -> Dict[str, Any]:
        """Return the configuration as a dictionary.

        Returns:
            A deep copy of the configuration dictionary.
        """
        return copy.deepcopy(self.config)

    def run_config(self) -> RunConfig:
        """Build the typed RunConfig; invariant violations raise ConfigError."""
        try:
            return RunConfig.from_dict(self.config)
        except (TypeError, ValueError, AttributeError) as e:
            raise ConfigError(f"Invalid configuration value: {e}") from e

    def save(self, filepath: str) -> None:
        """Save the current configuration to a file.

        Args:
            filepath: Path where to save the configuration.
        """
        try:
            with open(filepath, "w") as f:
                json.dump(self.config, f, indent=2)
        except OSError as e:
            raise ConfigError(f"Error saving configuration: {e}")
