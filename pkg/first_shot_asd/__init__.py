"""
First-Shot Anomalous Sound Detection

Detects anomalous machine sounds with a GMM over time-weighted frequency
domain (TWFR) features, choosing the pooling exponent r on synthetic clips
generated from captions of the normal training data.
"""

from .errors import AsdError, ConfigError
from .config import Config, RunConfig
from .audio_io import AudioClip, AudioIOError, SilenceRemovalConfig, decode_wav, encode_wav, remove_silence
from .spectrogram import Spectrogram, SpectrogramCache, SpectrogramConfig, SpectrogramError, log_mel
from .twfr import TwfrError, twfr, twfr_batch, weights
from .gmm import GmmError, GmmFitConfig, GmmModel, fit, load_model, parameter_count, save_model, score
from .metadata import Caption, ClipMetadata, MetadataError, TemplateSet, load_templates, parse_label, render_caption, to_anomaly_caption
from .metrics import EvalReport, MetricsError, ScoredClip, auc, evaluate, objective, pauc
from .tuner import RTuner, TunerError, TuningConfig, TuningResult, tune_r
from .synth_interface import CaptionManifest, ManifestEntry, SynthError, SyntheticCorpus, build_manifest, generate_stub, ingest_synthetic
from .scanner import DatasetLayout, ScanError, scan_dataset
from .report import ReportError, ReportWriter, write_report
from .pipeline import Pipeline, PipelineError

__version__ = "0.1.0"
