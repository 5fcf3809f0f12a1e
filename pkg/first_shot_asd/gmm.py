"""
Diagonal-covariance Gaussian mixture model used as the anomaly scorer.

Model: p(x) = sum_k w_k N(x_hat | mu_k, diag(var_k)), where x_hat is x
standardised with the training mean and scale. The anomaly score is the
negative log-likelihood, so higher means more anomalous.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
from scipy.special import logsumexp

from .errors import AsdError, ConfigError

logger = logging.getLogger(__name__)

MODEL_FORMAT = "first_shot_asd.gmm"
MODEL_VERSION = 1
SCALE_FLOOR = 1e-12
LOG_2PI = np.log(2.0 * np.pi)


class GmmError(AsdError):
    """Exception raised for errors fitting, scoring or persisting a GMM."""
    pass


@dataclass(frozen=True)
class GmmFitConfig:
    """EM settings.

    tol bounds the improvement of the mean log-likelihood relative to
    max(|previous|, 1): relative for |log-likelihood| >= 1 and absolute below
    that.
    """

    n_components: int = 2
    max_iters: int = 100
    tol: float = 1e-6
    variance_floor: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.n_components < 1:
            raise ConfigError(f"gmm.n_components must be >= 1, got {self.n_components}")
        if self.max_iters < 1:
            raise ConfigError(f"gmm.max_iters must be >= 1, got {self.max_iters}")
        if not self.tol > 0:
            raise ConfigError(f"gmm.tol must be > 0, got {self.tol}")
        if not self.variance_floor > 0:
            raise ConfigError(f"gmm.variance_floor must be > 0, got {self.variance_floor}")

    @classmethod
    def from_dict(cls, options: Dict[str, Any], seed: Optional[int] = None) -> "GmmFitConfig":
        return cls(
            n_components=int(options.get("n_components", 2)),
            max_iters=int(options.get("max_iters", 100)),
            tol=float(options.get("tol", 1e-6)),
            variance_floor=float(options.get("variance_floor", 1e-6)),
            seed=int(options.get("seed", 0) if seed is None else seed),
        )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(eq=False)
class GmmModel:
    """A fitted mixture. means and variances live in the standardised feature space."""

    means: np.ndarray
    variances: np.ndarray
    mixture_weights: np.ndarray
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    config: GmmFitConfig = field(default_factory=GmmFitConfig)
    log_likelihood_trace: List[float] = field(default_factory=list)
    converged: bool = False
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.variances = np.atleast_2d(np.asarray(self.variances, dtype=np.float64))
        self.mixture_weights = np.asarray(self.mixture_weights, dtype=np.float64).reshape(-1)
        self.feature_mean = np.asarray(self.feature_mean, dtype=np.float64).reshape(-1)
        self.feature_scale = np.asarray(self.feature_scale, dtype=np.float64).reshape(-1)

        k, m = self.means.shape
        if k < 1:
            raise GmmError("A GMM needs at least one component")
        if self.variances.shape != (k, m) or self.mixture_weights.shape != (k,):
            raise GmmError(
                f"Inconsistent GMM shapes: means {self.means.shape}, variances {self.variances.shape}, "
                f"weights {self.mixture_weights.shape}"
            )
        if self.feature_mean.shape != (m,) or self.feature_scale.shape != (m,):
            raise GmmError(f"Standardisation vectors must have length {m}")
        if np.any(self.variances <= 0) or np.any(self.feature_scale <= 0):
            raise GmmError("Variances and feature scales must be positive")
        if np.any(self.mixture_weights < 0) or abs(self.mixture_weights.sum() - 1.0) > 1e-9:
            raise GmmError(f"Mixture weights must be non-negative and sum to 1, got {self.mixture_weights.sum()!r}")

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def n_features(self) -> int:
        return self.means.shape[1]

    @property
    def n_iter(self) -> int:
        return max(len(self.log_likelihood_trace) - 1, 0)

    @property
    def raw_means(self) -> np.ndarray:
        """Component means mapped back to the raw feature space."""
        return self.means * self.feature_scale + self.feature_mean

    @property
    def raw_variances(self) -> np.ndarray:
        """Component variances mapped back to the raw feature space."""
        return self.variances * self.feature_scale ** 2

    def standardize(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_features:
            raise GmmError(f"Feature dimension mismatch: model has {self.n_features}, input has {x.shape[-1]}")
        return (x - self.feature_mean) / self.feature_scale


def _component_log_prob(x_hat: np.ndarray, means: np.ndarray, variances: np.ndarray, log_weights: np.ndarray) -> np.ndarray:
    """log w_k + log N(x_hat | mu_k, diag var_k) for every row and component, shape (n, K)."""
    log_det = np.sum(np.log(variances), axis=1)
    maha = np.empty((x_hat.shape[0], means.shape[0]), dtype=np.float64)
    for k in range(means.shape[0]):
        diff = x_hat - means[k]
        maha[:, k] = np.sum(diff * diff / variances[k], axis=1)
    with np.errstate(divide="ignore"):
        return log_weights[None, :] - 0.5 * (x_hat.shape[1] * LOG_2PI + log_det[None, :] + maha)


def _kmeans_plus_plus(x: np.ndarray, n_components: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded k-means++ centre selection."""
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    closest = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, n_components):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(n, p=closest / total)
        else:
            idx = rng.integers(n)
        centers.append(x[idx])
        closest = np.minimum(closest, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers, dtype=np.float64)


def _e_step(x_hat: np.ndarray, means: np.ndarray, variances: np.ndarray, mixture_weights: np.ndarray):
    with np.errstate(divide="ignore"):
        log_weights = np.log(mixture_weights)
    log_prob = _component_log_prob(x_hat, means, variances, log_weights)
    log_norm = logsumexp(log_prob, axis=1)
    responsibilities = np.exp(log_prob - log_norm[:, None])
    return float(np.mean(log_norm)), responsibilities


def _m_step(x_hat: np.ndarray, responsibilities: np.ndarray, variance_floor: float):
    n = x_hat.shape[0]
    nk = responsibilities.sum(axis=0)
    safe_nk = np.where(nk > 0, nk, 1.0)

    mixture_weights = nk / n
    mixture_weights = mixture_weights / mixture_weights.sum()
    means = (responsibilities.T @ x_hat) / safe_nk[:, None]
    variances = np.empty_like(means)
    for k in range(means.shape[0]):
        diff = x_hat - means[k]
        variances[k] = (responsibilities[:, k] @ (diff * diff)) / safe_nk[k]
    return mixture_weights, means, np.maximum(variances, variance_floor)


def fit(train: Union[np.ndarray, Sequence[np.ndarray]], cfg: GmmFitConfig) -> GmmModel:
    """Fit a diagonal GMM with EM from a seeded k-means++ start.

    Features are z-scored with the training mean and population standard
    deviation (stored on the model). EM stops when the mean log-likelihood
    improves by less than tol relative to max(|previous|, 1), or after
    max_iters iterations. Variances are floored after every M-step.

    Args:
        train: Training vectors, shape (n_samples, M)
        cfg: Fit configuration

    Returns:
        The fitted GmmModel
    """
    x = np.asarray(train, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise GmmError(f"Training data must be a set of vectors, got array of shape {x.shape}")
    n, m = x.shape
    if n < cfg.n_components:
        raise GmmError(f"Need at least {cfg.n_components} training vectors for {cfg.n_components} components, got {n}")
    if not np.all(np.isfinite(x)):
        raise GmmError("Training data contains non-finite values")

    feature_mean = x.mean(axis=0)
    feature_scale = x.std(axis=0)
    flat = feature_scale < SCALE_FLOOR
    if flat.any():
        logger.warning(
            f"{int(flat.sum())} feature dimension(s) have zero variance (first: {int(np.flatnonzero(flat)[0])}); "
            f"flooring their scale at {SCALE_FLOOR}"
        )
        feature_scale = np.where(flat, SCALE_FLOOR, feature_scale)
    x_hat = (x - feature_mean) / feature_scale

    rng = np.random.default_rng(cfg.seed)
    means = _kmeans_plus_plus(x_hat, cfg.n_components, rng)
    variances = np.tile(np.maximum(x_hat.var(axis=0), cfg.variance_floor), (cfg.n_components, 1))
    mixture_weights = np.full(cfg.n_components, 1.0 / cfg.n_components)

    previous, responsibilities = _e_step(x_hat, means, variances, mixture_weights)
    trace = [previous]
    converged = False
    for _ in range(cfg.max_iters):
        mixture_weights, means, variances = _m_step(x_hat, responsibilities, cfg.variance_floor)
        current, responsibilities = _e_step(x_hat, means, variances, mixture_weights)
        trace.append(current)
        if current - previous < cfg.tol * max(abs(previous), 1.0):
            converged = True
            break
        previous = current

    if not converged:
        logger.warning(f"EM stopped after max_iters={cfg.max_iters} without reaching tol={cfg.tol}")

    return GmmModel(
        means=means,
        variances=variances,
        mixture_weights=mixture_weights,
        feature_mean=feature_mean,
        feature_scale=feature_scale,
        config=cfg,
        log_likelihood_trace=trace,
        converged=converged,
    )


def score_standardized(model: GmmModel, x_hat: np.ndarray) -> np.ndarray:
    """Negative log-likelihood of already standardised vectors."""
    x_hat = np.atleast_2d(np.asarray(x_hat, dtype=np.float64))
    with np.errstate(divide="ignore"):
        log_weights = np.log(model.mixture_weights)
    log_prob = _component_log_prob(x_hat, model.means, model.variances, log_weights)
    return -logsumexp(log_prob, axis=1)


def score_batch(model: GmmModel, x: np.ndarray) -> np.ndarray:
    """Anomaly scores for a stack of raw vectors, shape (n,)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return score_standardized(model, model.standardize(x))


def score(model: GmmModel, x: np.ndarray) -> float:
    """Anomaly score -log p(x) of one raw TWFR vector; higher is more anomalous."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise GmmError(f"score expects a single vector, got shape {x.shape}")
    return float(score_batch(model, x)[0])


def mean_log_likelihood(model: GmmModel, x: np.ndarray) -> float:
    return float(-np.mean(score_batch(model, x)))


def parameter_count(model: GmmModel) -> int:
    """Means, variances and weights of every component plus the two standardisation vectors."""
    k, m = model.n_components, model.n_features
    return k * (2 * m + 1) + 2 * m


def save_model(model: GmmModel, path: Union[str, Path]) -> Path:
    """Write the model as a JSON document.

    Floats go through repr, so a reloaded model scores bit-for-bit identically.
    """
    path = Path(path)
    document = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "config": model.config.to_dict(),
        "n_components": model.n_components,
        "n_features": model.n_features,
        "feature_mean": model.feature_mean.tolist(),
        "feature_scale": model.feature_scale.tolist(),
        "mixture_weights": model.mixture_weights.tolist(),
        "means": model.means.tolist(),
        "variances": model.variances.tolist(),
        "converged": model.converged,
        "log_likelihood_trace": list(model.log_likelihood_trace),
        "metadata": model.metadata,
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(document, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise GmmError(f"Error saving model to {path}: {e}") from e
    return path


def load_model(path: Union[str, Path]) -> GmmModel:
    """Read a model written by save_model."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except FileNotFoundError as e:
        raise GmmError(f"Model file not found: {path}") from e
    except (OSError, json.JSONDecodeError) as e:
        raise GmmError(f"Error loading model {path}: {e}") from e

    if document.get("format") != MODEL_FORMAT:
        raise GmmError(f"Not a GMM model document (format={document.get('format')!r}): {path}")
    if document.get("version") != MODEL_VERSION:
        raise GmmError(f"Unsupported model version {document.get('version')!r}: {path}")

    try:
        return GmmModel(
            means=document["means"],
            variances=document["variances"],
            mixture_weights=document["mixture_weights"],
            feature_mean=document["feature_mean"],
            feature_scale=document["feature_scale"],
            config=GmmFitConfig(**document["config"]),
            log_likelihood_trace=document.get("log_likelihood_trace", []),
            converged=bool(document.get("converged", False)),
            metadata=document.get("metadata", {}),
        )
    except KeyError as e:
        raise GmmError(f"Model document is missing field {e}: {path}") from e
