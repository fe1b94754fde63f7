"""
config_loader.py - Experiment configuration.

Defaults for every knob live in config/experiment.yaml and the replay
policy registry in config/policies.yaml; both are read once per process.
A run file is a flat list of ``key=value`` lines (``#`` starts a comment)
overriding those defaults. Unknown keys are rejected, and the fully
resolved configuration is echoed to the run directory in the same format.
"""

import logging
import os
import typing
from dataclasses import asdict, dataclass, fields
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

import yaml

from model import ModelConfig
from probe import ProbeConfig
from stream import AugmentationConfig
from trainer import TrainConfig

logger = logging.getLogger(__name__)

# Locate config/ relative to this file (src/config_loader.py → root/config/)
_CONFIG_DIR = Path(__file__).resolve().parent.parent / "config"

OUTPUT_DIR_ENV = "SOLAR_OUTPUT_DIR"

_NULLS = {"", "null", "none", "~"}


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config key '{key}': {message}")


@lru_cache(maxsize=1)
def load_defaults() -> Dict[str, Any]:
    """
    Load the 'experiment' section of config/experiment.yaml.

    Raises:
        FileNotFoundError: If config/experiment.yaml does not exist.
    """
    config_path = _CONFIG_DIR / "experiment.yaml"
    if not config_path.exists():
        raise FileNotFoundError(
            f"Experiment defaults not found: {config_path}. "
            "Ensure config/experiment.yaml exists at the repository root."
        )
    raw = yaml.safe_load(config_path.read_text(encoding="utf-8")) or {}
    logger.debug("Loaded experiment defaults from %s", config_path)
    return dict(raw.get("experiment", raw))


@lru_cache(maxsize=1)
def load_policy_registry() -> Dict[str, Any]:
    """Load config/policies.yaml: policy name → {enabled, args, notes}."""
    config_path = _CONFIG_DIR / "policies.yaml"
    if not config_path.exists():
        raise FileNotFoundError(f"Replay policy registry not found: {config_path}")
    raw = yaml.safe_load(config_path.read_text(encoding="utf-8")) or {}
    return {k: v for k, v in raw.get("policies", raw).items() if isinstance(v, dict)}


def parse_config_text(text: str) -> Dict[str, Any]:
    """
    Parse flat ``key=value`` lines.

    Values are typed with ``yaml.safe_load`` (so ``true``, ``3``, ``0.5`` and
    ``null`` come back as bool/int/float/None); anything else stays a string.

    Raises:
        ConfigError: malformed line or repeated key.
    """
    values: Dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, f"line {lineno} is not of the form key=value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(line, f"line {lineno} has an empty key")
        if key in values:
            raise ConfigError(key, f"repeated on line {lineno}")
        try:
            values[key] = yaml.safe_load(raw) if raw else None
        except yaml.YAMLError:
            values[key] = raw
    return values


def _coerce(key: str, value: Any, annotation) -> Any:
    origin = typing.get_origin(annotation)
    if origin is typing.Union:
        inner = [a for a in typing.get_args(annotation) if a is not type(None)][0]
        if value is None or (isinstance(value, str) and value.lower() in _NULLS):
            return None
        return _coerce(key, value, inner)
    try:
        if annotation is bool:
            if isinstance(value, bool):
                return value
            raise ConfigError(key, f"expected true/false, got {value!r}")
        if annotation is int:
            if isinstance(value, bool):
                raise ConfigError(key, f"expected an integer, got {value!r}")
            if isinstance(value, float) and not value.is_integer():
                raise ConfigError(key, f"expected an integer, got {value!r}")
            return int(value)
        if annotation is float:
            if isinstance(value, bool):
                raise ConfigError(key, f"expected a number, got {value!r}")
            # YAML 1.1 reads "1e-4" as a string
            return float(value)
        if annotation is str:
            if value is None:
                raise ConfigError(key, "must not be empty")
            return str(value)
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(key, f"cannot read {value!r} as {annotation.__name__}") from e
    return value


def _format(value: Any) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


@dataclass(frozen=True)
class ExperimentConfig:
    """Every knob of a run. Defaults come from config/experiment.yaml."""

    run_id: str
    output_dir: str
    seed: int

    # stream
    dataset: str
    num_classes: int
    per_class: int
    test_per_class: int
    data_dim: int
    cluster_scale: float
    cifar_labels: str
    cifar_download: bool
    num_tasks: int
    stream_batch_size: int
    passes: int
    shuffle_class_order: bool

    # augmentation
    aug_noise_std: float
    aug_dropout: float
    aug_crop_padding: int
    aug_flip_prob: float
    aug_jitter_strength: float
    aug_jitter_prob: float
    aug_grayscale_prob: float

    # model
    hidden_dim: int
    feature_dim: int
    projector_hidden: int
    projection_dim: int
    predictor_hidden: int
    bn_momentum: float
    dtype: str
    include_self_pairs: bool

    # replay
    policy: str
    buffer_size: int
    eta: float
    use_ema: bool
    extraction_criterion: str

    # trainer
    mode: str
    total_batch_size: int
    overlap_weight: float
    top_k: int
    learning_rate: float
    momentum: float
    weight_decay: float

    # hooks
    metrics_every: int
    checkpoint_every: int
    metrics_n_aug: int
    metrics_subsample: int
    probe_at_task_end: bool

    # probe
    probe_batch_size: int
    probe_learning_rate: float
    probe_decay_factor: float
    probe_max_epochs: int
    probe_patience: int
    probe_val_fraction: float
    probe_min_lr: Optional[float]

    # -- construction -------------------------------------------------------

    @classmethod
    def keys(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_mapping(cls, overrides: Mapping[str, Any],
                     defaults: Optional[Mapping[str, Any]] = None) -> "ExperimentConfig":
        """
        Merge ``overrides`` onto the defaults and type-check every value.

        Raises:
            ConfigError: unknown key, missing key or badly typed value.
        """
        defaults = load_defaults() if defaults is None else defaults
        known = set(cls.keys())
        for key in list(defaults) + list(overrides):
            if key not in known:
                raise ConfigError(key, "unknown key")
        merged = {**defaults, **overrides}
        hints = typing.get_type_hints(cls)
        values = {}
        for key in cls.keys():
            if key not in merged:
                raise ConfigError(key, "missing and has no default")
            values[key] = _coerce(key, merged[key], hints[key])

        env_dir = os.environ.get(OUTPUT_DIR_ENV)
        if env_dir:
            values["output_dir"] = env_dir
        config = cls(**values)
        config.validate()
        return config

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Run configuration not found: {path}")
        overrides = parse_config_text(path.read_text(encoding="utf-8"))
        if not overrides.get("run_id"):
            overrides["run_id"] = path.stem
        config = cls.from_mapping(overrides)
        logger.info(f"Loaded run configuration '{config.run_id}' from {path}")
        return config

    def validate(self) -> None:
        """Re-raise sub-config validation failures as ConfigError naming the key."""
        if self.dataset not in ("synthetic", "cifar100"):
            raise ConfigError("dataset", f"must be 'synthetic' or 'cifar100', got '{self.dataset}'")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype", f"must be float32 or float64, got '{self.dtype}'")
        if self.cifar_labels not in ("fine", "coarse"):
            raise ConfigError("cifar_labels", f"must be fine or coarse, got '{self.cifar_labels}'")
        classes = self.stream_classes
        if self.num_tasks < 1 or self.num_tasks > classes:
            raise ConfigError("num_tasks", f"must lie in [1, {classes}] for {self.dataset}, "
                                           f"got {self.num_tasks}")
        if self.stream_batch_size < 1:
            raise ConfigError("stream_batch_size", "must be positive")
        if self.passes < 1:
            raise ConfigError("passes", "must be positive")
        if self.buffer_size < 1:
            raise ConfigError("buffer_size", "must be positive")
        if self.metrics_every < 0 or self.checkpoint_every < 0:
            raise ConfigError("metrics_every" if self.metrics_every < 0 else "checkpoint_every",
                              "must be nonnegative (0 disables)")
        if self.mode not in ("solar", "er"):
            raise ConfigError("mode", f"must be 'solar' or 'er', got '{self.mode}'")
        if self.extraction_criterion not in ("count", "loss", "random"):
            raise ConfigError("extraction_criterion",
                              f"must be count, loss or random, got '{self.extraction_criterion}'")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError("eta", f"must lie in [0, 1], got {self.eta}")
        registry = load_policy_registry()
        if self.policy not in registry:
            raise ConfigError("policy", f"unknown replay policy '{self.policy}'")
        if not registry[self.policy].get("enabled", True):
            raise ConfigError("policy", f"replay policy '{self.policy}' is disabled")
        checks = [
            ("total_batch_size", self.train_config),
            ("aug_dropout", self.augmentation_config),
            ("probe_val_fraction", self.probe_config),
        ]
        for key, build in checks:
            try:
                build()
            except ValueError as e:
                raise ConfigError(key, str(e)) from e

    # -- derived views ------------------------------------------------------

    @property
    def stream_classes(self) -> int:
        """Classes the configured source actually yields (CIFAR ignores num_classes)."""
        if self.dataset == "cifar100":
            return 20 if self.cifar_labels == "coarse" else 100
        return self.num_classes

    @property
    def run_dir(self) -> Path:
        return Path(self.output_dir) / self.run_id

    def to_lines(self) -> List[str]:
        return [f"{key}={_format(value)}" for key, value in asdict(self).items()]

    def model_config(self, input_dim: int) -> ModelConfig:
        return ModelConfig(
            input_dim=input_dim,
            hidden_dim=self.hidden_dim,
            feature_dim=self.feature_dim,
            projector_hidden=self.projector_hidden,
            projection_dim=self.projection_dim,
            predictor_hidden=self.predictor_hidden,
            bn_momentum=self.bn_momentum,
            include_self_pairs=self.include_self_pairs,
            dtype=self.dtype,
            seed=self.seed,
        )

    def augmentation_config(self) -> AugmentationConfig:
        return AugmentationConfig(
            kind="image" if self.dataset == "cifar100" else "synthetic",
            noise_std=self.aug_noise_std,
            dropout=self.aug_dropout,
            crop_padding=self.aug_crop_padding,
            flip_prob=self.aug_flip_prob,
            jitter_strength=self.aug_jitter_strength,
            jitter_prob=self.aug_jitter_prob,
            grayscale_prob=self.aug_grayscale_prob,
            rng_seed=self.seed + 2,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            total_batch_size=self.total_batch_size,
            stream_batch_size=self.stream_batch_size,
            passes=self.passes,
            overlap_weight=self.overlap_weight,
            top_k=self.top_k,
            eta=self.eta,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            policy=self.policy,
            buffer_size=self.buffer_size,
            mode=self.mode,
            include_self_pairs=self.include_self_pairs,
            seed=self.seed,
        )

    def probe_config(self) -> ProbeConfig:
        return ProbeConfig(
            batch_size=self.probe_batch_size,
            learning_rate=self.probe_learning_rate,
            decay_factor=self.probe_decay_factor,
            max_epochs=self.probe_max_epochs,
            min_lr=self.probe_min_lr,
            val_fraction=self.probe_val_fraction,
            patience=self.probe_patience,
            seed=self.seed + 3,
        )

    def policy_args(self) -> Dict[str, Any]:
        """Registry args for the policy, with the run's own replay knobs on top."""
        args = dict(load_policy_registry()[self.policy].get("args") or {})
        args.update(use_ema=self.use_ema, extraction_criterion=self.extraction_criterion)
        return args
