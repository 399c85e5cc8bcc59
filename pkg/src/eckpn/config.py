"""Run configuration: dataclasses, flat key=value files, CLI merging."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

ABLATIONS = ("full", "none_class", "none_calibrate", "none_z", "none_v")


@dataclass
class DataConfig:
    """Synthetic dataset generator settings."""

    class_count: int = 30
    raw_dim: int = 32
    semantic_dim: int = 16
    sigma_w: float = 0.35
    prototype_scale: float = 1.0
    alpha: float = 1.0
    samples_per_class: int = 100
    split_fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 1234

    def validate(self):
        if self.class_count < 1:
            raise ConfigError("class_count must be >= 1")
        if self.raw_dim < 1 or self.semantic_dim < 1:
            raise ConfigError("feature dimensions must be >= 1")
        if self.sigma_w < 0:
            raise ConfigError("sigma_w must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.samples_per_class < 1:
            raise ConfigError("samples_per_class must be >= 1")
        if len(self.split_fractions) != 3 or any(f < 0 for f in self.split_fractions):
            raise ConfigError("split_fractions must be three non-negative values")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ConfigError("split_fractions must sum to 1")


@dataclass
class TrainConfig:
    """Everything a training run needs; field names double as config-file keys."""

    # episode shape
    ways: int = 5
    shots: int = 1
    queries: int = 5
    label_ratio: float = 1.0
    # model dimensions
    node_dim: int = 64
    heads: int = 8
    layers: int = 3
    semantic_dim: int = 16
    leaky_slope: float = 0.2
    # synthetic data (used when no dataset file is supplied)
    classes: int = 30
    raw_dim: int = 32
    sigma_w: float = 0.35
    prototype_scale: float = 1.0
    alpha: float = 1.0
    samples_per_class: int = 100
    split_fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    data_seed: int = 1234
    # optimization
    episodes_per_iteration: int = 4
    iterations: int = 2000
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 15000
    lambda0: float = 1.0
    lambda1: float = 0.5
    lambda2: float = 1.0
    # run control
    seed: int = 0
    ablation: str = "full"
    eval_every: int = 200
    eval_episodes: int = 200
    val_episodes: int = 50

    def validate(self):
        if self.ways < 2:
            raise ConfigError("ways must be >= 2")
        if self.shots < 1 or self.queries < 1:
            raise ConfigError("shots and queries must be >= 1")
        if not 0.0 < self.label_ratio <= 1.0:
            raise ConfigError("label_ratio must lie in (0, 1]")
        if self.node_dim < 1 or self.heads < 1 or self.layers < 1:
            raise ConfigError("node_dim, heads, layers must be >= 1")
        if self.node_dim % self.heads != 0:
            raise ConfigError(
                f"node_dim ({self.node_dim}) must be divisible by heads ({self.heads})"
            )
        if self.semantic_dim < 1:
            raise ConfigError("semantic_dim must be >= 1")
        if self.ablation not in ABLATIONS:
            raise ConfigError(
                f"unknown ablation {self.ablation!r}; choose from {ABLATIONS}"
            )
        if self.iterations < 1 or self.episodes_per_iteration < 1:
            raise ConfigError("iterations and episodes_per_iteration must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.lr_decay_factor <= 0 or self.lr_decay_every < 1:
            raise ConfigError("lr decay settings must be positive")
        if self.eval_every < 1 or self.eval_episodes < 1 or self.val_episodes < 1:
            raise ConfigError("evaluation settings must be >= 1")
        for name in ("lambda0", "lambda1", "lambda2"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        self.data_config().validate()

    def data_config(self) -> DataConfig:
        return DataConfig(
            class_count=self.classes,
            raw_dim=self.raw_dim,
            semantic_dim=self.semantic_dim,
            sigma_w=self.sigma_w,
            prototype_scale=self.prototype_scale,
            alpha=self.alpha,
            samples_per_class=self.samples_per_class,
            split_fractions=self.split_fractions,
            seed=self.data_seed,
        )


_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def _coerce(name: str, raw: str):
    if name not in _FIELDS:
        raise ConfigError(f"unknown config key {name!r}")
    current = getattr(TrainConfig(), name)
    if isinstance(current, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(current, int):
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{name}: expected an integer, got {raw!r}") from exc
    if isinstance(current, float):
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"{name}: expected a number, got {raw!r}") from exc
    if isinstance(current, tuple):
        try:
            return tuple(float(part) for part in raw.split(","))
        except ValueError as exc:
            raise ConfigError(f"{name}: expected comma-separated numbers") from exc
    return raw


def parse_config_text(text: str) -> dict:
    """Parse flat key=value lines; '#' starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        values[key] = _coerce(key, raw.strip())
    return values


def load_config_file(path) -> dict:
    return parse_config_text(Path(path).read_text())


def config_to_lines(cfg: TrainConfig) -> list[str]:
    """Serialize in declaration order; inverse of parse_config_text."""
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            rendered = ",".join(repr(v) for v in value)
        else:
            rendered = repr(value) if isinstance(value, float) else str(value)
        lines.append(f"{f.name}={rendered}")
    return lines


def build_config(file_values: dict | None = None, overrides: dict | None = None) -> TrainConfig:
    """Defaults, then config file values, then CLI overrides."""
    merged = {}
    if file_values:
        merged.update(file_values)
    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(merged) - set(_FIELDS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = TrainConfig(**merged)
    cfg.validate()
    return cfg
