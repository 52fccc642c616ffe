"""Experiment configuration and its flat ``key = value`` text format.

Keys are dotted ``section.field`` names, e.g. ``pseudo_label.scheme = cross``
or ``optimizer.base_lr = 0.1``. Blank lines and ``#`` comments are ignored.
A few short aliases (``tau``, ``lambda``, ``scheme``, ``mode``, ...) are
accepted in overrides.
"""
from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .augment import AugKind, AugmentationSpec, TemporalViewSpec
from .errors import ConfigError
from .netcore import OptimizerConfig, Schedule, ScalableNetConfig
from .pseudolabel import Scheme
from .synthdata import DatasetSpec, SplitScheme


class Mode(enum.Enum):
    SEMI = "semi"
    SUPERVISED = "supervised"


@dataclass(frozen=True)
class SplitConfig:
    labeled_fraction: float = 0.01
    scheme: SplitScheme = SplitScheme.UNIFORM


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = 32
    primary_depth: int = 1
    primary_width: float = 1.0
    aux_depth: int = 1
    aux_width: float = 0.25


@dataclass(frozen=True)
class AugmentConfig:
    weak_jitter: float = 0.01
    standard_jitter: float = 0.01
    standard_transforms: int = 1
    strong_jitter: float = 0.01
    strong_transforms: int = 2
    cutout_fraction: float = 0.25
    # Weak and strong views come from the same temporal clip.
    shared_clip: bool = True

    @property
    def weak(self) -> AugmentationSpec:
        return AugmentationSpec(AugKind.WEAK, self.weak_jitter, 0.0, 0)

    @property
    def standard(self) -> AugmentationSpec:
        return AugmentationSpec(AugKind.STANDARD, self.standard_jitter, 0.0, self.standard_transforms)

    @property
    def strong(self) -> AugmentationSpec:
        return AugmentationSpec(AugKind.STRONG, self.strong_jitter, self.cutout_fraction,
                                self.strong_transforms)


@dataclass(frozen=True)
class PseudoLabelConfig:
    scheme: Scheme = Scheme.CROSS
    tau: float = 0.9


@dataclass(frozen=True)
class TrainConfig:
    mode: Mode = Mode.SEMI
    lam: float = 5.0
    batch_labeled: int = 2
    batch_ratio: int = 5
    epochs: int = 50


@dataclass(frozen=True)
class EvalConfig:
    num_clips: int = 3
    snapshot_interval: int = 10
    val_videos_per_class: int = 50
    # Also train a FixMatch run per seed for the subset-accuracy curve.
    paired_reference: bool = False


@dataclass(frozen=True)
class RunConfig:
    seeds: tuple[int, ...] = (0, 1, 2)


@dataclass(frozen=True)
class ExperimentConfig:
    data: DatasetSpec = field(default_factory=DatasetSpec)
    split: SplitConfig = field(default_factory=SplitConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    temporal: TemporalViewSpec = field(default_factory=TemporalViewSpec)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    pseudo_label: PseudoLabelConfig = field(default_factory=PseudoLabelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    run: RunConfig = field(default_factory=RunConfig)

    @property
    def tau(self) -> float:
        return self.pseudo_label.tau

    @property
    def lam(self) -> float:
        return self.train.lam

    @property
    def batch_labeled(self) -> int:
        return self.train.batch_labeled

    @property
    def batch_unlabeled(self) -> int:
        return self.train.batch_labeled * self.train.batch_ratio

    def validate(self) -> None:
        self.data.validate()
        opt = self.optimizer
        replace(opt, total_steps=max(1, opt.total_steps)).validate()
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("pseudo_label.tau must lie in (0, 1]")
        if self.lam < 0:
            raise ConfigError("train.lambda must be >= 0")
        if self.train.batch_labeled < 1 or self.train.batch_ratio < 1:
            raise ConfigError("train.batch_labeled and train.batch_ratio must be >= 1")
        if self.train.epochs < 0:
            raise ConfigError("train.epochs must be >= 0")
        if not 0.0 < self.split.labeled_fraction < 1.0:
            raise ConfigError("split.labeled_fraction must lie in (0, 1)")
        self.temporal.validate(self.data.raw_length)
        m = self.model
        for depth, width in ((m.primary_depth, m.primary_width), (m.aux_depth, m.aux_width)):
            ScalableNetConfig(depth, width, m.base_channels, self.data.num_classes).validate()
        for spec in (self.augment.weak, self.augment.standard, self.augment.strong):
            spec.validate()
        if self.eval.num_clips < 1:
            raise ConfigError("eval.num_clips must be >= 1")
        if self.eval.snapshot_interval < 0 or self.eval.val_videos_per_class < 0:
            raise ConfigError("eval.snapshot_interval and eval.val_videos_per_class must be >= 0")
        if not self.run.seeds:
            raise ConfigError("run.seeds must not be empty")


# Python-side field names that differ from their config key.
_RENAMES = {("train", "lambda"): "lam"}
_KEY_OF = {(s, f): k for (s, k), f in _RENAMES.items()}

ALIASES = {
    "tau": "pseudo_label.tau",
    "scheme": "pseudo_label.scheme",
    "lambda": "train.lambda",
    "mode": "train.mode",
    "epochs": "train.epochs",
    "batch_ratio": "train.batch_ratio",
    "seeds": "run.seeds",
    "time_offset": "temporal.time_offset",
    "labeled_fraction": "split.labeled_fraction",
}


def _sections():
    return {f.name: f for f in fields(ExperimentConfig)}


def _section_type(name):
    return {f.name: f.default_factory for f in fields(ExperimentConfig)}[name]


def config_keys() -> list[str]:
    keys = []
    defaults = ExperimentConfig()
    for sec in _sections():
        for f in fields(getattr(defaults, sec)):
            keys.append(f"{sec}.{_KEY_OF.get((sec, f.name), f.name)}")
    return keys


def resolve_key(key: str) -> tuple[str, str]:
    key = ALIASES.get(key.strip(), key.strip())
    sec, dot, name = key.partition(".")
    if not dot or sec not in _sections():
        raise ConfigError(f"unknown config key {key!r}")
    name = _RENAMES.get((sec, name), name)
    section_fields = {f.name for f in fields(_section_type(sec)())}
    if name not in section_fields:
        raise ConfigError(f"unknown config key {key!r}")
    return sec, name


def _parse_bool(text: str) -> bool:
    t = text.lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(current, text: str):
    text = text.strip()
    if isinstance(current, enum.Enum):
        return type(current)(text.lower())
    if isinstance(current, bool):
        return _parse_bool(text)
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, tuple) or current is None:
        if current is None and text.lower() in ("", "none"):
            return None
        return tuple(int(v) for v in text.split(",") if v.strip())
    return text


def _format(value) -> str:
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def with_overrides(config: ExperimentConfig, overrides) -> ExperimentConfig:
    """Apply ``key=value`` overrides (a mapping or an iterable of pairs/strings)."""
    if isinstance(overrides, dict):
        items = list(overrides.items())
    else:
        items = []
        for item in overrides:
            if isinstance(item, str):
                key, eq, value = item.partition("=")
                if not eq:
                    raise ConfigError(f"override {item!r} is not key=value")
                items.append((key, value))
            else:
                items.append(tuple(item))
    for key, value in items:
        sec, name = resolve_key(key)
        section = getattr(config, sec)
        try:
            new = _convert(getattr(section, name), str(value))
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r} ({exc})") from None
        config = replace(config, **{sec: replace(section, **{name: new})})
    return config


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    items = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        items.append((key.strip(), value.strip()))
    return with_overrides(base or ExperimentConfig(), items)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def dump_config(config: ExperimentConfig) -> str:
    """Canonical text: every key, sorted, one ``key = value`` per line."""
    lines = []
    for sec in _sections():
        section = getattr(config, sec)
        for f in fields(section):
            key = f"{sec}.{_KEY_OF.get((sec, f.name), f.name)}"
            lines.append(f"{key} = {_format(getattr(section, f.name))}")
    return "\n".join(sorted(lines)) + "\n"


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(dump_config(config).encode("utf-8")).hexdigest()
