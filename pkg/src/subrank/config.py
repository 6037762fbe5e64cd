"""Run configuration: one YAML file, strict keys, dataclass sections.

Every random stream derives from the single top-level seed through named
sub-seeds, so per-section seed keys are rejected. Unknown keys anywhere are
config errors; silent typos must not change an experiment.
"""

import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import yaml

from .crossenc import CrossEncoderConfig, TrainConfig
from .errors import ConfigError
from .gbdt import OBJECTIVES, GBDTParams
from .labels import LabelConfig, LabelSpec, Signal, Task, Transform
from .world import WorldConfig

MODEL_CHOICES = ("gbdt", "crossenc")


@dataclass(frozen=True)
class PathsConfig:
    data_dir: str = "data"
    run_dir: str = "runs/out"


@dataclass(frozen=True)
class GenSection:
    functionality_eval_size: int = 2000
    functionality_ratio_pos: float = 0.6
    related_negative_fraction: float = 0.5
    embedding_dim: int = 16

    def __post_init__(self):
        if self.functionality_eval_size < 1 or self.embedding_dim < 1:
            raise ConfigError(f"gen sizes must be >= 1: {self}")


@dataclass(frozen=True)
class NegativesSection:
    ratio: float = 0.5


@dataclass(frozen=True)
class SplitSection:
    val_fraction: float = 0.2


@dataclass(frozen=True)
class GBDTSection:
    n_trees: int = 100
    max_depth: int = 4
    min_samples_leaf: int = 20
    learning_rate: float = 0.1
    row_subsample: float = 1.0
    objective: str = "auto"  # auto: mse for regression labels, logistic otherwise

    def __post_init__(self):
        if self.objective not in ("auto",) + OBJECTIVES:
            raise ConfigError(
                f"gbdt objective must be auto or one of {OBJECTIVES}, got {self.objective!r}"
            )

    def params(self, seed: int) -> GBDTParams:
        return GBDTParams(
            n_trees=self.n_trees,
            max_depth=self.max_depth,
            min_samples_leaf=self.min_samples_leaf,
            learning_rate=self.learning_rate,
            row_subsample=self.row_subsample,
            seed=seed,
        )

    def resolved_objective(self, task: Task) -> str:
        if self.objective != "auto":
            return self.objective
        return "logistic" if task is Task.CLASSIFICATION else "mse"


@dataclass(frozen=True)
class CrossEncSection:
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 128
    max_len: int = 64
    dropout_rate: float = 0.1
    vocab_max_size: int = 20000

    def model_config(self, vocab_size: int) -> CrossEncoderConfig:
        return CrossEncoderConfig(
            vocab_size=vocab_size,
            d_model=self.d_model,
            n_heads=self.n_heads,
            n_layers=self.n_layers,
            d_ff=self.d_ff,
            max_len=self.max_len,
            dropout_rate=self.dropout_rate,
        )


@dataclass(frozen=True)
class TrainSection:
    batch_size: int = 64
    epochs: int = 10
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    loss: str = "auto"  # auto: mse for regression labels, logistic otherwise

    def config(self, task: Task, seed: int) -> TrainConfig:
        loss = self.loss
        if loss == "auto":
            loss = "logistic" if task is Task.CLASSIFICATION else "mse"
        return TrainConfig(
            batch_size=self.batch_size,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            loss=loss,
            seed=seed,
        )


@dataclass(frozen=True)
class EvalSection:
    ranking_min_impressions: int = 500
    histogram_bins: int = 30


@dataclass(frozen=True)
class AblateSection:
    model: str = "gbdt"

    def __post_init__(self):
        if self.model not in MODEL_CHOICES:
            raise ConfigError(f"ablate model must be one of {MODEL_CHOICES}, got {self.model!r}")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    model: str = "gbdt"
    paths: PathsConfig = field(default_factory=PathsConfig)
    world: WorldConfig = field(default_factory=WorldConfig)
    gen: GenSection = field(default_factory=GenSection)
    label: LabelConfig = field(default_factory=LabelConfig)
    negatives: NegativesSection = field(default_factory=NegativesSection)
    split: SplitSection = field(default_factory=SplitSection)
    gbdt: GBDTSection = field(default_factory=GBDTSection)
    crossenc: CrossEncSection = field(default_factory=CrossEncSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    ablate: AblateSection = field(default_factory=AblateSection)

    def __post_init__(self):
        if self.model not in MODEL_CHOICES:
            raise ConfigError(f"model must be one of {MODEL_CHOICES}, got {self.model!r}")


def _coerce(value, target, where: str):
    if target is WorldConfig and isinstance(value, dict):
        return _build_section(WorldConfig, value, where, forbid=("seed",))
    if isinstance(target, type) and issubclass(target, Enum):
        try:
            return target(value)
        except ValueError as exc:
            options = ", ".join(m.value for m in target)
            raise ConfigError(f"{where}: expected one of [{options}], got {value!r}") from exc
    if isinstance(value, bool):
        return value
    # YAML 1.1 reads "1.0e6" (no exponent sign) as a string; coerce numerics
    # by declared field type instead of failing later inside a dataclass.
    if target is float and isinstance(value, (int, float, str)):
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{where}: expected a number, got {value!r}") from None
    if target is int and isinstance(value, (int, float, str)):
        try:
            number = float(value)
        except ValueError:
            raise ConfigError(f"{where}: expected an integer, got {value!r}") from None
        if number != int(number):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return int(number)
    return value


def _build_section(cls, data, where: str, forbid: tuple[str, ...] = ()):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    fields_by_name = {f.name: f for f in dataclasses.fields(cls)}
    allowed = set(fields_by_name) - set(forbid)
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}; allowed: {sorted(allowed)}")
    kwargs = {}
    for name, value in data.items():
        f = fields_by_name[name]
        if name == "marketplaces":
            value = _marketplaces(value, f"{where}.{name}")
        else:
            value = _coerce(value, f.type if isinstance(f.type, type) else None, f"{where}.{name}")
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _marketplaces(value, where: str):
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{where}: expected a nonempty list of [code, language] pairs")
    out = []
    for item in value:
        if not isinstance(item, (list, tuple)) or len(item) != 2:
            raise ConfigError(f"{where}: each marketplace must be a [code, language] pair")
        out.append((str(item[0]), str(item[1])))
    return tuple(out)


def _build_label(data, where: str) -> LabelConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    spec_keys = {"signal", "transform", "epsilon", "task"}
    config_keys = {"min_impressions", "negative_label"}
    unknown = set(data) - spec_keys - config_keys
    if unknown:
        raise ConfigError(
            f"{where}: unknown key(s) {sorted(unknown)}; "
            f"allowed: {sorted(spec_keys | config_keys)}"
        )
    try:
        spec = LabelSpec(
            signal=Signal(data.get("signal", "pr")),
            transform=Transform(data.get("transform", "log")),
            epsilon=float(data.get("epsilon", 1e-4)),
            task=Task(data.get("task", "regression")),
        )
        return LabelConfig(
            spec=spec,
            min_impressions=int(data.get("min_impressions", 250)),
            negative_label=(
                None if data.get("negative_label") is None
                else float(data["negative_label"])
            ),
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


_SECTIONS = {
    "paths": PathsConfig,
    "world": WorldConfig,
    "gen": GenSection,
    "negatives": NegativesSection,
    "split": SplitSection,
    "gbdt": GBDTSection,
    "crossenc": CrossEncSection,
    "train": TrainSection,
    "eval": EvalSection,
    "ablate": AblateSection,
}


def config_from_dict(data: dict | None) -> RunConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"config root: expected a mapping, got {type(data).__name__}")
    allowed = set(_SECTIONS) | {"seed", "model", "label"}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"config root: unknown key(s) {sorted(unknown)}; allowed: {sorted(allowed)}")
    kwargs = {}
    if "seed" in data:
        kwargs["seed"] = _coerce(data["seed"], int, "seed")
    if "model" in data:
        kwargs["model"] = str(data["model"])
    if "label" in data:
        kwargs["label"] = _build_label(data["label"], "label")
    for name, cls in _SECTIONS.items():
        if name in data:
            forbid = ("seed",) if cls is WorldConfig else ()
            kwargs[name] = _build_section(cls, data[name], name, forbid=forbid)
    return RunConfig(**kwargs)


def load_config(path: str | Path | None) -> RunConfig:
    """Defaults when path is None; otherwise parse and validate the YAML file."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    return config_from_dict(data)
