"""Turn raw traffic counts into training labels.

A label is defined by three choices: which signal (CTR / CVR / PR / GMV per
impression), which transform (identity or log), and which task (regression
or binary classification on purchases > 0). Records below the impression
threshold are dropped; records whose signal is undefined are skipped and
counted.
"""

import math
from dataclasses import dataclass, field
from enum import Enum

from .data import Catalog, LabeledPair, PairKind, TrafficRecord
from .errors import ConfigError, UndefinedSignalError


class Signal(str, Enum):
    CTR = "ctr"
    CVR = "cvr"
    PR = "pr"
    GMV = "gmv"


class Transform(str, Enum):
    IDENTITY = "identity"
    LOG = "log"


class Task(str, Enum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"


@dataclass(frozen=True)
class LabelSpec:
    signal: Signal = Signal.PR
    transform: Transform = Transform.LOG
    epsilon: float = 1e-4
    task: Task = Task.REGRESSION

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")

    def name(self) -> str:
        """Short human-readable tag, e.g. 'pr+log+mse' or 'purchase>0+logistic'."""
        if self.task is Task.CLASSIFICATION:
            return "purchase>0"
        parts = [self.signal.value]
        if self.transform is Transform.LOG:
            parts.append("log")
        return "+".join(parts)


def default_negative_label(spec: LabelSpec) -> float:
    """Negative-label constant for random pairs, strictly below any observed label.

    Classification uses 0 (the negative class). Log regression uses
    ln(epsilon) - 1: one unit under the lowest achievable transformed label.
    Identity regression uses -0.1, below the 0 floor of every rate signal.
    """
    if spec.task is Task.CLASSIFICATION:
        return 0.0
    if spec.transform is Transform.LOG:
        return math.log(spec.epsilon) - 1.0
    return -0.1


@dataclass(frozen=True)
class LabelConfig:
    spec: LabelSpec = field(default_factory=LabelSpec)
    min_impressions: int = 250
    negative_label: float | None = None

    def __post_init__(self):
        if self.min_impressions < 1:
            raise ConfigError(f"min_impressions must be >= 1, got {self.min_impressions}")

    def resolved_negative_label(self) -> float:
        if self.negative_label is not None:
            return self.negative_label
        return default_negative_label(self.spec)


def compute_signal(rec: TrafficRecord, signal: Signal) -> float:
    """Raw rate for one traffic record. CVR with zero clicks is undefined."""
    if rec.impressions <= 0:
        raise UndefinedSignalError(
            f"signal undefined with zero impressions for ({rec.query_id}, {rec.candidate_id})"
        )
    if signal is Signal.CTR:
        return rec.clicks / rec.impressions
    if signal is Signal.CVR:
        if rec.clicks == 0:
            raise UndefinedSignalError(
                f"cvr undefined with zero clicks for ({rec.query_id}, {rec.candidate_id})"
            )
        return rec.purchases / rec.clicks
    if signal is Signal.PR:
        return rec.purchases / rec.impressions
    if signal is Signal.GMV:
        return rec.gmv / rec.impressions
    raise ConfigError(f"unknown signal {signal!r}")


def transform_label(x: float, transform: Transform, epsilon: float = 1e-4) -> float:
    """Apply the label transform; strictly monotone in x for both kinds."""
    if transform is Transform.IDENTITY:
        return x
    if transform is Transform.LOG:
        return math.log(x + epsilon)
    raise ConfigError(f"unknown transform {transform!r}")


@dataclass
class BuildSummary:
    n_input: int = 0
    n_below_threshold: int = 0
    n_undefined_signal: int = 0
    n_emitted: int = 0


def build_labeled_pairs(
    traffic: list[TrafficRecord],
    catalog: Catalog,
    config: LabelConfig,
) -> tuple[list[LabeledPair], BuildSummary]:
    """Label every thresholded traffic record; resolve titles from the catalog.

    Regression: label = transform(signal). Classification: label = 1 iff
    purchases > 0. Either way, kind is positive iff purchases > 0, else
    hard_negative (served but never purchased).
    """
    spec = config.spec
    pairs: list[LabeledPair] = []
    summary = BuildSummary(n_input=len(traffic))
    for rec in traffic:
        if rec.impressions < config.min_impressions:
            summary.n_below_threshold += 1
            continue
        if spec.task is Task.CLASSIFICATION:
            label = 1.0 if rec.purchases > 0 else 0.0
        else:
            try:
                raw = compute_signal(rec, spec.signal)
            except UndefinedSignalError:
                summary.n_undefined_signal += 1
                continue
            label = transform_label(raw, spec.transform, spec.epsilon)
        kind = PairKind.POSITIVE if rec.purchases > 0 else PairKind.HARD_NEGATIVE
        query = catalog.by_id[rec.query_id]
        candidate = catalog.by_id[rec.candidate_id]
        pairs.append(LabeledPair(
            query_id=rec.query_id,
            candidate_id=rec.candidate_id,
            query_title=query.title,
            candidate_title=candidate.title,
            label=label,
            kind=kind,
            marketplace=query.marketplace,
        ))
    summary.n_emitted = len(pairs)
    return pairs, summary
