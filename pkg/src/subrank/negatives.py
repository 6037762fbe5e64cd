"""Random-pair augmentation against selection bias.

Served traffic covers only pairs some upstream system chose to show, so a
model trained on it alone has never seen an arbitrary product pair. We
append uniformly sampled catalog pairs with an assigned negative label,
once, up front (never per batch). Hard negatives (served pairs with zero
purchases) already exist in the data and keep their own kind.
"""

import math
from dataclasses import dataclass

import numpy as np

from .data import Catalog, LabeledPair, PairKind
from .errors import ConfigError, SamplingExhaustedError
from .labels import LabelConfig, Task, Transform

# Give up after this many rejections per requested pair; prevents spinning
# forever on a catalog too small to host the requested count.
MAX_REJECTION_FACTOR = 100


@dataclass(frozen=True)
class NegativeSamplingConfig:
    ratio: float = 0.5
    negative_label: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.ratio < 0:
            raise ConfigError(f"negative ratio must be >= 0, got {self.ratio}")

    def check_against(self, label_config: LabelConfig) -> None:
        """Reject negative labels that overlap the observable label range."""
        spec = label_config.spec
        if spec.task is Task.CLASSIFICATION:
            if self.negative_label != 0.0:
                raise ConfigError(
                    f"classification requires negative_label 0, got {self.negative_label}"
                )
        elif spec.transform is Transform.LOG:
            floor = math.log(spec.epsilon)
            if self.negative_label >= floor:
                raise ConfigError(
                    f"negative_label {self.negative_label} must be < ln(epsilon) = {floor:.6f}"
                )


def sample_negative_keys(
    catalog: Catalog,
    existing: set[tuple[str, str]],
    count: int,
    rng: np.random.Generator,
) -> list[tuple[str, str]]:
    """Draw ``count`` distinct (query_id, candidate_id) pairs uniformly from
    the catalog, rejecting self-pairs and keys in ``existing``."""
    if count == 0:
        return []
    if len(catalog) < 2:
        raise SamplingExhaustedError("catalog must have >= 2 products to sample pairs")
    products = catalog.records
    existing = set(existing)
    keys: list[tuple[str, str]] = []
    attempts = 0
    max_attempts = MAX_REJECTION_FACTOR * count
    while len(keys) < count:
        if attempts >= max_attempts:
            raise SamplingExhaustedError(
                f"could not sample {count} random negatives after {attempts} attempts "
                f"({len(keys)} found); catalog too small or dataset too dense"
            )
        attempts += 1
        qi, ci = rng.integers(0, len(products), size=2)
        if qi == ci:
            continue
        key = (products[qi].product_id, products[ci].product_id)
        if key in existing:
            continue
        existing.add(key)
        keys.append(key)
    return keys


def negative_pairs_for_keys(
    keys: list[tuple[str, str]], catalog: Catalog, negative_label: float
) -> list[LabeledPair]:
    """Materialize sampled keys as labeled random-negative pairs."""
    out = []
    for query_id, candidate_id in keys:
        query = catalog.by_id[query_id]
        candidate = catalog.by_id[candidate_id]
        out.append(LabeledPair(
            query_id=query_id,
            candidate_id=candidate_id,
            query_title=query.title,
            candidate_title=candidate.title,
            label=negative_label,
            kind=PairKind.RANDOM_NEGATIVE,
            marketplace=query.marketplace,
        ))
    return out


def augment(
    dataset: list[LabeledPair],
    catalog: Catalog,
    config: NegativeSamplingConfig,
) -> list[LabeledPair]:
    """Return dataset plus floor(ratio * n_positive) random negative pairs.

    Query and candidate are drawn uniformly from the catalog; self-pairs and
    (query, candidate) keys already present are rejected. Sampling happens
    once, up front. Deterministic per seed.
    """
    n_positive = sum(1 for p in dataset if p.kind is PairKind.POSITIVE)
    n_requested = int(config.ratio * n_positive)
    if n_requested == 0:
        return list(dataset)
    existing = {(p.query_id, p.candidate_id) for p in dataset}
    rng = np.random.default_rng(config.seed)
    keys = sample_negative_keys(catalog, existing, n_requested, rng)
    return list(dataset) + negative_pairs_for_keys(keys, catalog, config.negative_label)
