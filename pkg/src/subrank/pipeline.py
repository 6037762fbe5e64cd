"""Wiring: traffic counts to training-ready datasets, features, and scorers.

Preparation order is build labels -> append random negatives -> grouped
split, with every random draw keyed off one base seed through named
sub-seeds. The objective-ablation path prepares all grid cells against one
shared pair universe (identical split assignment and identical sampled
negative keys), so cell deltas isolate the label and loss choice.
"""

from dataclasses import dataclass, field

import numpy as np

from .data import (
    Catalog,
    DatasetSplit,
    LabeledPair,
    PairKind,
    TrafficRecord,
    split_by_query_ids,
    split_query_ids,
)
from .embeddings import EmbeddingTable, pool
from .errors import DataError
from .gbdt import GBDTModel, GBDTParams
from .gbdt import fit as fit_gbdt
from .labels import (
    BuildSummary,
    LabelConfig,
    LabelSpec,
    Signal,
    Task,
    Transform,
    build_labeled_pairs,
    default_negative_label,
)
from .negatives import (
    NegativeSamplingConfig,
    augment,
    negative_pairs_for_keys,
    sample_negative_keys,
)
from .seeding import derive_seed
from .text import Vocabulary, build_vocab, remove_stopwords, tokenize


@dataclass(frozen=True)
class AblationCell:
    """One grid row: a label recipe plus the training objective."""

    name: str
    spec: LabelSpec
    objective: str  # gbdt objective: mse, logistic, hinge


def table_grid(epsilon: float = 1e-4) -> list[AblationCell]:
    """The seven-row objective grid; the first row is the baseline."""
    def reg(signal, transform):
        return LabelSpec(signal=signal, transform=transform, epsilon=epsilon,
                         task=Task.REGRESSION)

    cls_spec = LabelSpec(epsilon=epsilon, task=Task.CLASSIFICATION)
    return [
        AblationCell("ctr+mse", reg(Signal.CTR, Transform.IDENTITY), "mse"),
        AblationCell("cvr+mse", reg(Signal.CVR, Transform.IDENTITY), "mse"),
        AblationCell("pr+mse", reg(Signal.PR, Transform.IDENTITY), "mse"),
        AblationCell("gmv+mse", reg(Signal.GMV, Transform.IDENTITY), "mse"),
        AblationCell("pr+log+mse", reg(Signal.PR, Transform.LOG), "mse"),
        AblationCell("purchase>0+logistic", cls_spec, "logistic"),
        AblationCell("purchase>0+hinge", cls_spec, "hinge"),
    ]


BASELINE_CELL = "ctr+mse"


@dataclass
class PreparedDataset:
    split: DatasetSplit
    label_config: LabelConfig
    summary: BuildSummary
    negative_label: float | None = None
    n_negatives_added: int = 0

    @property
    def n_pairs(self) -> int:
        return len(self.split.train) + len(self.split.validation)


def prepare_dataset(
    traffic: list[TrafficRecord],
    catalog: Catalog,
    label_config: LabelConfig,
    negative_ratio: float = 0.5,
    val_fraction: float = 0.2,
    seed: int = 0,
) -> PreparedDataset:
    """One-dataset pipeline: label, augment (ratio 0 disables), split."""
    pairs, summary = build_labeled_pairs(traffic, catalog, label_config)
    if not pairs:
        raise DataError(
            f"no pairs survive min_impressions={label_config.min_impressions}; "
            "nothing to train on"
        )
    negative_label = None
    n_before = len(pairs)
    if negative_ratio > 0:
        negative_label = label_config.resolved_negative_label()
        neg_config = NegativeSamplingConfig(
            ratio=negative_ratio,
            negative_label=negative_label,
            seed=derive_seed(seed, "negatives"),
        )
        neg_config.check_against(label_config)
        pairs = augment(pairs, catalog, neg_config)
    val_ids = split_query_ids(
        [p.query_id for p in pairs], val_fraction, derive_seed(seed, "split")
    )
    return PreparedDataset(
        split=split_by_query_ids(pairs, val_ids),
        label_config=label_config,
        summary=summary,
        negative_label=negative_label,
        n_negatives_added=len(pairs) - n_before,
    )


def prepare_ablation_cells(
    traffic: list[TrafficRecord],
    catalog: Catalog,
    cells: list[AblationCell],
    min_impressions: int = 250,
    negative_ratio: float = 0.5,
    val_fraction: float = 0.2,
    seed: int = 0,
) -> dict[str, PreparedDataset]:
    """Prepare every cell against one shared pair universe.

    The sampled negative keys and the query-id split assignment are drawn
    once, from the union of all thresholded traffic pairs, then applied per
    cell. A cell whose signal is undefined on some records (CVR with zero
    clicks) keeps the shared negatives and split; it just emits fewer traffic
    pairs.
    """
    if len({c.name for c in cells}) != len(cells):
        raise DataError("ablation cells must have unique names")
    reference = LabelConfig(
        spec=LabelSpec(signal=Signal.PR, transform=Transform.IDENTITY,
                       task=Task.REGRESSION),
        min_impressions=min_impressions,
    )
    ref_pairs, _ = build_labeled_pairs(traffic, catalog, reference)
    if not ref_pairs:
        raise DataError(
            f"no pairs survive min_impressions={min_impressions}; "
            "nothing to train on"
        )
    n_positive = sum(1 for p in ref_pairs if p.kind is PairKind.POSITIVE)
    n_negatives = int(negative_ratio * n_positive)
    existing = {(p.query_id, p.candidate_id) for p in ref_pairs}
    rng = np.random.default_rng(derive_seed(seed, "negatives"))
    shared_keys = sample_negative_keys(catalog, existing, n_negatives, rng)

    all_query_ids = [p.query_id for p in ref_pairs] + [q for q, _ in shared_keys]
    val_ids = split_query_ids(all_query_ids, val_fraction, derive_seed(seed, "split"))

    out: dict[str, PreparedDataset] = {}
    for cell in cells:
        label_config = LabelConfig(spec=cell.spec, min_impressions=min_impressions)
        pairs, summary = build_labeled_pairs(traffic, catalog, label_config)
        negative_label = label_config.resolved_negative_label()
        negatives = negative_pairs_for_keys(shared_keys, catalog, negative_label)
        out[cell.name] = PreparedDataset(
            split=split_by_query_ids(pairs + negatives, val_ids),
            label_config=label_config,
            summary=summary,
            negative_label=negative_label,
            n_negatives_added=len(negatives),
        )
    return out


def featurize_for_gbdt(
    pairs,
    catalog: Catalog,
    table: EmbeddingTable,
    cache: dict | None = None,
) -> np.ndarray:
    """Stopword-filtered, sum-pooled title embeddings, query then candidate.

    Stopword lists are language-keyed; each side uses its own product's
    catalog language, so mixed-language pairs filter correctly. Passing the
    same ``cache`` dict across calls reuses pooled vectors, keyed by
    (title, language) so reuse can never change a feature value.
    """
    if cache is None:
        cache = {}

    def pooled(title: str, language: str) -> np.ndarray:
        key = (title, language)
        vec = cache.get(key)
        if vec is None:
            vec = cache[key] = pool(remove_stopwords(tokenize(title), language), table)
        return vec

    dim = table.dim
    rows = np.empty((len(pairs), 2 * dim), dtype=np.float64)
    for i, p in enumerate(pairs):
        try:
            q_lang = catalog.by_id[p.query_id].language
            c_lang = catalog.by_id[p.candidate_id].language
        except KeyError as exc:
            raise DataError(f"pair references unknown product {exc}") from exc
        rows[i, :dim] = pooled(p.query_title, q_lang)
        rows[i, dim:] = pooled(p.candidate_title, c_lang)
    return rows


def labels_of(pairs: list[LabeledPair]) -> np.ndarray:
    return np.asarray([p.label for p in pairs], dtype=np.float64)


def train_gbdt(
    split: DatasetSplit,
    catalog: Catalog,
    table: EmbeddingTable,
    params: GBDTParams,
    objective: str,
    cache: dict | None = None,
) -> GBDTModel:
    features = featurize_for_gbdt(split.train, catalog, table, cache)
    return fit_gbdt(features, labels_of(split.train), params, objective)


def gbdt_scorer(model: GBDTModel, table: EmbeddingTable, catalog: Catalog,
                cache: dict | None = None):
    def score(pairs) -> np.ndarray:
        if not len(pairs):
            return np.zeros(0, dtype=np.float64)
        return np.atleast_1d(
            model.predict(featurize_for_gbdt(pairs, catalog, table, cache))
        )

    return score


def build_crossenc_vocab(split: DatasetSplit, max_size: int = 20000) -> Vocabulary:
    """Vocabulary from training-side titles only; validation tokens the
    train side never saw map to UNK."""
    corpus = [
        tokenize(title)
        for p in split.train
        for title in (p.query_title, p.candidate_title)
    ]
    return build_vocab(corpus, min_freq=1, max_size=max_size)


def crossenc_scorer(model, vocab: Vocabulary):
    from .crossenc import score_pairs

    def score(pairs) -> np.ndarray:
        return score_pairs(model, pairs, vocab)

    return score
