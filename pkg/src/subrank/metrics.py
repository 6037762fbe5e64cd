"""Dual evaluation protocol: functionality classification and buyability ranking.

Functionality is scored as AuPRC over a binary substitutable/not eval set;
buyability as per-query NDCG against behavioral rate gains, averaged over
query products. AuPRC uses the average-precision formulation (threshold
steps over tied-score groups), NDCG uses linear gain and a 1/log2(rank+1)
discount. Both have brute-force oracle twins in the test suite; keep the
semantics here in sync with those oracles, not with any library.
"""

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DataError, UndefinedMetricError

SIGNALS = ("ctr", "cvr", "pr")


@dataclass(frozen=True)
class EvalPair:
    """One functionality-classification example. ``source`` records how the
    pair was drawn: positive, related (hard confound), or random."""

    query_id: str
    candidate_id: str
    query_title: str
    candidate_title: str
    label: int
    marketplace: str
    source: str

    def __post_init__(self):
        if self.label not in (0, 1):
            raise DataError(f"eval label must be 0 or 1, got {self.label}")


@dataclass
class FunctionalityEvalSet:
    pairs: list[EvalPair]
    ratio_pos: float | None = None

    def __post_init__(self):
        if self.ratio_pos is not None:
            expected = int(round(self.ratio_pos * len(self.pairs)))
            if self.n_positive != expected:
                raise DataError(
                    f"declared positive ratio {self.ratio_pos} implies {expected} positives, "
                    f"set has {self.n_positive}"
                )

    @property
    def n_positive(self) -> int:
        return sum(p.label for p in self.pairs)

    @property
    def n_negative(self) -> int:
        return len(self.pairs) - self.n_positive


@dataclass(frozen=True)
class PairInput:
    """Minimal title-pair view handed to scorers."""

    query_id: str
    candidate_id: str
    query_title: str
    candidate_title: str
    marketplace: str


# A scorer maps title-pair objects (anything with the PairInput attributes,
# e.g. LabeledPair or EvalPair) to one substitute score each.
Scorer = Callable[[Sequence], np.ndarray]


@dataclass
class RankingGroup:
    query_id: str
    query_title: str
    marketplace: str
    candidate_ids: list[str]
    candidate_titles: list[str]
    gains: dict[str, np.ndarray]  # signal -> per-candidate gain, NaN where undefined

    def pair_inputs(self) -> list[PairInput]:
        return [
            PairInput(self.query_id, cid, self.query_title, title, self.marketplace)
            for cid, title in zip(self.candidate_ids, self.candidate_titles)
        ]


@dataclass
class RankingEvalSet:
    groups: list[RankingGroup]
    min_impressions: int
    n_dropped_threshold: int = 0
    n_dropped_small: int = 0


def auprc(scores, labels) -> float:
    """Average precision: descending-score sweep with tied scores grouped
    into single threshold steps; AP = sum over steps of (R_k - R_{k-1}) * P_k."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-d and aligned")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be binary")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetricError("auprc undefined without positive labels")
    order = np.argsort(-scores, kind="stable")
    y = labels[order]
    s = scores[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    # last index of each tied-score group = one threshold step
    step = np.nonzero(np.diff(s, append=np.nan) != 0)[0]
    precision = tp[step] / (tp[step] + fp[step])
    recall = tp[step] / n_pos
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * precision))


def ndcg_for_query(scores, gains, candidate_ids=None) -> float | None:
    """NDCG for one query: linear gain, discount 1/log2(rank+1), rank from 1.

    Tied model scores are ordered by candidate_id (deterministic, no random
    tie credit). All-zero gains return None: the query carries no ranking
    information and is skipped by the caller.
    """
    scores = np.asarray(scores, dtype=np.float64)
    gains = np.asarray(gains, dtype=np.float64)
    if scores.shape != gains.shape or scores.ndim != 1:
        raise ValueError("scores and gains must be 1-d and aligned")
    if scores.size < 2:
        raise ValueError("ndcg needs >= 2 candidates")
    if np.any(gains < 0) or np.any(np.isnan(gains)):
        raise ValueError("gains must be non-negative and defined")
    if not np.any(gains > 0):
        return None
    tiebreak = np.asarray(candidate_ids) if candidate_ids is not None else np.arange(scores.size)
    order = np.lexsort((tiebreak, -scores))
    discounts = 1.0 / np.log2(np.arange(2, scores.size + 2))
    dcg = float(np.sum(gains[order] * discounts))
    idcg = float(np.sum(np.sort(gains)[::-1] * discounts))
    return dcg / idcg


def mean_ndcg(
    ranking_set: RankingEvalSet,
    model_scores: dict[str, np.ndarray],
    signal: str,
) -> tuple[float, int]:
    """Unweighted mean NDCG over query groups for one gain signal.

    Groups are skipped (and counted) when the signal leaves < 2 defined
    candidates or all gains are zero. Raises when every group is skipped.
    """
    values = []
    n_skipped = 0
    for group in ranking_set.groups:
        gains = group.gains[signal]
        defined = ~np.isnan(gains)
        if int(defined.sum()) < 2:
            n_skipped += 1
            continue
        scores = np.asarray(model_scores[group.query_id], dtype=np.float64)
        ids = np.asarray(group.candidate_ids)
        value = ndcg_for_query(scores[defined], gains[defined], ids[defined])
        if value is None:
            n_skipped += 1
        else:
            values.append(value)
    if not values:
        raise UndefinedMetricError(f"all {len(ranking_set.groups)} groups skipped for {signal}")
    return float(np.mean(values)), n_skipped


def pearson(x, y) -> float:
    """Sample Pearson correlation coefficient."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("need two aligned vectors of length >= 2")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = math.sqrt(float(np.dot(xc, xc)))
    sy = math.sqrt(float(np.dot(yc, yc)))
    if sx == 0.0 or sy == 0.0:
        raise UndefinedMetricError("pearson undefined for a constant vector")
    return float(np.dot(xc, yc) / (sx * sy))


@dataclass
class ScoreHistogram:
    """Density histograms per pair kind on shared bin edges (area 1 per kind)."""

    edges: list[float]
    densities: dict[str, list[float]]
    counts: dict[str, int]
    mean_by_kind: dict[str, float]
    separation: float | None  # mean(positive) - mean(random), when both present


def score_histogram(scores, kinds, bins: int = 30) -> ScoreHistogram:
    scores = np.asarray(scores, dtype=np.float64)
    kinds = list(kinds)
    if bins < 2:
        raise ValueError(f"need >= 2 bins, got {bins}")
    if scores.size == 0:
        raise ValueError("no scores to bin")
    lo, hi = float(scores.min()), float(scores.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    densities: dict[str, list[float]] = {}
    counts: dict[str, int] = {}
    means: dict[str, float] = {}
    for kind in sorted(set(kinds)):
        mask = np.array([k == kind for k in kinds])
        subset = scores[mask]
        hist, _ = np.histogram(subset, bins=edges, density=True)
        densities[kind] = [float(v) for v in hist]
        counts[kind] = int(subset.size)
        means[kind] = float(subset.mean())
    separation = None
    if "positive" in means and "random" in means:
        separation = means["positive"] - means["random"]
    return ScoreHistogram(
        edges=[float(e) for e in edges],
        densities=densities,
        counts=counts,
        mean_by_kind=means,
        separation=separation,
    )


@dataclass
class MarketplaceMetrics:
    auprc: float | None
    ndcg_by_signal: dict[str, float | None]
    n_pairs: int
    n_groups: int


@dataclass
class MetricsReport:
    auprc: float
    ndcg_by_signal: dict[str, float]
    pearson_ctr_cvr: float | None
    per_marketplace: dict[str, MarketplaceMetrics]
    histogram: ScoreHistogram
    n_pairs: int
    n_groups: int
    n_skipped_by_signal: dict[str, int]
    n_tied_score_groups: int
    n_dropped_small_groups: int
    positive_score_std: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        d["histogram"] = ScoreHistogram(**d["histogram"])
        d["per_marketplace"] = {
            mk: MarketplaceMetrics(**sub) for mk, sub in d["per_marketplace"].items()
        }
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls.from_dict(json.loads(text))


def _group_scores(scorer: Scorer, ranking_set: RankingEvalSet) -> dict[str, np.ndarray]:
    """Score every group's candidates in one scorer call, then split back."""
    flat: list[PairInput] = []
    sizes: list[int] = []
    for group in ranking_set.groups:
        inputs = group.pair_inputs()
        flat.extend(inputs)
        sizes.append(len(inputs))
    if not flat:
        return {}
    scores = np.asarray(scorer(flat), dtype=np.float64)
    out: dict[str, np.ndarray] = {}
    offset = 0
    for group, size in zip(ranking_set.groups, sizes):
        out[group.query_id] = scores[offset:offset + size]
        offset += size
    return out


def _safe_auprc(scores, labels) -> float | None:
    try:
        return auprc(scores, labels)
    except UndefinedMetricError:
        return None


def _safe_mean_ndcg(subset: RankingEvalSet, scores, signal) -> float | None:
    try:
        value, _ = mean_ndcg(subset, scores, signal)
        return value
    except UndefinedMetricError:
        return None


def evaluate(
    scorer: Scorer,
    functionality_set: FunctionalityEvalSet,
    ranking_set: RankingEvalSet,
    bins: int = 30,
) -> MetricsReport:
    """Run the full protocol with one scorer and assemble the report.

    Global metrics raise UndefinedMetricError when degenerate; marketplace
    blocks degrade to None instead so one thin fold cannot sink the report.
    """
    pairs = functionality_set.pairs
    if not pairs:
        raise UndefinedMetricError("functionality set is empty")
    f_scores = np.asarray(scorer(pairs), dtype=np.float64)
    labels = np.array([p.label for p in pairs])
    try:
        overall_auprc = auprc(f_scores, labels)
    except UndefinedMetricError as exc:
        raise UndefinedMetricError(f"functionality set: {exc}") from exc

    hist_kinds = ["positive" if p.label == 1 else p.source for p in pairs]
    hist_mask = np.array([k in ("positive", "random") for k in hist_kinds])
    histogram = score_histogram(
        f_scores[hist_mask],
        [k for k in hist_kinds if k in ("positive", "random")],
        bins=bins,
    )
    positive_scores = f_scores[labels == 1]
    positive_std = float(positive_scores.std()) if positive_scores.size else 0.0

    group_scores = _group_scores(scorer, ranking_set)
    ndcg_by_signal: dict[str, float] = {}
    n_skipped: dict[str, int] = {}
    for signal in SIGNALS:
        try:
            value, skipped = mean_ndcg(ranking_set, group_scores, signal)
        except UndefinedMetricError as exc:
            raise UndefinedMetricError(f"ranking set, signal {signal}: {exc}") from exc
        ndcg_by_signal[signal] = value
        n_skipped[signal] = skipped

    n_tied = sum(
        1 for g in ranking_set.groups
        if np.unique(group_scores[g.query_id]).size < len(g.candidate_ids)
    )

    # CTR vs CVR diagnostic over group members where both rates are defined
    ctr_all, cvr_all = [], []
    for group in ranking_set.groups:
        both = ~np.isnan(group.gains["ctr"]) & ~np.isnan(group.gains["cvr"])
        ctr_all.extend(group.gains["ctr"][both])
        cvr_all.extend(group.gains["cvr"][both])
    try:
        pearson_ctr_cvr = pearson(ctr_all, cvr_all) if len(ctr_all) >= 2 else None
    except UndefinedMetricError:
        pearson_ctr_cvr = None

    per_marketplace: dict[str, MarketplaceMetrics] = {}
    marketplaces = sorted(
        {p.marketplace for p in pairs} | {g.marketplace for g in ranking_set.groups}
    )
    for mk in marketplaces:
        mk_mask = np.array([p.marketplace == mk for p in pairs])
        mk_auprc = (
            _safe_auprc(f_scores[mk_mask], labels[mk_mask]) if mk_mask.any() else None
        )
        mk_groups = [g for g in ranking_set.groups if g.marketplace == mk]
        mk_subset = RankingEvalSet(groups=mk_groups, min_impressions=ranking_set.min_impressions)
        mk_ndcg = {
            signal: (_safe_mean_ndcg(mk_subset, group_scores, signal) if mk_groups else None)
            for signal in SIGNALS
        }
        per_marketplace[mk] = MarketplaceMetrics(
            auprc=mk_auprc,
            ndcg_by_signal=mk_ndcg,
            n_pairs=int(mk_mask.sum()),
            n_groups=len(mk_groups),
        )

    return MetricsReport(
        auprc=overall_auprc,
        ndcg_by_signal=ndcg_by_signal,
        pearson_ctr_cvr=pearson_ctr_cvr,
        per_marketplace=per_marketplace,
        histogram=histogram,
        n_pairs=len(pairs),
        n_groups=len(ranking_set.groups),
        n_skipped_by_signal=n_skipped,
        n_tied_score_groups=n_tied,
        n_dropped_small_groups=ranking_set.n_dropped_small,
        positive_score_std=positive_std,
    )


def save_histogram_tsv(histogram: ScoreHistogram, path) -> None:
    """Tab-separated histogram dump for external plotting."""
    kinds = sorted(histogram.densities)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bin_left\tbin_right\t" + "\t".join(f"density_{k}" for k in kinds) + "\n")
        for i in range(len(histogram.edges) - 1):
            row = [repr(histogram.edges[i]), repr(histogram.edges[i + 1])]
            row += [repr(histogram.densities[k][i]) for k in kinds]
            fh.write("\t".join(row) + "\n")


def save_functionality_evalset(evalset: FunctionalityEvalSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in evalset.pairs:
            fh.write(json.dumps({
                "query_id": p.query_id,
                "candidate_id": p.candidate_id,
                "query_title": p.query_title,
                "candidate_title": p.candidate_title,
                "label": p.label,
                "marketplace": p.marketplace,
                "source": p.source,
            }, ensure_ascii=False, sort_keys=True) + "\n")


def load_functionality_evalset(path) -> FunctionalityEvalSet:
    from .data import _iter_json_lines, _require_fields

    pairs = []
    for lineno, obj in _iter_json_lines(path):
        _require_fields(
            obj,
            ("query_id", "candidate_id", "query_title", "candidate_title",
             "label", "marketplace", "source"),
            path, lineno,
        )
        pairs.append(EvalPair(
            query_id=str(obj["query_id"]),
            candidate_id=str(obj["candidate_id"]),
            query_title=str(obj["query_title"]),
            candidate_title=str(obj["candidate_title"]),
            label=int(obj["label"]),
            marketplace=str(obj["marketplace"]),
            source=str(obj["source"]),
        ))
    if not pairs:
        raise DataError(f"{path}: empty functionality eval set")
    ratio = sum(p.label for p in pairs) / len(pairs)
    return FunctionalityEvalSet(pairs=pairs, ratio_pos=ratio)
