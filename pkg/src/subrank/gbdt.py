"""Gradient-boosted regression trees, written out in full.

Exact greedy splits (no histogram binning): candidate thresholds are the
midpoints between consecutive distinct sorted feature values, the winner
maximizes the reduction in sum of squared residuals, and ties go to the
lowest feature index, then the lowest threshold. Three objectives share the
tree machinery through per-sample (numerator, denominator) targets whose
per-leaf ratio is the leaf value:

    mse       num = y - F,                    den = 1        (leaf = mean residual)
    logistic  num = y - sigmoid(F),           den = p(1 - p) (one Newton step)
    hinge     num = sign(y) where margin < 1, den = 1        (mean subgradient)

Predictions are raw additive scores; logistic applies a sigmoid only at
probability-reporting time.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

OBJECTIVES = ("mse", "logistic", "hinge")

# Gains below this are treated as zero so float dust cannot force a split
# on constant residuals.
MIN_GAIN = 1e-12


@dataclass(frozen=True)
class GBDTParams:
    n_trees: int = 200
    max_depth: int = 6
    min_samples_leaf: int = 20
    learning_rate: float = 0.1
    row_subsample: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 0 or self.max_depth < 1 or self.min_samples_leaf < 1:
            raise ConfigError(f"invalid tree parameters: {self}")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ConfigError(f"learning_rate must be in (0, 1], got {self.learning_rate}")
        if not 0.0 < self.row_subsample <= 1.0:
            raise ConfigError(f"row_subsample must be in (0, 1], got {self.row_subsample}")


@dataclass
class RegressionTree:
    """Flat binary tree. feature[i] >= 0 marks an internal node; -1 a leaf.
    Routing: x[feature] <= threshold goes left."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            f = self.feature[node]
            active = np.nonzero(f >= 0)[0]
            if active.size == 0:
                break
            fv = X[active, f[active]]
            go_left = fv <= self.threshold[node[active]]
            node[active] = np.where(
                go_left, self.left[node[active]], self.right[node[active]]
            )
        return self.value[node]

    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def best_split(
    feature_values: np.ndarray, residuals: np.ndarray, min_samples_leaf: int = 1
) -> tuple[float, float] | None:
    """Best threshold for one feature, or None when no split helps.

    Returns (threshold, gain) where gain is the reduction in sum of squared
    residuals around leaf means. Thresholds are midpoints between distinct
    consecutive sorted values; equal gains resolve to the lowest threshold.
    """
    v = np.asarray(feature_values, dtype=np.float64)
    r = np.asarray(residuals, dtype=np.float64)
    if v.shape != r.shape or v.ndim != 1:
        raise ValueError("feature values and residuals must be 1-d and aligned")
    m = v.size
    if m < 2 * min_samples_leaf or m < 2:
        return None
    order = np.argsort(v, kind="stable")
    sv, sr = v[order], r[order]
    csum = np.cumsum(sr)
    total = csum[-1]
    n_left = np.arange(1, m)
    s_left = csum[:-1]
    gains = (
        s_left**2 / n_left
        + (total - s_left) ** 2 / (m - n_left)
        - total**2 / m
    )
    valid = (
        (sv[1:] != sv[:-1])
        & (n_left >= min_samples_leaf)
        & ((m - n_left) >= min_samples_leaf)
    )
    if not valid.any():
        return None
    gains = np.where(valid, gains, -np.inf)
    best = int(np.argmax(gains))  # first max = lowest threshold (values sorted)
    if gains[best] <= MIN_GAIN:
        return None
    threshold = (sv[best] + sv[best + 1]) / 2.0
    if threshold >= sv[best + 1]:  # midpoint rounded up onto the right value
        threshold = sv[best]
    return float(threshold), float(gains[best])


def presort_features(X: np.ndarray) -> np.ndarray:
    """Per-feature stable argsort, computed once per fit. Row f of the result
    lists all sample indices in ascending order of X[:, f]; node searches then
    only need prefix sums, and partitioning a node keeps every row sorted
    because membership filtering is order-preserving."""
    return np.argsort(X.T, axis=1, kind="stable").astype(np.int32)


def rank_features(X: np.ndarray, sorted_idx: np.ndarray) -> np.ndarray:
    """Dense per-feature value ranks: equal feature values share a rank, so a
    node can test 'are neighbouring sorted values distinct' on int32 ranks
    instead of gathering the float values again."""
    n_features, n = sorted_idx.shape
    ranks = np.empty((n_features, n), dtype=np.int32)
    for f in range(n_features):
        order = sorted_idx[f]
        sv = X[order, f]
        rank_in_order = np.zeros(n, dtype=np.int32)
        rank_in_order[1:] = np.cumsum(sv[1:] != sv[:-1])
        ranks[f, order] = rank_in_order
    return ranks


def _search_sorted_node(rv: np.ndarray, sr: np.ndarray, min_leaf: int):
    """Best (feature, split position, gain) or None when no split helps.

    rv and sr are (n_features, m): per-feature value ranks in sorted order and
    the residuals in that order. Only positions where both children reach
    min_leaf are scanned; ties resolve to the lowest threshold, then the
    lowest feature index.
    """
    n_features, m = rv.shape
    lo, hi = min_leaf - 1, m - min_leaf
    if hi <= lo:
        return None
    csum = np.cumsum(sr, axis=1)
    total = csum[:, -1:]
    s_left = csum[:, lo:hi]
    n_left = np.arange(lo + 1, hi + 1, dtype=np.float64)
    gains = s_left * s_left
    gains /= n_left
    rest = total - s_left
    rest *= rest
    rest /= m - n_left
    gains += rest
    gains -= total * total / m
    gains[rv[:, lo + 1 : hi + 1] == rv[:, lo:hi]] = -np.inf
    best_pos = np.argmax(gains, axis=1)  # per feature: first max = lowest threshold
    best_gain = gains[np.arange(n_features), best_pos]
    f = int(np.argmax(best_gain))  # first max = lowest feature index
    if best_gain[f] <= MIN_GAIN:
        return None
    return f, int(best_pos[f]) + lo, float(best_gain[f])


def _grow_tree(
    X: np.ndarray,
    num: np.ndarray,
    den: np.ndarray,
    max_depth: int,
    min_leaf: int,
    sorted_idx: np.ndarray | None = None,
    ranks: np.ndarray | None = None,
) -> RegressionTree:
    if sorted_idx is None:
        sorted_idx = presort_features(X)
    if ranks is None:
        ranks = rank_features(X, sorted_idx)
    n_features = X.shape[1]
    in_left = np.zeros(X.shape[0], dtype=bool)

    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []

    def leaf(idx: np.ndarray) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(num[idx].sum() / max(den[idx].sum(), 1e-12)))
        return node

    def build(lists: np.ndarray, depth: int) -> int:
        m = lists.shape[1]
        if depth >= max_depth or m < 2 * min_leaf or m < 2:
            return leaf(lists[0])
        rv = np.take_along_axis(ranks, lists, axis=1)
        found = _search_sorted_node(rv, num[lists], min_leaf)
        if found is None:
            return leaf(lists[0])
        f, pos, _ = found
        a = X[lists[f, pos], f]
        b = X[lists[f, pos + 1], f]
        thr = (a + b) / 2.0
        if thr >= b:  # midpoint rounded up onto the right value
            thr = a
        node = len(feature)
        feature.append(f)
        threshold.append(float(thr))
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        n_l = pos + 1
        left_rows = lists[f, :n_l]
        in_left[left_rows] = True
        go = in_left[lists]
        left_lists = lists[go].reshape(n_features, n_l)
        right_lists = lists[~go].reshape(n_features, m - n_l)
        in_left[left_rows] = False
        left[node] = build(left_lists, depth + 1)
        right[node] = build(right_lists, depth + 1)
        return node

    build(sorted_idx, 0)
    return RegressionTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value, dtype=np.float64),
    )


@dataclass
class GBDTModel:
    base_score: float
    trees: list[RegressionTree] = field(default_factory=list)
    learning_rate: float = 0.1
    objective: str = "mse"
    feature_dim: int = 0
    params: GBDTParams = field(default_factory=GBDTParams)
    train_losses: list[float] = field(default_factory=list)

    def predict(self, X) -> np.ndarray:
        """Raw additive score per row; accepts one feature vector or a matrix."""
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.feature_dim:
            raise DataError(
                f"feature dimension {X.shape[1]} != training dimension {self.feature_dim}"
            )
        out = np.full(X.shape[0], self.base_score, dtype=np.float64)
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X)
        return out[0] if single else out

    def predict_probability(self, X) -> np.ndarray:
        if self.objective != "logistic":
            raise ConfigError(f"probabilities undefined for objective {self.objective!r}")
        return sigmoid(np.atleast_1d(self.predict(X)))

    def to_json(self) -> str:
        doc = {
            "format": "subrank-gbdt",
            "version": 1,
            "objective": self.objective,
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "feature_dim": self.feature_dim,
            "params": asdict(self.params),
            "train_losses": self.train_losses,
            "trees": [
                {
                    "feature": t.feature.tolist(),
                    "threshold": t.threshold.tolist(),
                    "left": t.left.tolist(),
                    "right": t.right.tolist(),
                    "value": t.value.tolist(),
                }
                for t in self.trees
            ],
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GBDTModel":
        doc = json.loads(text)
        if doc.get("format") != "subrank-gbdt":
            raise DataError("not a gbdt model artifact")
        trees = [
            RegressionTree(
                feature=np.array(t["feature"], dtype=np.int64),
                threshold=np.array(t["threshold"], dtype=np.float64),
                left=np.array(t["left"], dtype=np.int64),
                right=np.array(t["right"], dtype=np.int64),
                value=np.array(t["value"], dtype=np.float64),
            )
            for t in doc["trees"]
        ]
        return cls(
            base_score=doc["base_score"],
            trees=trees,
            learning_rate=doc["learning_rate"],
            objective=doc["objective"],
            feature_dim=doc["feature_dim"],
            params=GBDTParams(**doc["params"]),
            train_losses=list(doc["train_losses"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "GBDTModel":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _training_loss(objective: str, y: np.ndarray, raw: np.ndarray) -> float:
    if objective == "mse":
        return float(np.mean((y - raw) ** 2))
    if objective == "logistic":
        return float(np.mean(_softplus(raw) - y * raw))
    if objective == "hinge":
        y_pm = 2.0 * y - 1.0
        return float(np.mean(np.maximum(0.0, 1.0 - y_pm * raw)))
    raise ConfigError(f"unknown objective {objective!r}")


def _pseudo_targets(objective: str, y: np.ndarray, raw: np.ndarray):
    if objective == "mse":
        return y - raw, np.ones_like(y)
    if objective == "logistic":
        p = sigmoid(raw)
        return y - p, np.maximum(p * (1.0 - p), 1e-12)
    if objective == "hinge":
        y_pm = 2.0 * y - 1.0
        active = y_pm * raw < 1.0
        return np.where(active, y_pm, 0.0), np.ones_like(y)
    raise ConfigError(f"unknown objective {objective!r}")


def fit(features, labels, params: GBDTParams, objective: str = "mse") -> GBDTModel:
    """Boost ``params.n_trees`` rounds. Deterministic whenever row_subsample is 1."""
    if objective not in OBJECTIVES:
        raise ConfigError(f"objective must be one of {OBJECTIVES}, got {objective!r}")
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError(f"features must be a nonempty 2-d array, got shape {X.shape}")
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != (X.shape[0],):
        raise DataError(f"labels shape {y.shape} does not match {X.shape[0]} rows")
    if objective in ("logistic", "hinge") and not np.all((y == 0) | (y == 1)):
        raise DataError(f"{objective} objective requires labels in {{0, 1}}")

    if objective == "mse":
        base = float(np.mean(y))
    elif objective == "logistic":
        p = float(np.clip(np.mean(y), 1e-6, 1.0 - 1e-6))
        base = float(np.log(p / (1.0 - p)))
    else:
        base = 0.0

    raw = np.full(X.shape[0], base, dtype=np.float64)
    rng = np.random.default_rng(params.seed) if params.row_subsample < 1.0 else None
    trees: list[RegressionTree] = []
    losses: list[float] = []
    n = X.shape[0]
    order_full = presort_features(X)
    ranks = rank_features(X, order_full)
    taken = np.zeros(n, dtype=bool)
    for _ in range(params.n_trees):
        num, den = _pseudo_targets(objective, y, raw)
        if rng is not None:
            k = max(1, int(round(params.row_subsample * n)))
            rows = rng.choice(n, size=k, replace=False)
            taken[rows] = True
            sub_order = order_full[taken[order_full]].reshape(X.shape[1], k)
            taken[rows] = False
            tree = _grow_tree(X, num, den, params.max_depth,
                              params.min_samples_leaf, sorted_idx=sub_order, ranks=ranks)
        else:
            tree = _grow_tree(X, num, den, params.max_depth,
                              params.min_samples_leaf, sorted_idx=order_full, ranks=ranks)
        raw += params.learning_rate * tree.predict(X)
        trees.append(tree)
        losses.append(_training_loss(objective, y, raw))
    return GBDTModel(
        base_score=base,
        trees=trees,
        learning_rate=params.learning_rate,
        objective=objective,
        feature_dim=X.shape[1],
        params=params,
        train_losses=losses,
    )


def predict(model: GBDTModel, feature) -> float | np.ndarray:
    return model.predict(feature)
