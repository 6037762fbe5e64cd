"""Domain records, file ingestion, and leakage-safe dataset splitting.

Catalog and traffic files are UTF-8 JSON lines, one record per line (see
FORMATS.md). Loaders validate every record and reject bad ones with the
line number and a reason; nothing is silently repaired.
"""

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DataError


class PairKind(str, Enum):
    POSITIVE = "positive"
    HARD_NEGATIVE = "hard_negative"
    RANDOM_NEGATIVE = "random_negative"


@dataclass(frozen=True)
class ProductRecord:
    product_id: str
    title: str
    marketplace: str
    language: str


@dataclass(frozen=True)
class TrafficRecord:
    query_id: str
    candidate_id: str
    impressions: int
    clicks: int
    purchases: int
    gmv: float


@dataclass(frozen=True)
class LabeledPair:
    query_id: str
    candidate_id: str
    query_title: str
    candidate_title: str
    label: float
    kind: PairKind
    marketplace: str


@dataclass
class DatasetSplit:
    train: list[LabeledPair]
    validation: list[LabeledPair]

    def query_overlap(self) -> set[str]:
        return {p.query_id for p in self.train} & {p.query_id for p in self.validation}


@dataclass
class Catalog:
    """Product list plus an id index for O(1) title/language lookup."""

    records: list[ProductRecord]
    by_id: dict[str, ProductRecord] = field(init=False)

    def __post_init__(self):
        self.by_id = {}
        for rec in self.records:
            if rec.product_id in self.by_id:
                raise DataError(f"duplicate product_id {rec.product_id!r} in catalog")
            self.by_id[rec.product_id] = rec

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, product_id: str) -> bool:
        return product_id in self.by_id

    @classmethod
    def load(cls, path: str | Path) -> "Catalog":
        return cls(load_catalog(path))


def _iter_json_lines(path: str | Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: not valid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def _require_fields(obj: dict, fields: tuple[str, ...], path, lineno: int) -> None:
    missing = [f for f in fields if f not in obj]
    if missing:
        raise DataError(f"{path}:{lineno}: missing field(s) {', '.join(missing)}")


def load_catalog(path: str | Path) -> list[ProductRecord]:
    """Load and validate a catalog file. Duplicate ids and empty titles are errors."""
    records: list[ProductRecord] = []
    seen: dict[str, int] = {}
    for lineno, obj in _iter_json_lines(path):
        _require_fields(obj, ("product_id", "title", "marketplace", "language"), path, lineno)
        pid = str(obj["product_id"])
        title = str(obj["title"])
        if not pid:
            raise DataError(f"{path}:{lineno}: empty product_id")
        if not title.strip():
            raise DataError(f"{path}:{lineno}: empty title for product_id {pid!r}")
        if pid in seen:
            raise DataError(
                f"{path}:{lineno}: duplicate product_id {pid!r} (first seen on line {seen[pid]})"
            )
        seen[pid] = lineno
        records.append(
            ProductRecord(
                product_id=pid,
                title=title,
                marketplace=str(obj["marketplace"]),
                language=str(obj["language"]),
            )
        )
    return records


def load_traffic(path: str | Path, catalog: Catalog) -> list[TrafficRecord]:
    """Load aggregated traffic counts, resolving ids against ``catalog``.

    Count-order violations (purchases > clicks, clicks > impressions) are hard
    errors: clamping them would corrupt the very signals under study.
    """
    records: list[TrafficRecord] = []
    seen_pairs: set[tuple[str, str]] = set()
    for lineno, obj in _iter_json_lines(path):
        _require_fields(
            obj, ("query_id", "candidate_id", "impressions", "clicks", "purchases", "gmv"),
            path, lineno,
        )
        qid = str(obj["query_id"])
        cid = str(obj["candidate_id"])
        if qid not in catalog:
            raise DataError(f"{path}:{lineno}: unknown query_id {qid!r}")
        if cid not in catalog:
            raise DataError(f"{path}:{lineno}: unknown candidate_id {cid!r}")
        if qid == cid:
            raise DataError(f"{path}:{lineno}: self-pair {qid!r}")
        if (qid, cid) in seen_pairs:
            raise DataError(f"{path}:{lineno}: duplicate pair ({qid!r}, {cid!r})")
        try:
            imp, clk, pur = int(obj["impressions"]), int(obj["clicks"]), int(obj["purchases"])
            gmv = float(obj["gmv"])
        except (TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: non-numeric count: {exc}") from exc
        if min(imp, clk, pur) < 0 or gmv < 0:
            raise DataError(f"{path}:{lineno}: negative count in ({qid!r}, {cid!r})")
        if not (pur <= clk <= imp):
            raise DataError(
                f"{path}:{lineno}: count order violated for ({qid!r}, {cid!r}): "
                f"purchases={pur} clicks={clk} impressions={imp}"
            )
        seen_pairs.add((qid, cid))
        records.append(TrafficRecord(qid, cid, imp, clk, pur, gmv))
    return records


def split_query_ids(query_ids: list[str], val_fraction: float, seed: int) -> set[str]:
    """Pick the validation side of a grouped split: ``round(val_fraction * n)``
    ids, clamped so each side keeps at least one. Deterministic per seed."""
    if not 0.0 < val_fraction < 1.0:
        raise DataError(f"val_fraction must be in (0, 1), got {val_fraction}")
    query_ids = sorted(set(query_ids))
    if len(query_ids) < 2:
        raise DataError(f"cannot split: need >= 2 distinct query_ids, got {len(query_ids)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(query_ids))
    n_val = int(round(val_fraction * len(query_ids)))
    n_val = min(max(n_val, 1), len(query_ids) - 1)
    return {query_ids[i] for i in order[:n_val]}


def split_by_query_ids(pairs: list[LabeledPair], val_ids: set[str]) -> DatasetSplit:
    train = [p for p in pairs if p.query_id not in val_ids]
    validation = [p for p in pairs if p.query_id in val_ids]
    return DatasetSplit(train=train, validation=validation)


def grouped_split(pairs: list[LabeledPair], val_fraction: float, seed: int) -> DatasetSplit:
    """Split by query product so no query id appears on both sides."""
    val_ids = split_query_ids([p.query_id for p in pairs], val_fraction, seed)
    return split_by_query_ids(pairs, val_ids)


def save_catalog(records: list[ProductRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({
                "product_id": rec.product_id,
                "title": rec.title,
                "marketplace": rec.marketplace,
                "language": rec.language,
            }, ensure_ascii=False, sort_keys=True) + "\n")


def save_traffic(records: list[TrafficRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({
                "query_id": rec.query_id,
                "candidate_id": rec.candidate_id,
                "impressions": rec.impressions,
                "clicks": rec.clicks,
                "purchases": rec.purchases,
                "gmv": rec.gmv,
            }, ensure_ascii=False, sort_keys=True) + "\n")


# --- labeled-pair file round-trip (prepared datasets, see FORMATS.md) ---

def save_pairs(pairs: list[LabeledPair], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps({
                "query_id": p.query_id,
                "candidate_id": p.candidate_id,
                "query_title": p.query_title,
                "candidate_title": p.candidate_title,
                "label": p.label,
                "kind": p.kind.value,
                "marketplace": p.marketplace,
            }, ensure_ascii=False, sort_keys=True) + "\n")


def load_pairs(path: str | Path) -> list[LabeledPair]:
    pairs = []
    for lineno, obj in _iter_json_lines(path):
        _require_fields(
            obj, ("query_id", "candidate_id", "query_title", "candidate_title",
                  "label", "kind", "marketplace"),
            path, lineno,
        )
        try:
            kind = PairKind(obj["kind"])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: unknown pair kind {obj['kind']!r}") from exc
        pairs.append(LabeledPair(
            query_id=str(obj["query_id"]),
            candidate_id=str(obj["candidate_id"]),
            query_title=str(obj["query_title"]),
            candidate_title=str(obj["candidate_title"]),
            label=float(obj["label"]),
            kind=kind,
            marketplace=str(obj["marketplace"]),
        ))
    return pairs
