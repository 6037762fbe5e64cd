"""Seeded synthetic marketplace: catalog, ground truth, and weak traffic.

The generator builds the confound this whole pipeline exists to untangle:
click propensity is driven by attraction and by cross-category relatedness
(think vitamin C next to vitamin D), while purchase propensity is driven by
true same-category substitutability and by price tier. Clicks therefore
overrate flashy neighbors and purchases track function, with cheap products
converting several times better than expensive ones.

Serving is selection-biased on purpose: by default every exposure is a
plausible candidate (same or related category), never a uniform-random one,
and the embedding builder places co-viewed categories on nearly parallel
directions. Served pairs are therefore all close in feature space. A model
trained on served traffic alone never sees what an arbitrary bad pair looks
like, so its behavior on distant pairs is unconstrained, which is exactly
the gap random-negative augmentation closes.

Titles come from per-language token pools. Every product title contains its
category head token, so same-category products inside one marketplace always
share a signature token; language pools are disjoint, so marketplaces form
real multilingual folds. For languages written without spaces the pool
"words" are single kana characters, matching the tokenizer's per-character
handling of CJK text.
"""

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Catalog, ProductRecord, TrafficRecord, _iter_json_lines, _require_fields
from .embeddings import EmbeddingTable
from .errors import ConfigError, DataError, SamplingExhaustedError
from .metrics import EvalPair, FunctionalityEvalSet, RankingEvalSet, RankingGroup
from .seeding import rng_for

PRICE_TIERS = ("low", "mid", "high")
RELATIONS = ("same", "related", "random")

_LATIN_LETTERS = list("abcdefghijklmnopqrstuvwxyz")
_KANA = [chr(c) for c in range(0x30A1, 0x30FB)] + [chr(c) for c in range(0x3041, 0x3097)]


@dataclass(frozen=True)
class WorldConfig:
    n_categories: int = 40
    products_per_category: int = 25  # per category per marketplace
    marketplaces: tuple[tuple[str, str], ...] = (("US", "en"), ("DE", "de"))
    n_signature_tokens: int = 3  # per (category, language); first is the head token
    n_common_tokens: int = 100  # per language
    related_fraction: float = 0.6  # products carrying the co-view confound
    n_same_exposures: int = 5
    n_related_exposures: int = 22
    n_random_exposures: int = 0
    exposure_mu: float = 5.5  # log-normal impressions per exposed pair
    exposure_sigma: float = 1.0
    ctr_same: float = 0.25
    ctr_related: float = 0.45
    ctr_random: float = 0.02
    cvr_same: float = 0.14
    cvr_related: float = 0.0008
    cvr_random: float = 0.001
    price_mult_low: float = 3.0
    price_mult_mid: float = 1.7
    price_mult_high: float = 1.0
    attraction_min: float = 0.2
    attraction_max: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_categories < 2:
            raise ConfigError(
                f"need >= 2 categories for non-substitutable pairs, got {self.n_categories}"
            )
        if self.products_per_category < 1 or not self.marketplaces:
            raise ConfigError("products_per_category and marketplaces must be nonempty")
        if self.n_signature_tokens < 1 or self.n_common_tokens < 1:
            raise ConfigError("token pool sizes must be >= 1")
        if not 0.0 <= self.related_fraction <= 1.0:
            raise ConfigError(f"related_fraction must be in [0, 1], got {self.related_fraction}")
        for name in ("ctr_same", "ctr_related", "ctr_random",
                     "cvr_same", "cvr_related", "cvr_random"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ConfigError(f"{name} must be a rate in [0, 1], got {rate}")
        if not 0.0 < self.attraction_min < self.attraction_max <= 1.0:
            raise ConfigError("attraction range must satisfy 0 < min < max <= 1")
        if min(self.n_same_exposures, self.n_related_exposures, self.n_random_exposures) < 0:
            raise ConfigError("exposure counts must be >= 0")
        if self.exposure_sigma <= 0:
            raise ConfigError(f"exposure_sigma must be positive, got {self.exposure_sigma}")

    def price_multiplier(self, tier: str) -> float:
        return {
            "low": self.price_mult_low,
            "mid": self.price_mult_mid,
            "high": self.price_mult_high,
        }[tier]


@dataclass(frozen=True)
class SyntheticProduct:
    product_id: str
    title: str
    marketplace: str
    language: str
    category: int
    related_category: int | None
    attraction: float
    price_tier: str
    price: float


@dataclass
class GroundTruth:
    """Substitutability oracle: same functional category, self excluded."""

    category_of: dict[str, int]

    def substitutable(self, a: str, b: str) -> bool:
        return a != b and self.category_of[a] == self.category_of[b]

    def n_substitutable_pairs(self) -> int:
        """Distinct unordered substitutable pairs."""
        sizes: dict[int, int] = defaultdict(int)
        for cat in self.category_of.values():
            sizes[cat] += 1
        return sum(s * (s - 1) // 2 for s in sizes.values())


@dataclass
class World:
    config: WorldConfig
    products: list[SyntheticProduct]
    category_partner: dict[int, int]
    signature_tokens: dict[tuple[str, int], list[str]]  # (language, category)
    common_tokens: dict[str, list[str]]  # language
    by_id: dict[str, SyntheticProduct] = field(init=False)

    def __post_init__(self):
        self.by_id = {p.product_id: p for p in self.products}

    def catalog(self) -> Catalog:
        return Catalog([
            ProductRecord(p.product_id, p.title, p.marketplace, p.language)
            for p in self.products
        ])

    def ground_truth(self) -> GroundTruth:
        return GroundTruth({p.product_id: p.category for p in self.products})

    def relation_of(self, query_id: str, candidate_id: str) -> str:
        """same | related | random, judged from true categories (symmetric)."""
        a = self.by_id[query_id].category
        b = self.by_id[candidate_id].category
        if a == b:
            return "same"
        if self.category_partner.get(a) == b or self.category_partner.get(b) == a:
            return "related"
        return "random"

    def true_rates(self, query_id: str, candidate_id: str) -> tuple[float, float]:
        """Latent (ctr, cvr) the simulator draws from for this pair."""
        cfg = self.config
        rel = self.relation_of(query_id, candidate_id)
        cand = self.by_id[candidate_id]
        ctr = min(getattr(cfg, f"ctr_{rel}") * cand.attraction, 0.95)
        cvr = min(getattr(cfg, f"cvr_{rel}") * cfg.price_multiplier(cand.price_tier), 0.95)
        return ctr, cvr


def _language_pools(config: WorldConfig, rng: np.random.Generator):
    """Per-language disjoint token pools; kana languages use single characters."""
    used: set[str] = set()

    def fresh_latin() -> str:
        while True:
            length = int(rng.integers(3, 10))
            word = "".join(rng.choice(_LATIN_LETTERS, size=length))
            if word not in used:
                used.add(word)
                return word

    signature: dict[tuple[str, int], list[str]] = {}
    common: dict[str, list[str]] = {}
    for language in dict.fromkeys(lang for _, lang in config.marketplaces):
        need = config.n_common_tokens + config.n_categories * config.n_signature_tokens
        if language == "ja":
            if need > len(_KANA):
                raise ConfigError(
                    f"ja world needs {need} distinct kana tokens, alphabet has {len(_KANA)}; "
                    "reduce n_common_tokens or n_signature_tokens"
                )
            chars = [str(c) for c in rng.permutation(_KANA)]
            draw = iter(chars).__next__
        else:
            draw = fresh_latin
        common[language] = [draw() for _ in range(config.n_common_tokens)]
        for cat in range(config.n_categories):
            signature[(language, cat)] = [
                draw() for _ in range(config.n_signature_tokens)
            ]
    return signature, common


def generate_world(config: WorldConfig) -> World:
    """Deterministic per config.seed. Category partners pair up adjacent
    categories; a ``related_fraction`` of each category's products carry the
    partner as their co-view confound."""
    vocab_rng = rng_for(config.seed, "world-vocab")
    signature, common = _language_pools(config, vocab_rng)

    partner = {}
    for c in range(config.n_categories):
        partner[c] = c + 1 if c % 2 == 0 else c - 1
    if config.n_categories % 2 == 1:
        partner[config.n_categories - 1] = 0  # odd category count: last points back

    rng = rng_for(config.seed, "world-products")
    products: list[SyntheticProduct] = []
    counter = 0
    for code, language in config.marketplaces:
        joiner = "" if language == "ja" else " "
        for cat in range(config.n_categories):
            sig = signature[(language, cat)]
            pool = common[language]
            for _ in range(config.products_per_category):
                n_extra = int(rng.integers(0, len(sig))) if len(sig) > 1 else 0
                extra = [sig[1 + i] for i in rng.choice(len(sig) - 1, size=n_extra, replace=False)] if n_extra else []
                n_common = int(rng.integers(2, 5))
                filler = [pool[i] for i in rng.choice(len(pool), size=n_common, replace=False)]
                tokens = [sig[0]] + extra + filler
                tokens = [tokens[i] for i in rng.permutation(len(tokens))]
                tier = PRICE_TIERS[int(rng.integers(0, 3))]
                price_range = {"low": (5.0, 20.0), "mid": (20.0, 60.0), "high": (60.0, 200.0)}[tier]
                related = partner[cat] if rng.random() < config.related_fraction else None
                products.append(SyntheticProduct(
                    product_id=f"P{counter:05d}",
                    title=joiner.join(tokens),
                    marketplace=code,
                    language=language,
                    category=cat,
                    related_category=related,
                    attraction=float(rng.uniform(config.attraction_min, config.attraction_max)),
                    price_tier=tier,
                    price=round(float(rng.uniform(*price_range)), 2),
                ))
                counter += 1
    return World(
        config=config,
        products=products,
        category_partner=partner,
        signature_tokens=signature,
        common_tokens=common,
    )


def simulate_traffic(world: World) -> list[TrafficRecord]:
    """Exposure plus binomial click/purchase draws for every exposed pair.

    purchases <= clicks <= impressions holds by construction; gmv is
    purchases times the candidate's price. Deterministic per world seed.
    """
    cfg = world.config
    rng = rng_for(cfg.seed, "traffic")
    cell: dict[tuple[str, int], list[SyntheticProduct]] = defaultdict(list)
    per_marketplace: dict[str, list[SyntheticProduct]] = defaultdict(list)
    for p in world.products:
        cell[(p.marketplace, p.category)].append(p)
        per_marketplace[p.marketplace].append(p)

    records: list[TrafficRecord] = []
    for q in world.products:
        exposed: list[SyntheticProduct] = []
        seen = {q.product_id}

        def take(pool: list[SyntheticProduct], want: int) -> None:
            avail = [p for p in pool if p.product_id not in seen]
            if not avail or want <= 0:
                return
            k = min(want, len(avail))
            for i in rng.choice(len(avail), size=k, replace=False):
                exposed.append(avail[i])
                seen.add(avail[i].product_id)

        take(cell[(q.marketplace, q.category)], cfg.n_same_exposures)
        if q.related_category is not None:
            take(cell[(q.marketplace, q.related_category)], cfg.n_related_exposures)
        pool = per_marketplace[q.marketplace]
        attempts = 0
        wanted = cfg.n_random_exposures
        while wanted > 0 and attempts < 50 * cfg.n_random_exposures:
            attempts += 1
            p = pool[int(rng.integers(len(pool)))]
            if p.product_id in seen:
                continue
            exposed.append(p)
            seen.add(p.product_id)
            wanted -= 1

        for c in exposed:
            ctr, cvr = world.true_rates(q.product_id, c.product_id)
            impressions = max(1, int(round(rng.lognormal(cfg.exposure_mu, cfg.exposure_sigma))))
            clicks = int(rng.binomial(impressions, ctr))
            purchases = int(rng.binomial(clicks, cvr)) if clicks else 0
            records.append(TrafficRecord(
                query_id=q.product_id,
                candidate_id=c.product_id,
                impressions=impressions,
                clicks=clicks,
                purchases=purchases,
                gmv=round(purchases * c.price, 2),
            ))
    return records


def build_functionality_evalset(
    world: World,
    n: int,
    ratio_pos: float = 0.6,
    seed: int = 0,
    related_negative_fraction: float = 0.5,
) -> FunctionalityEvalSet:
    """Sample n labeled pairs at the declared positive ratio.

    Positives are same-category pairs inside one marketplace; negatives mix
    hard related-category pairs (targeted fraction) with uniform
    cross-category pairs. Pairs are distinct and ordered (query, candidate).
    """
    if n < 1 or not 0.0 < ratio_pos < 1.0:
        raise ConfigError(f"need n >= 1 and ratio_pos in (0, 1), got n={n}, ratio={ratio_pos}")
    rng = rng_for(seed, "functionality-eval")
    cell: dict[tuple[str, int], list[SyntheticProduct]] = defaultdict(list)
    for p in world.products:
        cell[(p.marketplace, p.category)].append(p)
    multi = [p for p in world.products if len(cell[(p.marketplace, p.category)]) > 1]
    confounded = [p for p in multi if p.related_category is not None
                  and cell[(p.marketplace, p.related_category)]]
    if not multi:
        raise DataError("world has no same-category pairs to sample positives from")

    n_pos = int(round(ratio_pos * n))
    n_neg = n - n_pos
    pairs: list[EvalPair] = []
    taken: set[tuple[str, str]] = set()

    def emit(q: SyntheticProduct, c: SyntheticProduct, label: int, source: str) -> bool:
        key = (q.product_id, c.product_id)
        if key in taken:
            return False
        taken.add(key)
        pairs.append(EvalPair(
            query_id=q.product_id,
            candidate_id=c.product_id,
            query_title=q.title,
            candidate_title=c.title,
            label=label,
            marketplace=q.marketplace,
            source=source,
        ))
        return True

    def sample_class(count: int, draw, what: str) -> None:
        made, attempts = 0, 0
        while made < count:
            attempts += 1
            if attempts > 100 * max(count, 1):
                raise SamplingExhaustedError(
                    f"could not sample {count} distinct {what} pairs "
                    f"(got {made}); world too small"
                )
            if draw():
                made += 1

    def draw_positive() -> bool:
        q = multi[int(rng.integers(len(multi)))]
        peers = cell[(q.marketplace, q.category)]
        c = peers[int(rng.integers(len(peers)))]
        if c.product_id == q.product_id:
            return False
        return emit(q, c, 1, "positive")

    def draw_negative() -> bool:
        if confounded and rng.random() < related_negative_fraction:
            q = confounded[int(rng.integers(len(confounded)))]
            partners = cell[(q.marketplace, q.related_category)]
            c = partners[int(rng.integers(len(partners)))]
        else:
            q = world.products[int(rng.integers(len(world.products)))]
            peers = [p for p in world.products if p.marketplace == q.marketplace]
            c = peers[int(rng.integers(len(peers)))]
            if c.category == q.category:
                return False
        source = "related" if world.relation_of(q.product_id, c.product_id) == "related" else "random"
        return emit(q, c, 0, source)

    sample_class(n_pos, draw_positive, "positive")
    sample_class(n_neg, draw_negative, "negative")
    return FunctionalityEvalSet(pairs=pairs, ratio_pos=ratio_pos)


def build_ranking_evalset(
    traffic: list[TrafficRecord], catalog: Catalog, min_impressions: int = 500
) -> RankingEvalSet:
    """Group thresholded traffic by query for NDCG evaluation.

    The impression filter is strict (a record at exactly min_impressions is
    excluded); groups left with fewer than 2 candidates are dropped and
    counted. Candidates sort by id, groups by query id.
    """
    kept: dict[str, list[TrafficRecord]] = defaultdict(list)
    n_dropped_threshold = 0
    for rec in traffic:
        if rec.impressions > min_impressions:
            kept[rec.query_id].append(rec)
        else:
            n_dropped_threshold += 1

    groups: list[RankingGroup] = []
    n_dropped_small = 0
    for query_id in sorted(kept):
        members = sorted(kept[query_id], key=lambda r: r.candidate_id)
        if len(members) < 2:
            n_dropped_small += 1
            continue
        if query_id not in catalog:
            raise DataError(f"ranking group query {query_id!r} missing from catalog")
        ctr = np.array([r.clicks / r.impressions for r in members])
        cvr = np.array([
            r.purchases / r.clicks if r.clicks > 0 else np.nan for r in members
        ])
        pr = np.array([r.purchases / r.impressions for r in members])
        query = catalog.by_id[query_id]
        groups.append(RankingGroup(
            query_id=query_id,
            query_title=query.title,
            marketplace=query.marketplace,
            candidate_ids=[r.candidate_id for r in members],
            candidate_titles=[catalog.by_id[r.candidate_id].title for r in members],
            gains={"ctr": ctr, "cvr": cvr, "pr": pr},
        ))
    if not groups:
        raise DataError(
            f"no ranking groups survive min_impressions > {min_impressions}; "
            "generate a larger world or lower the threshold"
        )
    return RankingEvalSet(
        groups=groups,
        min_impressions=min_impressions,
        n_dropped_threshold=n_dropped_threshold,
        n_dropped_small=n_dropped_small,
    )


def make_embeddings(
    world: World,
    dim: int = 16,
    seed: int | None = None,
    partner_spread: float = 0.4,
) -> EmbeddingTable:
    """Word vectors for every pool token, structured like pretrained text
    embeddings: each category gets one direction shared by its signature
    tokens across languages, common tokens are isotropic noise.

    Partnered (co-viewed) categories sit on nearly parallel directions,
    ``partner_spread`` apart, the way pretrained vectors place frequently
    co-occurring product families near each other. Every pair the traffic
    simulator serves is then close in feature space while an arbitrary
    catalog pair is far. The training code only ever sees the resulting
    file, never the structure.
    """
    if dim < 1:
        raise ConfigError(f"embedding dim must be >= 1, got {dim}")
    if partner_spread < 0:
        raise ConfigError(f"partner_spread must be >= 0, got {partner_spread}")
    cfg = world.config
    rng = rng_for(cfg.seed if seed is None else seed, "embeddings")
    directions: dict[int, np.ndarray] = {}
    for cat in range(cfg.n_categories):
        mate = world.category_partner.get(cat)
        if mate is not None and mate in directions:
            base = directions[mate]
        else:
            base = rng.normal(0.0, 1.0, size=dim) / math.sqrt(dim)
        directions[cat] = base + rng.normal(0.0, partner_spread / math.sqrt(dim), size=dim)
    vectors: dict[str, np.ndarray] = {}
    for (language, cat), tokens in sorted(world.signature_tokens.items()):
        for tok in tokens:
            vectors[tok] = directions[cat] + rng.normal(0.0, 0.25 / math.sqrt(dim), size=dim)
    for language in sorted(world.common_tokens):
        for tok in world.common_tokens[language]:
            vectors[tok] = rng.normal(0.0, 0.6 / math.sqrt(dim), size=dim)
    return EmbeddingTable(dim=dim, vectors=vectors)


def oracle_scorer(ground_truth: GroundTruth):
    """Scores 1.0 for truly substitutable pairs, 0.0 otherwise."""

    def score(pairs) -> np.ndarray:
        return np.array([
            1.0 if ground_truth.substitutable(p.query_id, p.candidate_id) else 0.0
            for p in pairs
        ])

    return score


def true_rate_scorer(world: World, kind: str):
    """Scores pairs by the latent ctr or pr the simulator used (diagnostics)."""
    if kind not in ("ctr", "pr"):
        raise ConfigError(f"kind must be 'ctr' or 'pr', got {kind!r}")

    def score(pairs) -> np.ndarray:
        out = np.empty(len(pairs))
        for i, p in enumerate(pairs):
            ctr, cvr = world.true_rates(p.query_id, p.candidate_id)
            out[i] = ctr if kind == "ctr" else ctr * cvr
        return out

    return score


def save_ground_truth(ground_truth: GroundTruth, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for product_id in sorted(ground_truth.category_of):
            fh.write(json.dumps(
                {"category": ground_truth.category_of[product_id], "product_id": product_id},
                sort_keys=True,
            ) + "\n")


def load_ground_truth(path: str | Path) -> GroundTruth:
    category_of: dict[str, int] = {}
    for lineno, obj in _iter_json_lines(path):
        _require_fields(obj, ("product_id", "category"), path, lineno)
        pid = str(obj["product_id"])
        if pid in category_of:
            raise DataError(f"{path}:{lineno}: duplicate product_id {pid!r}")
        category_of[pid] = int(obj["category"])
    if not category_of:
        raise DataError(f"{path}: empty ground-truth file")
    return GroundTruth(category_of)


def save_hidden_params(world: World, path: str | Path) -> None:
    """Debug-only dump of latent product parameters; training code must
    never read this file."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in sorted(world.products, key=lambda p: p.product_id):
            fh.write(json.dumps({
                "attraction": p.attraction,
                "category": p.category,
                "marketplace": p.marketplace,
                "price": p.price,
                "price_tier": p.price_tier,
                "product_id": p.product_id,
                "related_category": p.related_category,
            }, sort_keys=True) + "\n")
