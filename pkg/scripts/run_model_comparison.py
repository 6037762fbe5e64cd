#!/usr/bin/env python3
"""Head-to-head comparison of the two model families on one benchmark seed.

Trains a GBDT over pooled title embeddings and a from-scratch transformer
cross-encoder over raw title tokens on the same prepared pairs, then scores
both against the same functionality and ranking sets. Defaults use a
reduced world (10 categories x 10 products) so the transformer finishes in
a few minutes on one core; pass --categories 40 --products 25 for the full
benchmark scale if you have the time budget.

    python3 scripts/run_model_comparison.py --seed 0 --epochs 10 \
        --out runs/model_comparison
"""

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from subrank.crossenc import CrossEncoderConfig, TrainConfig
from subrank.crossenc import train as train_crossenc
from subrank.gbdt import GBDTParams
from subrank.labels import LabelConfig, LabelSpec, Signal, Task, Transform
from subrank.metrics import evaluate
from subrank.pipeline import (
    build_crossenc_vocab,
    crossenc_scorer,
    gbdt_scorer,
    prepare_dataset,
    train_gbdt,
)
from subrank.seeding import derive_seed
from subrank.world import (
    WorldConfig,
    build_functionality_evalset,
    build_ranking_evalset,
    generate_world,
    make_embeddings,
    simulate_traffic,
)

PR_LOG = LabelConfig(
    spec=LabelSpec(signal=Signal.PR, transform=Transform.LOG, epsilon=1e-4,
                   task=Task.REGRESSION),
    min_impressions=250,
)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--categories", type=int, default=10)
    parser.add_argument("--products", type=int, default=10)
    parser.add_argument("--embedding-dim", type=int, default=16)
    parser.add_argument("--eval-size", type=int, default=1000)
    parser.add_argument("--epochs", type=int, default=10)
    parser.add_argument("--d-model", type=int, default=32)
    parser.add_argument("--n-layers", type=int, default=2)
    parser.add_argument("--max-len", type=int, default=16)
    parser.add_argument("--out", type=Path, default=Path("runs/model_comparison"))
    args = parser.parse_args(argv)

    seed = args.seed
    world = generate_world(replace(
        WorldConfig(n_categories=args.categories, products_per_category=args.products),
        seed=derive_seed(seed, "world"),
    ))
    catalog = world.catalog()
    traffic = simulate_traffic(world)
    feval = build_functionality_evalset(
        world, args.eval_size, seed=derive_seed(seed, "functionality-eval")
    )
    ranking_set = build_ranking_evalset(traffic, catalog, min_impressions=500)
    prepared = prepare_dataset(traffic, catalog, PR_LOG, seed=seed)
    split = prepared.split
    print(f"world: {len(catalog)} products, {len(split.train)} train pairs, "
          f"{len(split.validation)} val pairs")

    rows = []

    started = time.perf_counter()
    table = make_embeddings(world, dim=args.embedding_dim)
    gbdt = train_gbdt(
        split, catalog, table,
        GBDTParams(n_trees=100, max_depth=4, min_samples_leaf=20,
                   learning_rate=0.1, seed=derive_seed(seed, "gbdt")),
        objective="mse",
    )
    report = evaluate(gbdt_scorer(gbdt, table, catalog), feval, ranking_set)
    rows.append({
        "model": "gbdt",
        "auprc": report.auprc,
        "ndcg_pr": report.ndcg_by_signal["pr"],
        "ndcg_ctr": report.ndcg_by_signal["ctr"],
        "seconds": round(time.perf_counter() - started, 1),
    })
    print(f"gbdt: auprc={report.auprc:.4f} "
          f"ndcg_pr={report.ndcg_by_signal['pr']:.4f} ({rows[-1]['seconds']}s)")

    started = time.perf_counter()
    vocab = build_crossenc_vocab(split)
    model_config = CrossEncoderConfig(
        vocab_size=len(vocab), d_model=args.d_model, n_heads=4,
        n_layers=args.n_layers, d_ff=2 * args.d_model, max_len=args.max_len,
        dropout_rate=0.1,
    )
    train_config = TrainConfig(
        batch_size=64, epochs=args.epochs, learning_rate=1e-3,
        loss="mse", seed=derive_seed(seed, "crossenc"),
    )
    encoder, history = train_crossenc(split, vocab, model_config, train_config)
    report = evaluate(crossenc_scorer(encoder, vocab), feval, ranking_set)
    rows.append({
        "model": "crossenc",
        "auprc": report.auprc,
        "ndcg_pr": report.ndcg_by_signal["pr"],
        "ndcg_ctr": report.ndcg_by_signal["ctr"],
        "seconds": round(time.perf_counter() - started, 1),
    })
    final_val = history[-1]["val_loss"] if history else float("nan")
    print(f"crossenc: auprc={report.auprc:.4f} "
          f"ndcg_pr={report.ndcg_by_signal['pr']:.4f} "
          f"val_loss={final_val:.4f} ({rows[-1]['seconds']}s)")

    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "comparison.json").write_text(
        json.dumps({"seed": seed, "rows": rows, "history": history},
                   indent=2, sort_keys=True) + "\n"
    )
    print(f"\n{'model':<10} {'auprc':>8} {'ndcg_pr':>8} {'seconds':>8}")
    for row in rows:
        print(f"{row['model']:<10} {row['auprc']:>8.4f} {row['ndcg_pr']:>8.4f} "
              f"{row['seconds']:>8}")
    print(f"\nwrote {args.out / 'comparison.json'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
