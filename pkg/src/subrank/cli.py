"""Command-line harness: gen, prepare, train, eval, ablate, score.

Every command is reproducible: outputs are fully determined by the config
file plus the global seed (JSON written with sorted keys, no timestamps).
Exit codes: 0 success, 2 config error, 3 data error, 4 training divergence,
5 undefined metric.
"""

import argparse
import json
import sys
from collections import defaultdict
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import MODEL_CHOICES, RunConfig, load_config
from .crossenc import load_model, save_model
from .crossenc import train as train_crossenc
from .data import (
    Catalog,
    DatasetSplit,
    load_pairs,
    load_traffic,
    save_catalog,
    save_pairs,
    save_traffic,
)
from .embeddings import load_embeddings, save_embeddings
from .errors import (
    ConfigError,
    DataError,
    TrainingDivergedError,
    UndefinedMetricError,
)
from .gbdt import GBDTModel
from .labels import Task
from .metrics import (
    PairInput,
    evaluate,
    load_functionality_evalset,
    save_functionality_evalset,
    save_histogram_tsv,
)
from .pipeline import (
    BASELINE_CELL,
    build_crossenc_vocab,
    crossenc_scorer,
    gbdt_scorer,
    prepare_ablation_cells,
    prepare_dataset,
    table_grid,
    train_gbdt,
)
from .seeding import derive_seed
from .world import (
    build_functionality_evalset,
    build_ranking_evalset,
    generate_world,
    load_ground_truth,
    make_embeddings,
    oracle_scorer,
    save_ground_truth,
    save_hidden_params,
    simulate_traffic,
)

CATALOG_FILE = "catalog.jsonl"
TRAFFIC_FILE = "traffic.jsonl"
GROUND_TRUTH_FILE = "ground_truth.jsonl"
FUNCTIONALITY_FILE = "functionality_eval.jsonl"
HIDDEN_FILE = "hidden_params.jsonl"
EMBEDDINGS_FILE = "embeddings.vec"

NDCG_SIGNALS = ("ctr", "cvr", "pr")


def _require_file(path: Path, hint: str) -> Path:
    if not path.exists():
        raise DataError(f"missing {hint}: {path} (run the upstream command first)")
    return path


def _data_dir(cfg: RunConfig, args) -> Path:
    return Path(cfg.paths.data_dir)


def _run_dir(cfg: RunConfig, args) -> Path:
    return Path(args.out) if getattr(args, "out", None) else Path(cfg.paths.run_dir)


def _load_core_data(data_dir: Path):
    catalog = Catalog.load(_require_file(data_dir / CATALOG_FILE, "catalog"))
    traffic = load_traffic(_require_file(data_dir / TRAFFIC_FILE, "traffic"), catalog)
    return catalog, traffic


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def cmd_gen(cfg: RunConfig, args) -> int:
    out = Path(args.out) if getattr(args, "out", None) else Path(cfg.paths.data_dir)
    out.mkdir(parents=True, exist_ok=True)
    world = generate_world(replace(cfg.world, seed=derive_seed(cfg.seed, "world")))
    traffic = simulate_traffic(world)
    evalset = build_functionality_evalset(
        world,
        n=cfg.gen.functionality_eval_size,
        ratio_pos=cfg.gen.functionality_ratio_pos,
        seed=derive_seed(cfg.seed, "functionality-eval"),
        related_negative_fraction=cfg.gen.related_negative_fraction,
    )
    table = make_embeddings(world, dim=cfg.gen.embedding_dim)

    catalog = world.catalog()
    save_catalog(catalog.records, out / CATALOG_FILE)
    save_traffic(traffic, out / TRAFFIC_FILE)
    save_ground_truth(world.ground_truth(), out / GROUND_TRUTH_FILE)
    save_functionality_evalset(evalset, out / FUNCTIONALITY_FILE)
    save_hidden_params(world, out / HIDDEN_FILE)
    save_embeddings(table, out / EMBEDDINGS_FILE)

    print(
        f"gen: wrote {out}: products={len(catalog)} traffic_records={len(traffic)} "
        f"eval_pairs={len(evalset.pairs)} embedding_tokens={len(table)}"
    )
    return 0


def cmd_prepare(cfg: RunConfig, args) -> int:
    data_dir = _data_dir(cfg, args)
    run_dir = _run_dir(cfg, args)
    catalog, traffic = _load_core_data(data_dir)
    prepared = prepare_dataset(
        traffic,
        catalog,
        cfg.label,
        negative_ratio=cfg.negatives.ratio,
        val_fraction=cfg.split.val_fraction,
        seed=cfg.seed,
    )
    prepared_dir = run_dir / "prepared"
    prepared_dir.mkdir(parents=True, exist_ok=True)
    save_pairs(prepared.split.train, prepared_dir / "train_pairs.jsonl")
    save_pairs(prepared.split.validation, prepared_dir / "val_pairs.jsonl")
    spec = cfg.label.spec
    manifest = {
        "seed": cfg.seed,
        "derived_seeds": {
            "negatives": derive_seed(cfg.seed, "negatives"),
            "split": derive_seed(cfg.seed, "split"),
        },
        "label": {
            "signal": spec.signal.value,
            "transform": spec.transform.value,
            "epsilon": spec.epsilon,
            "task": spec.task.value,
            "min_impressions": cfg.label.min_impressions,
            "negative_label": prepared.negative_label,
        },
        "negative_ratio": cfg.negatives.ratio,
        "val_fraction": cfg.split.val_fraction,
        "counts": {
            "input_traffic": prepared.summary.n_input,
            "below_threshold": prepared.summary.n_below_threshold,
            "undefined_signal": prepared.summary.n_undefined_signal,
            "emitted": prepared.summary.n_emitted,
            "negatives_added": prepared.n_negatives_added,
            "train": len(prepared.split.train),
            "validation": len(prepared.split.validation),
        },
        "query_overlap": len(prepared.split.query_overlap()),
    }
    _write_json(prepared_dir / "prepare_manifest.json", manifest)
    print(
        f"prepare: wrote {prepared_dir}: train={len(prepared.split.train)} "
        f"validation={len(prepared.split.validation)} "
        f"negatives_added={prepared.n_negatives_added} query_overlap=0"
    )
    return 0


def _load_split(run_dir: Path) -> DatasetSplit:
    prepared_dir = run_dir / "prepared"
    train = load_pairs(_require_file(prepared_dir / "train_pairs.jsonl", "prepared train pairs"))
    validation = load_pairs(_require_file(prepared_dir / "val_pairs.jsonl", "prepared val pairs"))
    return DatasetSplit(train=train, validation=validation)


def cmd_train(cfg: RunConfig, args) -> int:
    data_dir = _data_dir(cfg, args)
    run_dir = _run_dir(cfg, args)
    model_kind = args.model or cfg.model
    split = _load_split(run_dir)
    model_dir = run_dir / "model"
    model_dir.mkdir(parents=True, exist_ok=True)

    if model_kind == "gbdt":
        catalog = Catalog.load(_require_file(data_dir / CATALOG_FILE, "catalog"))
        table = load_embeddings(_require_file(data_dir / EMBEDDINGS_FILE, "embeddings"))
        params = cfg.gbdt.params(seed=derive_seed(cfg.seed, "gbdt"))
        objective = cfg.gbdt.resolved_objective(cfg.label.spec.task)
        model = train_gbdt(split, catalog, table, params, objective)
        model.save(model_dir / "gbdt.json")
        history = [
            {"round": i, "train_loss": loss}
            for i, loss in enumerate(model.train_losses)
        ]
        _write_json(model_dir / "history.json", history)
        final = model.train_losses[-1] if model.train_losses else None
        print(
            f"train: gbdt objective={objective} trees={len(model.trees)} "
            f"final_train_loss={final} -> {model_dir}"
        )
    else:
        vocab = build_crossenc_vocab(split, cfg.crossenc.vocab_max_size)
        model_config = cfg.crossenc.model_config(len(vocab))
        train_config = cfg.train.config(cfg.label.spec.task, seed=derive_seed(cfg.seed, "crossenc"))
        model, history = train_crossenc(split, vocab, model_config, train_config)
        save_model(model, vocab, model_dir)
        _write_json(model_dir / "history.json", history)
        final = history[-1]["val_loss"] if history else None
        print(
            f"train: crossenc loss={train_config.loss} epochs={len(history)} "
            f"vocab={len(vocab)} final_val_loss={final} -> {model_dir}"
        )
    return 0


def _detect_model_kind(model_dir: Path) -> str:
    if (model_dir / "gbdt.json").exists():
        return "gbdt"
    if (model_dir / "manifest.json").exists():
        return "crossenc"
    raise DataError(f"no model artifact under {model_dir}; run train first")


def _build_scorer(cfg: RunConfig, args, data_dir: Path, run_dir: Path, catalog: Catalog):
    if getattr(args, "debug_oracle_scorer", False):
        truth = load_ground_truth(_require_file(data_dir / GROUND_TRUTH_FILE, "ground truth"))
        return oracle_scorer(truth), "oracle"
    model_dir = run_dir / "model"
    model_kind = args.model or _detect_model_kind(model_dir)
    if model_kind == "gbdt":
        model = GBDTModel.load(_require_file(model_dir / "gbdt.json", "gbdt model"))
        table = load_embeddings(_require_file(data_dir / EMBEDDINGS_FILE, "embeddings"))
        return gbdt_scorer(model, table, catalog), "gbdt"
    model, vocab = load_model(model_dir)
    return crossenc_scorer(model, vocab), "crossenc"


def cmd_eval(cfg: RunConfig, args) -> int:
    data_dir = _data_dir(cfg, args)
    run_dir = _run_dir(cfg, args)
    catalog, traffic = _load_core_data(data_dir)
    evalset = load_functionality_evalset(
        _require_file(data_dir / FUNCTIONALITY_FILE, "functionality eval set")
    )
    ranking_set = build_ranking_evalset(
        traffic, catalog, min_impressions=cfg.eval.ranking_min_impressions
    )
    scorer, scorer_name = _build_scorer(cfg, args, data_dir, run_dir, catalog)
    report = evaluate(scorer, evalset, ranking_set, bins=cfg.eval.histogram_bins)
    eval_dir = run_dir / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    (eval_dir / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    save_histogram_tsv(report.histogram, eval_dir / "histogram.tsv")
    ndcg = " ".join(f"ndcg_{s}={report.ndcg_by_signal[s]:.4f}" for s in NDCG_SIGNALS)
    print(f"eval: scorer={scorer_name} auprc={report.auprc:.4f} {ndcg} -> {eval_dir}")
    return 0


def _ablation_rows(cfg: RunConfig, args, catalog, traffic):
    model_kind = args.model or cfg.ablate.model
    cells = table_grid(epsilon=cfg.label.spec.epsilon)
    if model_kind == "crossenc":
        cells = [c for c in cells if c.objective != "hinge"]  # no hinge loss there
    prepared = prepare_ablation_cells(
        traffic,
        catalog,
        cells,
        min_impressions=cfg.label.min_impressions,
        negative_ratio=cfg.negatives.ratio,
        val_fraction=cfg.split.val_fraction,
        seed=cfg.seed,
    )
    data_dir = _data_dir(cfg, args)
    evalset = load_functionality_evalset(
        _require_file(data_dir / FUNCTIONALITY_FILE, "functionality eval set")
    )
    ranking_set = build_ranking_evalset(
        traffic, catalog, min_impressions=cfg.eval.ranking_min_impressions
    )
    table = (
        load_embeddings(_require_file(data_dir / EMBEDDINGS_FILE, "embeddings"))
        if model_kind == "gbdt" else None
    )

    rows = []
    for cell in cells:
        split = prepared[cell.name].split
        try:
            if model_kind == "gbdt":
                params = cfg.gbdt.params(seed=derive_seed(cfg.seed, "gbdt"))
                model = train_gbdt(split, catalog, table, params, cell.objective)
                scorer = gbdt_scorer(model, table, catalog)
            else:
                vocab = build_crossenc_vocab(split, cfg.crossenc.vocab_max_size)
                train_config = cfg.train.config(cell.spec.task, seed=derive_seed(cfg.seed, "crossenc"))
                train_config = replace(train_config, loss=cell.objective)
                model, _ = train_crossenc(
                    split, vocab, cfg.crossenc.model_config(len(vocab)), train_config
                )
                scorer = crossenc_scorer(model, vocab)
            report = evaluate(scorer, evalset, ranking_set, bins=cfg.eval.histogram_bins)
            rows.append({
                "cell": cell.name,
                "status": "ok",
                "auprc": report.auprc,
                "ndcg_ctr": report.ndcg_by_signal["ctr"],
                "ndcg_cvr": report.ndcg_by_signal["cvr"],
                "ndcg_pr": report.ndcg_by_signal["pr"],
            })
        except (DataError, ConfigError, TrainingDivergedError, UndefinedMetricError) as exc:
            rows.append({
                "cell": cell.name,
                "status": f"error: {type(exc).__name__}: {exc}",
                "auprc": None, "ndcg_ctr": None, "ndcg_cvr": None, "ndcg_pr": None,
            })

    baseline = next((r for r in rows if r["cell"] == BASELINE_CELL and r["status"] == "ok"), None)
    for row in rows:
        for metric in ("auprc", "ndcg_ctr", "ndcg_cvr", "ndcg_pr"):
            row[f"delta_{metric}"] = (
                row[metric] - baseline[metric]
                if baseline and row[metric] is not None else None
            )
    return model_kind, rows


def cmd_ablate(cfg: RunConfig, args) -> int:
    data_dir = _data_dir(cfg, args)
    run_dir = _run_dir(cfg, args)
    catalog, traffic = _load_core_data(data_dir)
    model_kind, rows = _ablation_rows(cfg, args, catalog, traffic)

    run_dir.mkdir(parents=True, exist_ok=True)
    _write_json(run_dir / "ablation.json", {"model": model_kind, "rows": rows})
    columns = ["cell", "auprc", "ndcg_ctr", "ndcg_cvr", "ndcg_pr",
               "delta_auprc", "delta_ndcg_ctr", "delta_ndcg_cvr", "delta_ndcg_pr",
               "status"]
    with open(run_dir / "ablation.tsv", "w", encoding="utf-8") as fh:
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(
                repr(row[c]) if isinstance(row[c], float) else str(row[c])
                for c in columns
            ) + "\n")
    for row in rows:
        if row["status"] == "ok":
            print(
                f"ablate[{row['cell']}]: auprc={row['auprc']:.4f} "
                f"ndcg_pr={row['ndcg_pr']:.4f} delta_auprc={row['delta_auprc']:+.4f}"
            )
        else:
            print(f"ablate[{row['cell']}]: {row['status']}")
    print(f"ablate: wrote {run_dir / 'ablation.json'} and {run_dir / 'ablation.tsv'}")
    return 0


def cmd_score(cfg: RunConfig, args) -> int:
    data_dir = _data_dir(cfg, args)
    run_dir = _run_dir(cfg, args)
    catalog = Catalog.load(_require_file(data_dir / CATALOG_FILE, "catalog"))
    pairs_path = _require_file(Path(args.pairs), "pairs file")

    from .data import _iter_json_lines, _require_fields

    inputs: list[PairInput] = []
    for lineno, obj in _iter_json_lines(pairs_path):
        _require_fields(obj, ("query_id", "candidate_id"), pairs_path, lineno)
        qid, cid = str(obj["query_id"]), str(obj["candidate_id"])
        for pid in (qid, cid):
            if pid not in catalog:
                raise DataError(f"{pairs_path}:{lineno}: unknown product_id {pid!r}")
        inputs.append(PairInput(
            query_id=qid,
            candidate_id=cid,
            query_title=catalog.by_id[qid].title,
            candidate_title=catalog.by_id[cid].title,
            marketplace=catalog.by_id[qid].marketplace,
        ))
    if not inputs:
        raise DataError(f"{pairs_path}: no pairs to score")

    scorer, scorer_name = _build_scorer(cfg, args, data_dir, run_dir, catalog)
    scores = np.asarray(scorer(inputs), dtype=np.float64)

    by_query: dict[str, list[tuple[str, float]]] = defaultdict(list)
    for pair, score in zip(inputs, scores):
        by_query[pair.query_id].append((pair.candidate_id, float(score)))

    run_dir.mkdir(parents=True, exist_ok=True)
    out_path = run_dir / "scored.jsonl"
    n_rows = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        for query_id in sorted(by_query):
            ranked = sorted(by_query[query_id], key=lambda t: (-t[1], t[0]))
            for rank, (candidate_id, score) in enumerate(ranked[: args.top_k], start=1):
                fh.write(json.dumps({
                    "candidate_id": candidate_id,
                    "query_id": query_id,
                    "rank": rank,
                    "score": score,
                }, sort_keys=True) + "\n")
                n_rows += 1
    print(
        f"score: scorer={scorer_name} queries={len(by_query)} rows={n_rows} -> {out_path}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subrank",
        description="Weak-supervision substitute ranking: synthetic data, "
                    "training, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model_flag=False, oracle_flag=False):
        p.add_argument("--config", default=None, help="YAML run config")
        p.add_argument("--seed", type=int, default=None, help="override global seed")
        p.add_argument("--out", default=None, help="override output directory")
        if model_flag:
            p.add_argument("--model", choices=MODEL_CHOICES, default=None)
        if oracle_flag:
            p.add_argument(
                "--debug-oracle-scorer", action="store_true",
                help="score with ground-truth category equality instead of a model",
            )

    p = sub.add_parser("gen", help="generate the synthetic marketplace files")
    common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("prepare", help="build labeled pairs, negatives, and the split")
    common(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model on the prepared split")
    common(p, model_flag=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run the dual evaluation protocol")
    common(p, model_flag=True, oracle_flag=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the objective grid and emit the comparison table")
    common(p, model_flag=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("score", help="rank candidate pairs from a file")
    common(p, model_flag=True, oracle_flag=True)
    p.add_argument("--pairs", required=True, help="JSONL with query_id and candidate_id")
    p.add_argument("--top-k", type=int, default=10, dest="top_k")
    p.set_defaults(func=cmd_score)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        return args.func(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 4
    except UndefinedMetricError as exc:
        print(f"undefined metric: {exc}", file=sys.stderr)
        return 5
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
