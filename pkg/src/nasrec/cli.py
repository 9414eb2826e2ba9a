"""Command-line interface: prepare, train, eval, recommend, sweep, synth.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure. All commands are deterministic given their config and seed; the
only parallelism knob (--threads) currently falls back to the sequential
reference path.
"""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import train_bpr_mf
from .config import OUTPUT_ROOT_ENV, RunConfig, load_config, write_resolved_config
from .data import (DatasetSplit, InteractionSet, binarize_relevance,
                   dataset_density_percent, load_interactions, load_social_graph,
                   read_id_map, split, write_id_map, write_interactions)
from .errors import ConfigError, DataError, EvalError, NasrecError, ParseError, \
    SnapshotError, TrainingError
from .evaluation import evaluate, rank_items, write_report_csv, write_report_json
from .snapshot import load_model, save_model
from .training import mf_pretrain, pretrain_shallow_then_deepen, write_epoch_log
from .synth import SyntheticSpec, generate, write_dataset

log = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """Parser whose usage errors map to exit code 1 instead of argparse's 2."""

    def error(self, message: str):
        raise ConfigError(f"{self.prog}: {message}")


def _warn_threads(threads: int) -> None:
    if threads > 1:
        log.warning("--threads %d requested; running the sequential reference path",
                    threads)


def _resolve_out(path_str: str) -> Path:
    """Root relative output paths under $NASREC_OUT_ROOT when it is set."""
    root = os.environ.get(OUTPUT_ROOT_ENV)
    path = Path(path_str)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


def _load_prepared(cfg: RunConfig) -> tuple[DatasetSplit, "object"]:
    """Load split files, id maps, and (for social models) the graph."""
    if cfg.data_dir is None:
        raise ConfigError("config needs 'data_dir' pointing at a prepared dataset")
    base = Path(cfg.data_dir)
    user_map = read_id_map(base / "users.map")
    item_map = read_id_map(base / "items.map")
    parts = {}
    for name in ("train", "val", "test"):
        parts[name] = load_interactions(base / f"{name}.{cfg.format}", cfg.format,
                                        user_map=user_map, item_map=item_map)
    data = DatasetSplit(train=parts["train"], validation=parts["val"],
                        test=parts["test"], seed=cfg.train.seed)
    graph = None
    if cfg.model in ("nas", "nas_star"):
        if cfg.graph is None:
            raise ConfigError(f"model '{cfg.model}' needs a 'graph' file in the config")
        graph = load_social_graph(cfg.graph, user_map, cfg.format)
    return data, graph


def cmd_prepare(args) -> int:
    out = _resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = load_interactions(args.ratings, args.format)
    parts = split(data, args.train_frac, args.val_frac, args.seed)
    edges = 0
    if args.graph:
        graph = load_social_graph(args.graph, data.user_map, args.format)
        edges = graph.num_edges
    for name, subset in (("train", parts.train), ("val", parts.validation),
                         ("test", parts.test)):
        write_interactions(out / f"{name}.{args.format}", subset, args.format)
    write_id_map(out / "users.map", data.user_map)
    write_id_map(out / "items.map", data.item_map)
    density = dataset_density_percent(len(data), data.n, data.m)
    stats = {
        "users": data.n, "items": data.m, "ratings": len(data), "edges": edges,
        "density_percent": density, "seed": args.seed,
        "train_frac": args.train_frac, "val_frac": args.val_frac,
        "sizes": {"train": len(parts.train), "val": len(parts.validation),
                  "test": len(parts.test)},
    }
    (out / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n",
                                    encoding="utf-8")
    print(f"users={data.n} items={data.m} ratings={len(data)} edges={edges} "
          f"density={density:.4f}%")
    print(f"split sizes: train={len(parts.train)} val={len(parts.validation)} "
          f"test={len(parts.test)} (seed={args.seed})")
    return 0


def _train_model(cfg: RunConfig, data: DatasetSplit, graph):
    tc = cfg.train
    if cfg.model == "bpr_mf":
        return train_bpr_mf(tc, data.train, data.validation)
    factors = mf_pretrain(data.train, tc.d, tc.mf_epochs, tc.mf_lr, tc.mf_reg, tc.seed)
    return pretrain_shallow_then_deepen(tc, data, graph, factors,
                                        attention=(cfg.model == "nas"))


def cmd_train(args) -> int:
    cfg = load_config(args.config, _config_overrides(args))
    _warn_threads(cfg.threads)
    out = cfg.resolved_out_dir()
    out.mkdir(parents=True, exist_ok=True)
    data, graph = _load_prepared(cfg)
    result = _train_model(cfg, data, graph)
    save_model(out / "snapshot.bin", result.model)
    write_epoch_log(out / "epochs.csv", result.log)
    write_resolved_config(out / "resolved_config.json", cfg)
    best = "final epoch" if result.best_epoch is None else f"epoch {result.best_epoch}"
    print(f"trained {cfg.model}: snapshot from {best} -> {out / 'snapshot.bin'}")
    return 0


def _sibling(path: Path, name: str, override: str | None) -> Path:
    return Path(override) if override else path.parent / name


def _load_eval_inputs(args):
    test_path = Path(args.test)
    fmt = args.format
    user_map = read_id_map(_sibling(test_path, "users.map", args.user_map))
    item_map = read_id_map(_sibling(test_path, "items.map", args.item_map))
    test = load_interactions(test_path, fmt, user_map=user_map, item_map=item_map)
    train_path = _sibling(test_path, f"train.{fmt}", args.train)
    train = load_interactions(train_path, fmt, user_map=user_map, item_map=item_map)
    return user_map, item_map, train, test


def _check_shapes(model, user_map, item_map) -> None:
    n, m = model.factors.n, model.factors.m
    if n != len(user_map) or m != len(item_map):
        raise DataError(
            f"snapshot was trained on {n} users x {m} items but the dataset maps "
            f"have {len(user_map)} users x {len(item_map)} items")


def _relevance_labels(choice: str, test: InteractionSet, train: InteractionSet,
                      fmt: str, test_path: Path):
    if choice == "test":
        return binarize_relevance(test)
    if choice == "train":
        return binarize_relevance(test, mean_over=train)
    sets = [train, test]
    val_path = test_path.parent / f"val.{fmt}"
    if val_path.exists():
        sets.append(load_interactions(val_path, fmt, user_map=train.user_map,
                                      item_map=train.item_map))
    merged = InteractionSet(
        users=np.concatenate([s.users for s in sets]),
        items=np.concatenate([s.items for s in sets]),
        ratings=np.concatenate([s.ratings for s in sets]),
        n=train.n, m=train.m, user_map=train.user_map, item_map=train.item_map)
    return binarize_relevance(test, mean_over=merged)


def cmd_eval(args) -> int:
    _warn_threads(args.threads)
    model = load_model(args.snapshot)
    user_map, item_map, train, test = _load_eval_inputs(args)
    _check_shapes(model, user_map, item_map)
    labels = _relevance_labels(args.relevance_mean, test, train, args.format,
                               Path(args.test))
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    report = evaluate(model, labels, train.positive_items(), num_items=model.factors.m,
                      top_n=args.n, runs=args.runs, seeds=seeds)
    out = _resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tag = getattr(model, "tag", "model")
    write_report_csv(out / "report.csv", report, tag, args.train_frac)
    write_report_json(out / "report.json", report, tag, args.train_frac)
    print(f"{tag}: recall@{report.top_n}={report.recall_mean:.6f} "
          f"(std {report.recall_std:.6f}) ndcg@{report.top_n}={report.ndcg_mean:.6f} "
          f"(std {report.ndcg_std:.6f}) over {report.runs} runs; "
          f"{report.evaluated_users} users evaluated, {report.skipped_users} skipped")
    return 0


def cmd_recommend(args) -> int:
    model = load_model(args.snapshot)
    train_path = Path(args.train)
    user_map = read_id_map(_sibling(train_path, "users.map", args.user_map))
    item_map = read_id_map(_sibling(train_path, "items.map", args.item_map))
    _check_shapes(model, user_map, item_map)
    train = load_interactions(train_path, args.format, user_map=user_map,
                              item_map=item_map)
    if args.user not in user_map.to_index:
        raise DataError(f"unknown user id '{args.user}'")
    user = user_map.to_index[args.user]
    exclude = train.positive_items().get(user, set())
    candidates = np.array([i for i in range(model.factors.m) if i not in exclude],
                          dtype=np.int64)
    ranked = rank_items(model, user, candidates, seed=args.seed)
    scores = model.score_items(user, ranked, seed=args.seed)
    for item, score in list(zip(ranked, scores))[:args.n]:
        print(f"{item_map.originals[int(item)]}\t{float(score):.6f}")
    return 0


def _parse_grid(raw: str | None, fallback: int) -> list[int]:
    if not raw:
        return [fallback]
    try:
        values = [int(tok) for tok in raw.split(",") if tok]
    except ValueError as exc:
        raise ConfigError(f"grid values must be integers: {raw!r}") from exc
    if not values:
        raise ConfigError("grid must be nonempty")
    return values


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, _config_overrides(args))
    _warn_threads(cfg.threads)
    out = cfg.resolved_out_dir()
    out.mkdir(parents=True, exist_ok=True)
    data, graph = _load_prepared(cfg)
    grid_d = _parse_grid(args.grid_d, cfg.train.d)
    grid_h = _parse_grid(args.grid_h, cfg.train.h)
    grid_neg = _parse_grid(args.grid_neg, cfg.train.neg_per_pos)
    val_labels = binarize_relevance(data.validation)
    train_pos = data.train.positive_items()
    rows = []
    for d, h, neg in itertools.product(grid_d, grid_h, grid_neg):
        cell_cfg = dataclasses.replace(cfg, train=dataclasses.replace(
            cfg.train, d=d, h=h, neg_per_pos=neg))
        try:
            result = _train_model(cell_cfg, data, graph)
            report = evaluate(result.model, val_labels, train_pos,
                              num_items=data.train.m, top_n=cfg.eval_top_n,
                              runs=1, seeds=[cfg.train.seed])
            rows.append({"d": d, "h": h, "neg_per_pos": neg, "status": "ok",
                         f"recall@{cfg.eval_top_n}": round(report.recall_mean, 6),
                         f"ndcg@{cfg.eval_top_n}": round(report.ndcg_mean, 6)})
        except NasrecError as exc:
            log.error("sweep cell (d=%d, h=%d, neg=%d) failed: %s", d, h, neg, exc)
            rows.append({"d": d, "h": h, "neg_per_pos": neg, "status": "error",
                         f"recall@{cfg.eval_top_n}": "",
                         f"ndcg@{cfg.eval_top_n}": ""})
    header = ["d", "h", "neg_per_pos", "status",
              f"recall@{cfg.eval_top_n}", f"ndcg@{cfg.eval_top_n}"]
    lines = [",".join(header)]
    lines += [",".join(str(row[col]) for col in header) for row in rows]
    (out / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "sweep.json").write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
    print(f"swept {len(rows)} cells -> {out / 'sweep.csv'}")
    return 0


def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        n=args.users, m=args.items, d_true=args.d_true,
        friends_per_user=args.friends, influential_per_user=args.influential,
        influence_strength=args.alpha, rating_noise=args.noise,
        ratings_per_user=args.ratings_per_user, seed=args.seed)
    paths = write_dataset(generate(spec), _resolve_out(args.out))
    for name, path in sorted(paths.items()):
        print(f"{name}: {path}")
    return 0


def _config_overrides(args) -> dict:
    keys = ("model", "d", "h", "k_max", "neg_per_pos", "batch_size", "lr",
            "epochs", "seed", "out_dir", "threads")
    return {k: getattr(args, k, None) for k in keys}


def _add_config_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model", choices=("nas", "nas_star", "bpr_mf"))
    parser.add_argument("--d", type=int)
    parser.add_argument("--h", type=int)
    parser.add_argument("--k-max", dest="k_max", type=int)
    parser.add_argument("--neg-per-pos", dest="neg_per_pos", type=int)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", dest="out_dir")
    parser.add_argument("--threads", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nasrec",
                     description="Attention-weighted social recommender toolkit")
    parser.add_argument("--version", action="version", version=f"nasrec {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="split a ratings file and persist id maps")
    p.add_argument("--ratings", required=True)
    p.add_argument("--graph")
    p.add_argument("--format", choices=("tsv", "csv"), default="tsv")
    p.add_argument("--train-frac", type=float, default=0.75)
    p.add_argument("--val-frac", type=float, default=0.10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="pretrain factors and train a model")
    p.add_argument("--config", required=True)
    _add_config_overrides(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="rank test items and report recall/NDCG")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--train", help="train split (default: sibling train.<fmt>)")
    p.add_argument("--user-map", dest="user_map")
    p.add_argument("--item-map", dest="item_map")
    p.add_argument("--format", choices=("tsv", "csv"), default="tsv")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--seeds", help="comma-separated run seeds (default 0..runs-1)")
    p.add_argument("--relevance-mean", choices=("test", "train", "all"), default="test")
    p.add_argument("--train-frac", dest="train_frac", type=float)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("recommend", help="print the top-N items for one user")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--user", required=True, help="original user id")
    p.add_argument("--train", required=True, help="train split for exclusions")
    p.add_argument("--user-map", dest="user_map")
    p.add_argument("--item-map", dest="item_map")
    p.add_argument("--format", choices=("tsv", "csv"), default="tsv")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("sweep", help="grid over (d, h, negatives), eval on validation")
    p.add_argument("--config", required=True)
    p.add_argument("--grid-d", dest="grid_d")
    p.add_argument("--grid-h", dest="grid_h")
    p.add_argument("--grid-neg", dest="grid_neg")
    _add_config_overrides(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="generate a planted-influence dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--users", type=int, default=300)
    p.add_argument("--items", type=int, default=500)
    p.add_argument("--d-true", dest="d_true", type=int, default=8)
    p.add_argument("--friends", type=int, default=10)
    p.add_argument("--influential", type=int, default=5)
    p.add_argument("--alpha", type=float, default=0.8)
    p.add_argument("--noise", type=float, default=0.25)
    p.add_argument("--ratings-per-user", dest="ratings_per_user", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ParseError, DataError, SnapshotError, EvalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
