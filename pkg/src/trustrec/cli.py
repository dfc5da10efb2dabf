"""Command-line interface.

Subcommands: ingest, train, evaluate, gridsearch, ablate, sensitivity,
gradcheck. Exit codes: 0 success, 1 check failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__, data, gradcheck, manifest, search
from .errors import (
    ConfigError,
    ContractError,
    EmptyDatasetError,
    EmptyInputError,
    NonFiniteGradientError,
    ParseError,
    TrustRecError,
)
from .graph import build_graph
from .model import ModelConfig, init_params, load_checkpoint, save_checkpoint
from .train import TrainConfig, evaluate, train, write_history

USAGE_ERRORS = (ConfigError, ParseError, EmptyInputError, EmptyDatasetError,
                FileNotFoundError, NotADirectoryError)
CHECK_ERRORS = (ContractError, NonFiniteGradientError)


def _add_model_flags(p):
    p.add_argument("--d", type=int, default=16, help="embedding size")
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--gamma", type=float, default=0.8,
                   help="fraction of neighbors drawn per layer")
    p.add_argument("--ablate-query", action="store_true")
    p.add_argument("--ablate-sampling", action="store_true")
    p.add_argument("--ablate-attention", action="store_true")
    p.add_argument("--item-link-threshold", type=float, default=0.5)


def _add_train_flags(p):
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--weight-decay", type=float, default=0.0001)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--max-epochs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)


def _model_cfg(args):
    return ModelConfig(
        dim=args.d,
        layers=args.layers,
        gamma=args.gamma,
        ablate_query=args.ablate_query,
        ablate_sampling=args.ablate_sampling,
        ablate_attention=args.ablate_attention,
    )


def _train_cfg(args):
    return TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        weight_decay=args.weight_decay,
        patience=args.patience,
        max_epochs=args.max_epochs,
        seed=args.seed,
    )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="trustrec",
        description="Consistency-aware graph recommender over rating and "
                    "trust edges",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse, filter, split, and store a dataset")
    p.add_argument("--ratings", required=True)
    p.add_argument("--trust", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--splits", default="0.6,0.2,0.2",
                   help="train,val,test fractions")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a model on a stored dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on one split")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--clip", action="store_true",
                   help="clamp predictions to the rating range")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gridsearch", help="hyper-parameter grid search")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--budget", type=int, default=None,
                   help="cap on the number of trials (random subset)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--gammas", default=None, help="comma-separated overrides")
    p.add_argument("--dims", default=None)
    p.add_argument("--lrs", default=None)
    p.add_argument("--batch-sizes", default=None)
    p.add_argument("--layer-counts", default=None)
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("ablate", help="compare the full model to its ablations")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sensitivity", help="vary one hyper-parameter axis")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--axis", choices=("gamma", "d", "lr"), required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of the backward pass")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--nodes", type=int, default=6)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--instances", type=int, default=1,
                   help="run a multi-instance suite instead of one check")
    p.add_argument("--corrupt", default=None, metavar="GROUP",
                   help="testing hook: perturb one group's analytic gradient")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def _parse_fractions(text):
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) != 3:
        raise ConfigError("--splits needs three comma-separated fractions")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"bad split fractions {text!r}") from None


def cmd_ingest(args):
    fractions = _parse_fractions(args.splits)
    rating_recs, trust_recs = data.parse_edges(args.ratings, args.trust)
    ds = data.filter_and_index(rating_recs, trust_recs)
    ds = data.assign_splits(ds, fractions=fractions, seed=args.seed)
    manifest.write_manifest(
        args.out,
        "ingest",
        {"ratings": args.ratings, "trust": args.trust, "splits": list(fractions)},
        artifacts=["nodes.tsv", "ratings.tsv", "social.tsv", "meta.json"],
        seeds={"split": args.seed},
    )
    data.save_dataset(ds, args.out)
    levels = ",".join(str(v) for v in ds.rating_levels)
    print(
        f"users={ds.num_users} items={ds.num_items} "
        f"social_edges={ds.social.shape[0]} rating_edges={ds.ratings.shape[0]} "
        f"rating_levels={levels} relations={ds.num_relations}"
    )
    return 0


def cmd_train(args):
    model_cfg = _model_cfg(args)
    train_cfg = _train_cfg(args)
    if not 0.0 <= args.item_link_threshold <= 1.0:
        raise ConfigError("item_link_threshold must be in [0, 1]")

    ds = data.load_dataset(args.data)
    manifest.write_manifest(
        args.out,
        "train",
        {**vars(model_cfg), **_public_cfg(train_cfg),
         "item_link_threshold": args.item_link_threshold, "data": args.data},
        data_dir=args.data,
        artifacts=["history.tsv", "checkpoint/params.bin", "checkpoint/config.json"],
        seeds={"init": args.seed, "train": args.seed},
    )

    g = build_graph(ds, args.item_link_threshold)
    params = init_params(model_cfg, ds.num_users, ds.num_items,
                         g.num_relations, args.seed)
    result = train(params, model_cfg, train_cfg, g, ds)

    out = Path(args.out)
    write_history(out / "history.tsv", result.history)
    save_checkpoint(result.params, model_cfg, out / "checkpoint",
                    num_users=ds.num_users, num_items=ds.num_items,
                    rating_levels=ds.rating_levels,
                    item_link_threshold=args.item_link_threshold)

    test_rows = data.split_pairs(ds, data.TEST)
    if test_rows.shape[0]:
        report = evaluate(result.params, model_cfg, g, test_rows)
        print(f"test rmse={report.rmse:.6f} mae={report.mae:.6f} "
              f"count={report.count} (best epoch {result.best_epoch})")
    else:
        print(f"no test edges; best epoch {result.best_epoch}")
    return 0


def cmd_evaluate(args):
    ds = data.load_dataset(args.data)
    params, model_cfg, config = load_checkpoint(args.checkpoint)
    g = build_graph(ds, config.get("item_link_threshold", 0.5))
    rows = data.split_pairs(ds, data.SPLIT_CODES[args.split])
    clip = None
    if args.clip:
        clip = (float(min(ds.rating_levels)), float(max(ds.rating_levels)))
    report = evaluate(params, model_cfg, g, rows, clip=clip)
    print(f"{args.split} rmse={report.rmse:.6f} mae={report.mae:.6f} "
          f"count={report.count}")
    return 0


def _parse_values(text, cast):
    return tuple(cast(v) for v in text.split(",") if v.strip())


def cmd_gridsearch(args):
    spec_kw = {}
    if args.gammas:
        spec_kw["gamma_values"] = _parse_values(args.gammas, float)
    if args.dims:
        spec_kw["embedding_sizes"] = _parse_values(args.dims, int)
    if args.lrs:
        spec_kw["learning_rates"] = _parse_values(args.lrs, float)
    if args.batch_sizes:
        spec_kw["batch_sizes"] = _parse_values(args.batch_sizes, int)
    if args.layer_counts:
        spec_kw["layers"] = _parse_values(args.layer_counts, int)
    spec = search.GridSpec(**spec_kw)
    base_model = _model_cfg(args)
    base_train = _train_cfg(args)

    ds = data.load_dataset(args.data)
    manifest.write_manifest(
        args.out,
        "gridsearch",
        {"spec": {k: list(getattr(spec, k)) for k in
                  ("gamma_values", "embedding_sizes", "learning_rates",
                   "batch_sizes", "layers")},
         "budget": args.budget, "workers": args.workers, "data": args.data},
        data_dir=args.data,
        artifacts=["grid_results.tsv"],
        seeds={"grid": args.seed},
    )
    results = search.run_grid(ds, spec, base_model, base_train, seed=args.seed,
                              budget=args.budget, workers=args.workers,
                              item_link_threshold=args.item_link_threshold)

    search.write_grid_tsv(Path(args.out) / "grid_results.tsv", results)
    winner = next((r for r in results if r.status == "ok"), None)
    if winner is None:
        print("no successful trials", file=sys.stderr)
        return 1
    print(f"trials={len(results)} winner={winner.config} "
          f"val_rmse={winner.val.rmse:.6f} test_rmse={winner.test.rmse:.6f}")
    return 0


def cmd_ablate(args):
    ds = data.load_dataset(args.data)
    manifest.write_manifest(
        args.out,
        "ablate",
        {**vars(_model_cfg(args)), **_public_cfg(_train_cfg(args)),
         "data": args.data},
        data_dir=args.data,
        artifacts=["ablation.tsv"],
        seeds={"ablation": args.seed},
    )
    rows = search.run_ablation(ds, _model_cfg(args), _train_cfg(args),
                               seed=args.seed,
                               item_link_threshold=args.item_link_threshold)

    search.write_ablation_tsv(Path(args.out) / "ablation.tsv", rows)
    for r in rows:
        metrics = (f"test_rmse={r.test.rmse:.6f} test_mae={r.test.mae:.6f}"
                   if r.status == "ok" else r.error)
        print(f"{r.config['variant']}: {metrics}")
    return 0


def cmd_sensitivity(args):
    cast = int if args.axis == "d" else float
    values = _parse_values(args.values, cast)
    if not values:
        raise ConfigError("--values must list at least one value")
    ds = data.load_dataset(args.data)
    manifest.write_manifest(
        args.out,
        "sensitivity",
        {"axis": args.axis, "values": list(values), "data": args.data},
        data_dir=args.data,
        artifacts=[f"sensitivity_{args.axis}.tsv"],
        seeds={"sweep": args.seed},
    )
    results = search.run_sensitivity(ds, _model_cfg(args), _train_cfg(args),
                                     args.axis, values, seed=args.seed,
                                     item_link_threshold=args.item_link_threshold)

    search.write_sensitivity_tsv(
        Path(args.out) / f"sensitivity_{args.axis}.tsv", args.axis, results)
    print(f"ran {len(results)} trials over {args.axis}")
    return 0


def cmd_gradcheck(args):
    if args.instances > 1:
        reports = gradcheck.run_suite(args.instances, seed=args.seed)
        worst = max(r.worst for r in reports)
        ok = all(r.passed for r in reports)
        print(f"instances={len(reports)} worst_rel_err={worst:.3e} "
              f"tolerance={gradcheck.DEFAULT_TOLERANCE:g}")
        return 0 if ok else 1

    params, cfg, g, u, t = gradcheck.build_tiny_instance(
        args.seed, dim=args.d, num_nodes=args.nodes, layers=args.layers)
    report = gradcheck.run_check(params, cfg, g, u, t, seed=args.seed,
                                 corrupt=args.corrupt)
    print(f"{'group':<14}{'max_rel_err':>14}{'checked':>10}{'skipped':>10}")
    failed = []
    for grp in report.groups:
        print(f"{grp.name:<14}{grp.max_rel_err:>14.3e}"
              f"{grp.checked:>10}{grp.skipped:>10}")
        if not grp.passed(report.tolerance):
            failed.append(grp.name)
    if failed:
        print(f"FAIL: {', '.join(failed)} above tolerance "
              f"{report.tolerance:g}", file=sys.stderr)
        return 1
    print(f"OK (tolerance {report.tolerance:g})")
    return 0


def _public_cfg(cfg):
    return {k: v for k, v in vars(cfg).items()}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CHECK_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrustRecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
