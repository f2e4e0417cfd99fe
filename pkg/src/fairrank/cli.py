"""Command line entry point: ``fairrank <command> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import bounds
from .data import DatasetError, SyntheticConfig, generate_synthetic, load_dataset, save_dataset
from .metrics import FairnessKind
from .rerank import max_list_length, min_protected_table, rerank_pipeline
from .sweep import (ConfigError, SweepError, emit_outputs, evaluate_model, load_sweep_config,
                    parse_config_text, run_sweep, sweep_summaries)
from .training import TrainConfig, TrainingError, load_model, save_model, train

EVAL_COLUMNS = ("k", "ndcg", "precision", "gamma_eop", "gamma_dp", "gamma_eod")


def _record_line(record: dict, columns) -> str:
    out = []
    for c in columns:
        v = record[c]
        out.append(str(v) if isinstance(v, int) else f"{v:.9g}")
    return ",".join(out)


def cmd_generate(args) -> int:
    config = SyntheticConfig(
        n_queries=args.n_queries, items_per_query=args.items_per_query,
        latent_dim=args.latent_dim, duplicate_prob=args.duplicate_prob,
        protected_rate=args.protected_rate, group_bias=args.group_bias, seed=args.seed,
    )
    save_dataset(generate_synthetic(config), args.out)
    return 0


def cmd_train(args) -> int:
    data = load_dataset(args.data)
    config = TrainConfig(
        alpha=args.alpha, kind=args.fairness, scope=args.scope, optimizer=args.optimizer,
        learning_rate=args.lr if args.lr is not None else (0.003 if args.optimizer == "gd" else 1e-4),
        steps=args.steps, epochs=args.epochs, queries_per_batch=args.batch_queries,
        docs_per_query_cap=args.batch_docs, seed=args.seed, intercept=args.intercept,
    )
    model, trace = train(data, config)
    save_model(model, args.model_out)
    if args.trace_out:
        trace.to_csv(args.trace_out)
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.model)
    data = load_dataset(args.data)
    record = evaluate_model(model, data, args.k, strict=args.fairness)
    if args.header:
        print(",".join(EVAL_COLUMNS))
    print(_record_line(record, EVAL_COLUMNS))
    return 0


def cmd_rerank(args) -> int:
    model = load_model(args.model)
    data = load_dataset(args.data)
    table = min_protected_table(max_list_length(data), args.p, args.alpha_q)
    result = rerank_pipeline(model, data, table, args.k)
    columns = EVAL_COLUMNS + ("infeasible_queries",)
    if args.header:
        print(",".join(columns))
    print(_record_line(result.metrics, columns))
    return 0


def cmd_bound(args) -> int:
    inputs = bounds.BoundInputs(args.n, args.m, args.vc, args.p_min, args.q_min, args.delta)
    print(f"{bounds.complexity_term(inputs, args.kind, args.log_constant):.9g}")
    return 0


_GAP_KEYS = {
    "n_queries": int, "items_per_query": int, "latent_dim": int, "duplicate_prob": float,
    "protected_rate": float, "group_bias": float, "seed": int,
    "kind": str, "feature": int, "threshold": float, "vc_dim": int, "reference_items": int,
}


def cmd_gap_experiment(args) -> int:
    try:
        raw = parse_config_text(Path(args.config).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(str(exc)) from exc
    unknown = sorted(set(raw) - set(_GAP_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        values = {k: _GAP_KEYS[k](v) for k, v in raw.items()}
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    gen_fields = {k: values[k] for k in SyntheticConfig.__dataclass_fields__ if k in values}
    gen = SyntheticConfig(**gen_fields)
    selector = bounds.ThresholdSelector(values.get("feature", 0), values.get("threshold", 0.0))
    report = bounds.gap_experiment(
        gen, selector, values.get("kind", "eop"), args.trials, args.delta,
        vc_dim=values.get("vc_dim"), reference_items=values.get("reference_items", 10 ** 6),
    )
    bounds.write_gap_csv(report, args.out)
    print(f"kind={report.kind.value} gap_quantile={report.gap_quantile:.9g} "
          f"bound={report.bound:.9g} degenerate={report.n_degenerate}")
    return 0


def cmd_sweep(args) -> int:
    data_path, config = load_sweep_config(args.config)
    out_dir = args.out_dir or config.out_dir
    if not out_dir:
        raise ConfigError("no output directory (set out_dir in the config or pass --out-dir)")
    try:
        dataset = load_dataset(data_path)
    except (OSError, DatasetError) as exc:
        raise ConfigError(f"cannot load data: {exc}") from exc
    result = run_sweep(dataset, config)
    emit_outputs(result.table, sweep_summaries(result.table, config), out_dir, result.runs)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairrank", description="Fairness-regularized learning to rank.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("--n-queries", type=int, required=True)
    p.add_argument("--items-per-query", type=int, required=True)
    p.add_argument("--latent-dim", type=int, default=4)
    p.add_argument("--duplicate-prob", type=float, default=0.0)
    p.add_argument("--protected-rate", type=float, default=0.3)
    p.add_argument("--group-bias", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a linear ranker")
    p.add_argument("--data", required=True)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--fairness", choices=[k.value for k in FairnessKind], default="eop")
    p.add_argument("--scope", choices=["amortized", "per-query", "per_query"], default="amortized")
    p.add_argument("--optimizer", choices=["gd", "sgd"], default="gd")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--steps", type=int, default=1500)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch-queries", type=int, default=100)
    p.add_argument("--batch-docs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--intercept", action="store_true")
    p.add_argument("--model-out", required=True)
    p.add_argument("--trace-out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model at cutoff k")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--fairness", choices=[k.value for k in FairnessKind], default="eop")
    p.add_argument("--header", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rerank", help="evaluate a model after fair top-k re-ranking")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--alpha-q", type=float, default=0.1)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--header", action="store_true")
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("bound", help="print a generalization-bound complexity term")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--vc", type=int, required=True)
    p.add_argument("--p-min", type=float, required=True)
    p.add_argument("--q-min", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--kind", choices=[k.value for k in FairnessKind], default="eop")
    p.add_argument("--log-constant", type=float, default=None)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("gap-experiment", help="Monte-Carlo check of the fairness generalization gap")
    p.add_argument("--config", required=True)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gap_experiment)

    p = sub.add_parser("sweep", help="run a regularization-strength sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"fairrank: config error: {exc}", file=sys.stderr)
        return 1
    except (DatasetError, ValueError, OSError) as exc:
        print(f"fairrank: error: {exc}", file=sys.stderr)
        return 1
    except (SweepError, TrainingError, RuntimeError) as exc:
        print(f"fairrank: runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
