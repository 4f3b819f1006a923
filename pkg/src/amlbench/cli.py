"""Command-line entry point: ingest, featurize, train-eval, tune, benchmark.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .config import DEFAULTS, METHODS, TUNED, RunConfig, parse_thresholds
from .errors import DataFormatError, NonConvergenceError, TrainingError
from .evaluation import pr_curve, roc_curve
from .graph import format_kv
from .hypertune import default_budget, run_search, space_for
from .nn.checkpoint import save_checkpoint
from .pipeline import (FEATURE_BLOCKS, Dataset, build_features, columns_hash, default_blocks, embedding,
                       manual_features, run_method, validation_objective)

log = logging.getLogger("amlbench")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAIN = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers

def load_run_config(args, method=None) -> RunConfig:
    text = ""
    if getattr(args, "config", None):
        with open(args.config) as fh:
            text = fh.read()
    overrides = {"method": method or getattr(args, "method", None), "seed": getattr(args, "seed", None),
                 "dataset_dir": getattr(args, "dataset_dir", None)}
    if getattr(args, "thresholds", None):
        overrides["thresholds"] = args.thresholds
    try:
        return RunConfig.from_kv(text, **overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def new_run_dir(root, method):
    stamp = time.strftime("%Y%m%d-%H%M%S")
    path = os.path.join(root, f"{stamp}-{method}")
    suffix = 1
    while os.path.exists(path):
        suffix += 1
        path = os.path.join(root, f"{stamp}-{method}-{suffix}")
    os.makedirs(path)
    return path


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _fmt(v):
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return ""
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def write_run(run_dir, ds: Dataset, config: RunConfig, result):
    """Everything needed to replay and audit one method run."""
    extra = {"tool_version": __version__, "manifest_hash": ds.fingerprint, "columns_hash": columns_hash(result.columns)}
    with open(os.path.join(run_dir, "config"), "w") as fh:
        fh.write(config.to_kv(extra))
    with open(os.path.join(run_dir, "manifest"), "w") as fh:
        fh.write(format_kv(ds.manifest))
    result.report.write_csv(os.path.join(run_dir, "metrics.csv"), config.method)
    _write_csv(os.path.join(run_dir, "log.csv"), ["epoch", "train_loss", "val_loss", "val_auc_pr"],
               [[r["epoch"], _fmt(r["train_loss"]), _fmt(r.get("val_loss")), _fmt(r.get("val_auc_pr"))]
                for r in result.log_rows])
    save_checkpoint(os.path.join(run_dir, "checkpoint.npz"), result.state,
                    {"method": config.method, "seed": config.seed, "tool_version": __version__})
    scored = result.test_scores
    _write_csv(os.path.join(run_dir, "scores.csv"), ["node_id", "label", "score"],
               [[int(ds.graph.node_ids[i]), int(y), repr(float(s))]
                for i, y, s in zip(scored.node, scored.label, scored.score)])
    with open(os.path.join(run_dir, "columns.txt"), "w") as fh:
        fh.write("\n".join(result.columns) + "\n")


def write_curves(curve_dir, method, scored):
    os.makedirs(curve_dir, exist_ok=True)
    recall, precision, thr = pr_curve(scored)
    _write_csv(os.path.join(curve_dir, f"{method}_pr.csv"), ["recall", "precision", "threshold"],
               [[repr(float(a)), repr(float(b)), repr(float(c))] for a, b, c in zip(recall, precision, thr)])
    fpr, tpr, thr = roc_curve(scored)
    _write_csv(os.path.join(curve_dir, f"{method}_roc.csv"), ["fpr", "tpr", "threshold"],
               [[repr(float(a)), repr(float(b)), repr(float(c))] for a, b, c in zip(fpr, tpr, thr)])


# ---------------------------------------------------------------------------
# commands

def cmd_ingest(args):
    ds = Dataset.load(args.dataset_dir)
    text = format_kv(ds.manifest)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "manifest"), "w") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_featurize(args):
    config = load_run_config(args)
    blocks = None
    if args.features is not None:
        blocks = [b.strip() for b in args.features.split(",") if b.strip()]
        if not blocks:
            raise UsageError("empty feature selection")
        bad = set(blocks) - set(FEATURE_BLOCKS)
        if bad:
            raise UsageError(f"unknown feature blocks {sorted(bad)}; choose from {', '.join(FEATURE_BLOCKS)}")
    ds = Dataset.load(config.dataset_dir)
    os.makedirs(args.out, exist_ok=True)
    x, columns = build_features(ds, config, cache_dir=os.path.join(args.out, "cache"), blocks=blocks)
    hp = config.resolved()
    blocks = default_blocks(config) if blocks is None else blocks
    written = []
    if "manual" in blocks:
        path = os.path.join(args.out, "manual_features.csv")
        manual_features(ds, hp, config.seed, os.path.join(args.out, "cache")).write_csv(path, ds.graph.node_ids)
        written.append(path)
    for walk in ("deepwalk", "node2vec"):
        if walk in blocks:
            path = os.path.join(args.out, f"{walk}_embedding.csv")
            whp = hp if config.base == walk else {**DEFAULTS, **TUNED[walk]}
            embedding(ds, walk, whp, config.seed, os.path.join(args.out, "cache")).write_csv(path, ds.graph.node_ids)
            written.append(path)
    with open(os.path.join(args.out, "columns.txt"), "w") as fh:
        fh.write("\n".join(columns) + "\n")
    print(f"{len(columns)} columns (hash {columns_hash(columns)}) for {x.shape[0]} nodes")
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_train_eval(args):
    config = load_run_config(args)
    ds = Dataset.load(config.dataset_dir)
    result = run_method(ds, config, cache_dir=os.path.join(args.out, "cache"))
    run_dir = new_run_dir(args.out, config.method)
    write_run(run_dir, ds, config, result)
    print(result.report.format(config.method))
    print(f"run directory: {run_dir}")
    return EXIT_OK


def cmd_tune(args):
    config = load_run_config(args)
    ds = Dataset.load(config.dataset_dir)
    budget = args.trials or default_budget(config.method)
    os.makedirs(args.out, exist_ok=True)
    ledger = os.path.join(args.out, f"{config.method}_trials.jsonl")
    if os.path.exists(ledger):
        os.remove(ledger)  # a fresh search owns its ledger
    objective = validation_objective(ds, config.method, config, cache_dir=os.path.join(args.out, "cache"))
    result = run_search(objective, space_for(config.method), budget, strategy=args.strategy, seed=config.seed,
                        method=config.method, ledger_path=ledger)
    best = RunConfig(config.method, dataset_dir=config.dataset_dir, seed=config.seed, thresholds=config.thresholds,
                     hyperparams={**config.hyperparams, **result.best})
    best_path = os.path.join(args.out, f"{config.method}_best.cfg")
    with open(best_path, "w") as fh:
        fh.write(best.to_kv({"best_val_auc_pr": result.best_record.val_auc_pr,
                             "best_trial": result.best_record.trial_id}))
    print(f"best val AUC-PR {result.best_record.val_auc_pr:.4f} (trial {result.best_record.trial_id} of {budget})")
    print(f"ledger: {ledger}\nbest config: {best_path}")
    return EXIT_OK


def cmd_benchmark(args):
    methods = [m.strip() for m in args.methods.split(",")] if args.methods else list(METHODS)
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise UsageError(f"unknown methods {bad}")
    ds = None
    os.makedirs(args.out, exist_ok=True)
    rows = []
    failed = 0
    for method in methods:
        cfg_path = os.path.join(args.config_dir, f"{method}.cfg") if args.config_dir else None
        args.config = cfg_path if cfg_path and os.path.exists(cfg_path) else None
        config = load_run_config(args, method=method)
        if ds is None:
            ds = Dataset.load(config.dataset_dir)
        try:
            result = run_method(ds, config, cache_dir=os.path.join(args.out, "cache"))
        except (TrainingError, NonConvergenceError, ValueError, FloatingPointError) as exc:
            log.error("%s failed: %s", method, exc)
            rows.append([method, "status", "failed", str(exc)])
            failed += 1
            continue
        write_run(new_run_dir(os.path.join(args.out, "runs"), method), ds, config, result)
        write_curves(os.path.join(args.out, "curves"), method, result.test_scores)
        rows += [[method, name, repr(mean), repr(std)] for _, name, mean, std in result.report.rows(method)]
        print(result.report.format(method))
    _write_csv(os.path.join(args.out, "results.csv"), ["method", "metric", "mean", "std"], rows)
    print(f"results: {os.path.join(args.out, 'results.csv')} ({len(methods) - failed} ok, {failed} failed)")
    return EXIT_OK if failed < len(methods) else EXIT_TRAIN


# ---------------------------------------------------------------------------
# parser

def _thresholds(text):
    try:
        return ",".join(str(t) for t in parse_thresholds(text))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def build_parser():
    parser = _Parser(prog="amlbench", description="Illicit-transaction node classification benchmark.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, method=True):
        p.add_argument("--dataset-dir", default=None, help="directory with the three Elliptic CSV files")
        p.add_argument("--config", default=None, help="flat key = value run config")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=1, help="BLAS / numeric thread cap")
        if method:
            p.add_argument("--method", choices=METHODS, default=None)
            p.add_argument("--thresholds", type=_thresholds, default=None, help="top-k%% list, e.g. 0.1,1,10,p")

    p = sub.add_parser("ingest", help="validate a dataset and print its manifest")
    p.add_argument("--dataset-dir", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("featurize", help="compute manual features and/or embeddings")
    common(p)
    p.add_argument("--features", default=None, help=f"comma list from {','.join(FEATURE_BLOCKS)}")
    p.add_argument("--out", default="features")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train-eval", help="train one method and evaluate it on the test split")
    common(p)
    p.add_argument("--out", default="runs")
    p.set_defaults(func=cmd_train_eval)

    p = sub.add_parser("tune", help="hyperparameter search on validation AUC-PR")
    common(p)
    p.add_argument("--trials", type=int, default=None, help="trial budget (default per method)")
    p.add_argument("--strategy", choices=("random", "tpe-lite"), default="random")
    p.add_argument("--out", default="tuning")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("benchmark", help="run every method and write a consolidated table")
    common(p, method=False)
    p.add_argument("--thresholds", type=_thresholds, default=None)
    p.add_argument("--methods", default=None, help="comma list (default: all)")
    p.add_argument("--config-dir", default=None, help="directory of <method>.cfg tuned configs")
    p.add_argument("--out", default="benchmark")
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    if getattr(args, "trials", None) is not None and args.trials < 1:
        parser.error("--trials must be >= 1")
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except UsageError as exc:
        print(f"amlbench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, FileNotFoundError) as exc:
        print(f"amlbench: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, NonConvergenceError, FloatingPointError) as exc:
        print(f"amlbench: training failed: {exc}", file=sys.stderr)
        return EXIT_TRAIN


if __name__ == "__main__":
    sys.exit(main())
