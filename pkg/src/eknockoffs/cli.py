"""Command-line entry point: ``eknockoffs {simulate,select,diagnose,ingest-check}``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources

import numpy as np

from .exceptions import (
    ConfigInvalid,
    DegenerateCovariance,
    DimensionMismatch,
    EmptyAfterCleaning,
    EnvDimensionMismatch,
    FileUnreadable,
    KnockoffError,
    NonPositiveWeight,
    RankDeficientX,
    ResponseMissing,
    TooFewRows,
)
from .extensions import (
    SideInfo,
    derandomized_fixed_x,
    derandomized_mekf,
    derandomized_side_info,
    empirical_kl,
)
from .filter import (
    average_evalues,
    derandomized_knockoffs,
    ebh,
    evalues_from_statistics,
    knockoff_statistics_runs,
    run_streams,
    sharpness_diagnostic,
)
from .harness import ExperimentConfig, dataset_stream, experiment_model, generate_dataset, run_experiment
from .ingest import Dataset, _read_table, clean, load_csv, real_data_pipeline, write_pipeline_outputs
from .knockoffs import (
    FixedXDesign,
    exchangeability_diagnostic,
    sample_knockoff_mx,
    second_order_model,
)
from .numerics import RngStream
from .stats import LcdStatistic

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

# failures of a mode's preconditions or of the user's inputs
USAGE_ERRORS = (
    ConfigInvalid,
    TooFewRows,
    RankDeficientX,
    EnvDimensionMismatch,
    ResponseMissing,
    EmptyAfterCleaning,
    NonPositiveWeight,
    DimensionMismatch,
    DegenerateCovariance,
)


class UsageError(Exception):
    pass


def bundled_config(name="linear_desk.json"):
    return resources.files("eknockoffs").joinpath("configs", name).read_text(encoding="utf-8")


def _dump(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _load_config(args):
    if args.config is None:
        text = bundled_config()
    else:
        try:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigInvalid(f"cannot read config {args.config}: {exc}") from None
    cfg = ExperimentConfig.from_json(text)
    if args.seed is not None:
        cfg = cfg.replace(master_seed=args.seed)
    return cfg


def cmd_simulate(args):
    cfg = _load_config(args)
    result = run_experiment(cfg, workers=args.workers)
    result.write(args.out)
    return EXIT_OK


def _family(y, requested):
    if requested != "auto":
        return requested
    return "logistic" if np.all((y == 0) | (y == 1)) else "gaussian"


def _load_select_data(args):
    header, body = _read_table(args.data)
    header = [h.strip() for h in header]
    group_column = None
    if args.mode == "multienv":
        if not args.env_column:
            raise UsageError("multienv mode needs --env-column")
        group_column = args.env_column
    X, y, names, log, labels = clean(header, body, args.response, args.min_occurrence,
                                     group_column=group_column)
    groups = None
    if labels is not None:
        codes = {lab: i for i, lab in enumerate(sorted(set(labels)))}
        groups = np.array([codes[lab] for lab in labels])
    return Dataset(X, y, names, args.data, log), groups


def _side_info(args, names):
    if not args.side_info:
        raise UsageError(f"{args.mode} mode needs --side-info")
    header, body = _read_table(args.side_info)
    header = [h.strip() for h in header]
    if header[:2] != ["feature_name", "u"]:
        raise UsageError("side-info CSV must have columns feature_name,u")
    try:
        table = {row[0].strip(): float(row[1]) for row in body if row}
    except (ValueError, IndexError):
        raise UsageError("side-info CSV has a malformed row") from None
    missing = [n for n in names if n not in table]
    if missing:
        raise UsageError(f"side info missing for features: {', '.join(missing[:5])}")
    return SideInfo(np.array([table[n] for n in names]))


def cmd_select(args):
    ds, groups = _load_select_data(args)
    family = _family(ds.y, args.family)
    stat = LcdStatistic(family, args.folds, args.grid)
    alpha_kn = args.alpha_ebh / 2 if args.alpha_kn is None else args.alpha_kn
    M, early_stop = args.M, True
    if args.classic:
        M, alpha_kn, early_stop = 1, args.alpha_ebh, False
    seed = args.seed
    if args.mode == "mx":
        model = second_order_model(ds.X)
        sel, e = derandomized_knockoffs(ds.X, ds.y, model, stat, alpha_kn, args.alpha_ebh, M, seed,
                                        args.c, early_stop, args.workers)
    elif args.mode == "fixed_x":
        if family != "gaussian":
            raise UsageError("fixed_x mode needs a continuous response")
        design = FixedXDesign.from_matrix(ds.X)
        sel, e = derandomized_fixed_x(design, ds.y, stat, alpha_kn, args.alpha_ebh, M, seed, args.c,
                                      early_stop, args.workers)
    elif args.mode == "multienv":
        envs = sorted(set(groups.tolist()))
        datasets = [(ds.X[groups == g], ds.y[groups == g]) for g in envs]
        models = [second_order_model(X) for X, _ in datasets]
        mode = "cst" if args.r is None else "pcst"
        sel, e = derandomized_mekf(datasets, models, stat, mode, args.r, alpha_kn, args.alpha_ebh, M, seed,
                                   args.c, early_stop, args.workers)
    else:
        side = _side_info(args, ds.feature_names)
        model = second_order_model(ds.X)
        sel, e = derandomized_side_info(ds.X, ds.y, model, side, args.mode, stat, None, alpha_kn,
                                        args.alpha_ebh, M, seed, args.workers)
    doc = {
        "mode": args.mode,
        "selected": [ds.feature_names[j] for j in sel.selected],
        "selected_index": [int(j) for j in sel.selected],
        "khat": sel.khat,
        "e_avg": [float(v) for v in e.e],
        "feature_names": ds.feature_names,
        "parameters": {
            "alpha_kn": alpha_kn, "alpha_ebh": args.alpha_ebh, "c": args.c, "M": M,
            "early_stop": early_stop, "classic": args.classic, "family": family,
            "folds": args.folds, "grid": args.grid, "r": args.r,
            "data": args.data, "response": args.response, "min_occurrence": args.min_occurrence,
        },
        "seed": seed,
        "cleaning_log": ds.log,
    }
    os.makedirs(args.out, exist_ok=True)
    _dump(doc, os.path.join(args.out, "selection.json"))
    return EXIT_OK


def _diagnose_inputs(args):
    """``(X, y, model_true, config_echo)`` from a data file or a simulation config."""
    if args.data:
        ds = load_csv(args.data, args.response, args.min_occurrence)
        return ds.X, ds.y, None, second_order_model(ds.X), {"data": args.data, "response": args.response}
    cfg = _load_config(args)
    model = experiment_model(cfg)
    X, y, _ = generate_dataset(cfg, dataset_stream(cfg, 0), model)
    return X, y, model, model, cfg.to_dict()


def cmd_diagnose(args):
    X, y, model_true, model, echo = _diagnose_inputs(args)
    family = _family(y, args.family)
    stat = LcdStatistic(family, args.folds, args.grid)
    seed = args.seed if args.seed is not None else 0
    report = {"mode": args.mode, "inputs": echo, "seed": seed}
    if args.mode == "robustness":
        if model_true is None:
            raise UsageError("robustness needs a simulation config (the true law must be known)")
        used = model_true.scaled(args.scale)
        runs = []
        for m in range(1, args.M + 1):
            ko, _, _ = run_streams(seed, m)
            runs.append(sample_knockoff_mx(used, X, ko))
        diag = empirical_kl(model_true, used, X, runs)
        report.update(scale=args.scale, kl=diag.kl.tolist(), kl_max=diag.kl_max.tolist(),
                      epsilon=float(max(diag.kl_max.max(), 0.0)))
    elif args.mode == "sharpness":
        alpha_kn = args.alpha_ebh / 2 if args.alpha_kn is None else args.alpha_kn
        W = knockoff_statistics_runs(X, y, model, stat, args.M, seed, args.workers)
        per_run = evalues_from_statistics(W, alpha_kn)
        runs = [sharpness_diagnostic(ev, ebh(ev, alpha_kn)) for ev in per_run]
        e_avg = average_evalues(per_run)
        report.update(alpha_kn=alpha_kn, alpha_ebh=args.alpha_ebh, runs=runs,
                      averaged=sharpness_diagnostic(e_avg, ebh(e_avg, args.alpha_ebh)))
    else:
        Xt = sample_knockoff_mx(model, X, run_streams(seed, 1)[0])
        feats = [exchangeability_diagnostic(X, Xt, j, args.z) for j in range(X.shape[1])]
        report.update(features=feats, flagged=[f["feature"] for f in feats if f["flagged"]])
    os.makedirs(args.out, exist_ok=True)
    _dump(report, os.path.join(args.out, f"diagnose_{args.mode}.json"))
    return EXIT_OK


def cmd_ingest_check(args):
    ds = load_csv(args.data, args.response, args.min_occurrence)
    doc = {
        "data": args.data,
        "response": args.response,
        "rows": int(ds.X.shape[0]),
        "features": int(ds.X.shape[1]),
        "feature_names": ds.feature_names,
        "cleaning_log": ds.log,
    }
    os.makedirs(args.out, exist_ok=True)
    _dump(doc, os.path.join(args.out, "ingest.json"))
    if args.reruns > 0:
        alpha_kn = args.alpha_ebh / 2 if args.alpha_kn is None else args.alpha_kn
        summary = real_data_pipeline(ds, alpha_kn, args.alpha_ebh, args.M, args.reruns,
                                     args.seed if args.seed is not None else 0, workers=args.workers)
        params = {"alpha_kn": alpha_kn, "alpha_ebh": args.alpha_ebh, "M": args.M, "reruns": args.reruns,
                  "seed": args.seed, "data": args.data, "response": args.response}
        write_pipeline_outputs(summary, params, args.out)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="eknockoffs", description="Derandomized knockoffs with e-values.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config file)")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--out", default="out", help="output directory")

    def data_args(p, required):
        p.add_argument("--data", required=required, help="CSV file with a header row")
        p.add_argument("--response", default="y", help="name of the response column")
        p.add_argument("--min-occurrence", type=int, default=3)

    def proc_args(p):
        p.add_argument("--alpha-kn", type=float, default=None, help="default: alpha_ebh / 2")
        p.add_argument("--alpha-ebh", type=float, default=0.1)
        p.add_argument("--M", type=int, default=50)
        p.add_argument("--family", choices=("auto", "gaussian", "logistic"), default="auto")
        p.add_argument("--folds", type=int, default=10)
        p.add_argument("--grid", type=int, default=100)

    p = sub.add_parser("simulate", help="run a simulation experiment from a JSON config")
    p.add_argument("--config", default=None, help="JSON config (default: bundled linear_desk.json)")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("select", help="derandomized selection on a CSV dataset")
    data_args(p, True)
    proc_args(p)
    p.add_argument("--mode", choices=("mx", "fixed_x", "multienv", "weighted", "adaptive"), default="mx")
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--classic", action="store_true", help="single run, alpha_kn = alpha_ebh, no early stop")
    p.add_argument("--env-column", default=None, help="environment label column (multienv)")
    p.add_argument("--r", type=int, default=None, help="partial consistency level (multienv)")
    p.add_argument("--side-info", default=None, help="CSV with columns feature_name,u")
    common(p)
    p.set_defaults(func=cmd_select, seed=0)

    p = sub.add_parser("diagnose", help="robustness, sharpness or exchangeability report")
    data_args(p, False)
    proc_args(p)
    p.add_argument("--config", default=None)
    p.add_argument("--mode", choices=("robustness", "sharpness", "exchangeability"), required=True)
    p.add_argument("--scale", type=float, default=1.0, help="covariance scale of the sampling model")
    p.add_argument("--z", type=float, default=4.0, help="flag threshold in standard errors")
    common(p)
    p.set_defaults(func=cmd_diagnose, M=10)

    p = sub.add_parser("ingest-check", help="load and clean a CSV; optionally rerun both procedures")
    data_args(p, True)
    p.add_argument("--reruns", type=int, default=0)
    p.add_argument("--alpha-kn", type=float, default=None)
    p.add_argument("--alpha-ebh", type=float, default=0.1)
    p.add_argument("--M", type=int, default=50)
    common(p)
    p.set_defaults(func=cmd_ingest_check)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except (UsageError, *USAGE_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileUnreadable, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (KnockoffError, ArithmeticError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
