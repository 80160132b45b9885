"""Command-line front end: synth, train, predict, eval, cv, experiment.

Exit codes: 0 success, 1 rejected input (single-line diagnostic on stderr),
2 unexpected internal failure.  Every run prints its resolved configuration
as one ``config`` line; human-readable numbers use 4 decimals while files
written via ``--out`` keep full precision.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .adaptive import (BIAS_MODES, fit_adaptive_svm, fit_adaptive_svm_plus)
from .data_io import (SynthConfig, TripletDataset, load_dataset, load_model,
                      make_synthetic, save_dataset, save_model)
from .errors import LupiMarginError
from .harness import (PROTOCOL_MODES, SOURCE_TRAINERS, ProtocolConfig,
                      default_grids, run_one_vs_rest, run_pairwise,
                      run_ratio_sweep)
from .kernels import KernelSpec
from .metrics import ScoredPredictions, accuracy, average_precision
from .model_selection import (METRIC_NAMES, ClassifierTrainer, CVGrid,
                              grid_search, retrain_full)
from .models import (ADAPTIVE_KINDS, MODEL_KINDS, PLUS_KINDS, decision_values,
                     predict, source_scores)
from .svm import fit_svm, fit_svm_plus


class CliUsageError(LupiMarginError):
    """Bad flag combination or unusable input, reported as exit code 1."""


def _echo_config(args, extra=None):
    resolved = {k: v for k, v in sorted(vars(args).items())
                if k != "func" and v is not None}
    if extra:
        resolved.update(extra)
    print("config " + json.dumps(resolved, sort_keys=True, default=str))


def _kernel_from_args(args) -> KernelSpec:
    if args.kernel == "rbf":
        if args.rbf_gamma is None:
            raise CliUsageError("--kernel rbf requires --rbf-gamma")
        return KernelSpec("rbf", args.rbf_gamma)
    if args.rbf_gamma is not None:
        raise CliUsageError("--rbf-gamma is only valid with --kernel rbf")
    return KernelSpec("linear")


def _add_kernel_flags(parser):
    parser.add_argument("--kernel", choices=("linear", "rbf"), default="linear")
    parser.add_argument("--rbf-gamma", type=float, default=None)


def _add_data_flags(parser, privileged=True):
    parser.add_argument("--features", required=True)
    parser.add_argument("--labels", required=True)
    if privileged:
        parser.add_argument("--privileged", default=None)
    parser.add_argument("--domains", default=None)
    parser.add_argument("--ids", default=None)


def _load_from_flags(args) -> TripletDataset:
    return load_dataset(
        args.features, args.labels,
        privileged_path=getattr(args, "privileged", None),
        domain_path=args.domains, ids_path=args.ids,
    )


def _load_data_dir(path) -> TripletDataset:
    base = Path(path)
    if not base.is_dir():
        raise CliUsageError(f"{path} is not a dataset directory")
    features = base / "features.csv"
    labels = base / "labels.txt"
    if not features.is_file() or not labels.is_file():
        raise CliUsageError(f"{path} needs features.csv and labels.txt")

    def opt(name):
        candidate = base / name
        return candidate if candidate.is_file() else None

    return load_dataset(
        features, labels,
        privileged_path=opt("privileged.csv"),
        domain_path=opt("domains.txt"),
        ids_path=opt("ids.txt"),
    )


def _cmd_synth(args) -> int:
    config = SynthConfig(
        n_per_class=args.n_per_class, dim=args.dim, separation=args.separation,
        priv_noise=args.priv_noise, target_shift=args.target_shift,
        target_fraction=args.target_fraction, seed=args.seed,
    )
    _echo_config(args)
    data = make_synthetic(config)
    paths = save_dataset(data, args.out)
    print(f"wrote {len(paths)} files with {data.n} rows to {args.out}")
    return 0


def _require(condition, message):
    if not condition:
        raise CliUsageError(message)


def _fit_from_args(args, data: TripletDataset):
    kind = args.classifier
    kernel = _kernel_from_args(args)
    _require(kind not in PLUS_KINDS or data.Xstar is not None,
             f"{kind} requires --privileged")
    _require(kind not in PLUS_KINDS or args.gamma_priv is not None,
             f"{kind} requires --gamma-priv")
    scores = None
    if kind in ADAPTIVE_KINDS:
        _require(args.source_model is not None,
                 f"{kind} requires --source-model")
        source = load_model(args.source_model)
        scores = source_scores(source, data.X, data.y)
    if kind == "svm":
        return fit_svm(data.X, data.y, args.c, kernel=kernel)
    if kind == "svm_plus":
        return fit_svm_plus(data.X, data.Xstar, data.y, args.c,
                            args.gamma_priv, kernel=kernel)
    if kind == "adaptive_svm":
        return fit_adaptive_svm(data.X, data.y, args.c, kernel=kernel,
                                scores=scores)
    return fit_adaptive_svm_plus(
        data.X, data.Xstar, data.y, args.c, args.gamma_priv, kernel=kernel,
        scores=scores, bias_mode=args.bias_mode,
    )


def _cmd_train(args) -> int:
    _echo_config(args)
    data = _load_from_flags(args)
    model = _fit_from_args(args, data)
    save_model(model, args.out)
    print(f"trained {model.kind} on {data.n} rows: "
          f"{model.sv_X.shape[0]} support vectors, bias={model.bias:.4f}")
    print(f"wrote {args.out}")
    return 0


def _cmd_predict(args) -> int:
    _echo_config(args)
    model = load_model(args.model)
    X = np.loadtxt(args.features, delimiter=",", ndmin=2)
    values = decision_values(model, X)
    labels = predict(model, X)
    if args.out is not None:
        with open(args.out, "w", encoding="utf-8") as handle:
            handle.write("score,predicted\n")
            for value, label in zip(values, labels):
                handle.write(f"{value!r},{label:+d}\n")
        print(f"wrote {len(values)} predictions to {args.out}")
    else:
        for value, label in zip(values, labels):
            print(f"{value:.4f} {label:+d}")
    return 0


def _cmd_eval(args) -> int:
    _echo_config(args)
    model = load_model(args.model)
    data = _load_from_flags(args)
    if args.metric == "average_precision":
        value = average_precision(
            ScoredPredictions(decision_values(model, data.X), data.y)
        )
    else:
        value = accuracy(predict(model, data.X), data.y)
    print(f"{args.metric}={value:.4f} over {data.n} rows")
    if args.out is not None:
        with open(args.out, "w", encoding="utf-8") as handle:
            json.dump({"metric": args.metric, "value": value, "rows": data.n},
                      handle, sort_keys=True)
            handle.write("\n")
        print(f"wrote {args.out}")
    return 0


def _grid_from_payload(payload, label) -> CVGrid:
    if not isinstance(payload, dict):
        raise CliUsageError(f"{label} must be a JSON object")
    allowed = {"c_values", "gamma_values", "rbf_gamma_values", "folds",
               "metric", "seed"}
    unknown = set(payload) - allowed
    if unknown:
        raise CliUsageError(f"{label} has unknown keys {sorted(unknown)}")
    if "c_values" not in payload:
        raise CliUsageError(f"{label} needs c_values")
    try:
        return CVGrid(
            c_values=tuple(payload["c_values"]),
            gamma_values=None if payload.get("gamma_values") is None
            else tuple(payload["gamma_values"]),
            rbf_gamma_values=None if payload.get("rbf_gamma_values") is None
            else tuple(payload["rbf_gamma_values"]),
            folds=payload.get("folds", 5),
            metric=payload.get("metric", "average_precision"),
            seed=payload.get("seed", 0),
        )
    except (TypeError, ValueError) as exc:
        raise CliUsageError(f"{label} is invalid: {exc}") from None


def _read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return json.load(handle)
    except OSError as exc:
        raise CliUsageError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise CliUsageError(f"{path} is not valid JSON: {exc.msg}") from None


def _cmd_cv(args) -> int:
    _echo_config(args)
    data = _load_from_flags(args)
    kind = args.classifier
    kernel = _kernel_from_args(args)
    source_model = None
    if kind in ADAPTIVE_KINDS:
        _require(args.source_model is not None, f"{kind} requires --source-model")
        source_model = load_model(args.source_model)
    if args.grid is not None:
        grid = _grid_from_payload(_read_json(args.grid), args.grid)
    else:
        grid = default_grids("pairwise", (kind,), "svm")[kind]
        grid = CVGrid(grid.c_values, grid.gamma_values, grid.rbf_gamma_values,
                      args.folds, args.metric, args.seed)
    trainer = ClassifierTrainer(
        kind=kind, kernel=kernel, source_model=source_model,
    )
    result = grid_search(trainer, data, grid)
    best = result.best
    print(f"best C={best.C:g}"
          + (f" gamma_priv={best.gamma_priv:g}" if best.gamma_priv is not None else "")
          + (f" rbf_gamma={best.rbf_gamma:g}" if best.rbf_gamma is not None else "")
          + f" score={result.best_score:.4f}"
          + f" over {len(result.cells)} cells"
          + f" ({len(result.failed_cells())} failed)")
    if args.out is not None:
        payload = {
            "best": {"C": best.C, "gamma_priv": best.gamma_priv,
                     "rbf_gamma": best.rbf_gamma},
            "best_score": result.best_score,
            "cells": [{
                "C": c.point.C, "gamma_priv": c.point.gamma_priv,
                "rbf_gamma": c.point.rbf_gamma,
                "score": None if c.error is not None else c.score,
                "error": c.error,
            } for c in result.cells],
        }
        with open(args.out, "w", encoding="utf-8") as handle:
            json.dump(payload, handle, indent=1, sort_keys=True)
            handle.write("\n")
        print(f"wrote {args.out}")
    if args.out_model is not None:
        model = retrain_full(trainer, data, best)
        save_model(model, args.out_model)
        print(f"wrote {args.out_model}")
    return 0


def _group_by_ids(data: TripletDataset):
    if data.ids is None:
        raise CliUsageError(
            "pairwise derives classes from category ids; dataset has no ids file"
        )
    return [
        data.subset(np.flatnonzero(data.ids == value))
        for value in np.unique(data.ids)
    ]


def _experiment_grids(args):
    if args.grid is None:
        return None
    payload = _read_json(args.grid)
    if not isinstance(payload, dict):
        raise CliUsageError(f"{args.grid} must map grid names to grid objects")
    return {name: _grid_from_payload(sub, f"{args.grid}[{name}]")
            for name, sub in payload.items()}


def _cmd_experiment(args) -> int:
    classifier_set = tuple(args.classifiers.split(","))
    for kind in classifier_set:
        _require(kind in MODEL_KINDS, f"unknown classifier {kind!r}")
    ratios = () if args.ratios is None else tuple(
        float(r) for r in args.ratios.split(",")
    )
    kernel = _kernel_from_args(args)
    config = ProtocolConfig(
        mode=args.protocol,
        classifier_set=classifier_set,
        source_trainer=args.source_trainer,
        n_train_per_class=args.n_train,
        n_test_per_class=args.n_test,
        repeats=args.repeats,
        grids=_experiment_grids(args),
        master_seed=args.seed,
        preserve_ratio=args.preserve_ratio,
        ratios=ratios,
        kernel=kernel,
    )
    _echo_config(args, extra={"resolved_source_trainer": config.source_trainer})
    data = _load_data_dir(args.data)
    if args.protocol == "pairwise":
        report = run_pairwise(_group_by_ids(data), config, jobs=args.jobs)
    elif args.protocol == "one_vs_rest":
        _require(args.source_data is not None,
                 "one_vs_rest requires --source-data")
        source_data = _load_data_dir(args.source_data)
        report = run_one_vs_rest(source_data, data, config, jobs=args.jobs)
    else:
        report = run_ratio_sweep(data, config, jobs=args.jobs)
    sys.stdout.write(report.to_table_text())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report.to_table_text(), encoding="utf-8")
    (out / "report.csv").write_text(report.to_csv_text(), encoding="utf-8")
    (out / "report.json").write_text(report.to_json_text(), encoding="utf-8")
    print(f"wrote report.txt, report.csv, report.json to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lupi-margin",
        description="Max-margin classifiers with privileged information and "
                    "source-model adaptation.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("synth", help="generate a seeded synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-per-class", type=int, default=50)
    p.add_argument("--dim", type=int, default=6)
    p.add_argument("--separation", type=float, default=1.2)
    p.add_argument("--priv-noise", type=float, default=0.3)
    p.add_argument("--target-shift", type=float, default=0.8)
    p.add_argument("--target-fraction", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="fit one classifier and save it")
    p.add_argument("--classifier", required=True, choices=MODEL_KINDS)
    _add_data_flags(p)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--gamma-priv", type=float, default=None)
    p.add_argument("--bias-mode", choices=BIAS_MODES, default="none")
    p.add_argument("--source-model", default=None)
    _add_kernel_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="score new rows with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("eval", help="evaluate a saved model against labels")
    p.add_argument("--model", required=True)
    _add_data_flags(p, privileged=False)
    p.add_argument("--metric", choices=METRIC_NAMES,
                   default="average_precision")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("cv", help="grid-search hyperparameters by k-fold CV")
    p.add_argument("--classifier", required=True, choices=MODEL_KINDS)
    _add_data_flags(p)
    p.add_argument("--source-model", default=None)
    p.add_argument("--grid", default=None,
                   help="JSON grid file; defaults to decade grids")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--metric", choices=METRIC_NAMES,
                   default="average_precision")
    _add_kernel_flags(p)
    p.add_argument("--out", default=None)
    p.add_argument("--out-model", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_cv)

    p = sub.add_parser("experiment", help="run a full evaluation protocol")
    p.add_argument("--protocol", required=True, choices=PROTOCOL_MODES)
    p.add_argument("--data", required=True,
                   help="dataset directory (features.csv, labels.txt, ...)")
    p.add_argument("--source-data", default=None,
                   help="source-domain dataset directory (one_vs_rest)")
    p.add_argument("--classifiers",
                   default="svm,svm_plus,adaptive_svm,adaptive_svm_plus")
    p.add_argument("--source-trainer", choices=SOURCE_TRAINERS, default=None)
    p.add_argument("--n-train", type=int, default=50)
    p.add_argument("--n-test", type=int, default=200)
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--ratios", default=None)
    p.add_argument("--preserve-ratio", action=argparse.BooleanOptionalAction,
                   default=True)
    p.add_argument("--grid", default=None,
                   help="JSON file mapping classifier names to grid objects")
    _add_kernel_flags(p)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_experiment)
    return parser


def run_cli(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except LupiMarginError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive catch-all
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
