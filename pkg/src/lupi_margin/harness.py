"""Experiment orchestration for the three evaluation protocols.

``pairwise`` trains one binary task per unordered class pair: an easy-domain
scorer is fit on the source-tagged training rows, the competing classifiers
on the target-tagged rows, and reported AP optionally pools easy predictions
(from the scorer) with hard predictions (from the classifier) at the test
set's own easy/hard ratio.  ``one_vs_rest`` turns category ids into binary
tasks, fits the scorer on a separate source-domain dataset, and scores
accuracy on held-out positives balanced with negatives.  ``ratio_sweep``
retrains on growing training fractions of one dataset.

Every task x repeat unit derives its own RNG stream from
``(master_seed, task_index, repeat_index)``, so reports are bitwise
reproducible no matter how units are scheduled across processes.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data_io import TripletDataset, split_train_test
from .errors import (ConfigMismatch, DegenerateVariance, EmptyPool,
                     EmptyTestSet, LupiMarginError, TooFewSamples)
from .kernels import KernelSpec
from .metrics import (ScoredPredictions, accuracy, average_precision,
                      mean_and_stderr, z_test)
from .model_selection import (ClassifierTrainer, CVGrid, ParamPoint,
                              decade_grid, grid_search, retrain_full)
from .models import (ADAPTIVE_KINDS, MODEL_KINDS, PLUS_KINDS, TrainedModel,
                     decision_values, predict, source_scores)

PROTOCOL_MODES = ("pairwise", "one_vs_rest", "ratio_sweep")
SOURCE_TRAINERS = ("svm", "svm_plus")

# a task that lost its scorer downgrades to the matching plain trainer
FALLBACK_KIND = {"adaptive_svm": "svm", "adaptive_svm_plus": "svm_plus"}


def _grid_for(kind, c_values, gamma_values, folds, metric):
    return CVGrid(
        c_values=c_values,
        gamma_values=gamma_values if kind in PLUS_KINDS else None,
        rbf_gamma_values=None,
        folds=folds,
        metric=metric,
    )


def default_grids(mode, classifier_set, source_trainer):
    """Per-classifier search grids: decade-spaced C and privileged weight.

    pairwise / ratio_sweep: C and the privileged weight from 1e-4..1e4,
    5 folds, average precision.  one_vs_rest: C from 1..1e5 with the
    privileged weight still from 1e-4..1e4, 3 folds, accuracy.
    """
    if mode == "one_vs_rest":
        c_values, folds, metric = decade_grid(0, 5), 3, "accuracy"
    else:
        c_values, folds, metric = decade_grid(-4, 4), 5, "average_precision"
    gamma_values = decade_grid(-4, 4)
    grids = {
        kind: _grid_for(kind, c_values, gamma_values, folds, metric)
        for kind in classifier_set
    }
    grids["source"] = _grid_for(source_trainer, c_values, gamma_values, folds, metric)
    return grids


def _default_source_trainer(mode):
    return "svm" if mode == "one_vs_rest" else "svm_plus"


@dataclass(frozen=True)
class ProtocolConfig:
    """Everything one experiment run depends on besides the data itself."""

    mode: str
    classifier_set: tuple = ("svm", "svm_plus", "adaptive_svm", "adaptive_svm_plus")
    source_trainer: str | None = None
    n_train_per_class: int = 50
    n_test_per_class: int = 200
    repeats: int = 20
    grids: dict | None = None
    master_seed: int = 0
    preserve_ratio: bool = True
    ratios: tuple = ()
    kernel: KernelSpec | None = None
    kernel_star: KernelSpec | None = None

    def __post_init__(self):
        if self.mode not in PROTOCOL_MODES:
            raise ValueError(f"mode must be one of {PROTOCOL_MODES}")
        seen = []
        for kind in self.classifier_set:
            if kind not in MODEL_KINDS:
                raise ValueError(f"unknown classifier kind {kind!r}")
            if kind not in seen:
                seen.append(kind)
        if not seen:
            raise ValueError("classifier_set must be nonempty")
        object.__setattr__(self, "classifier_set", tuple(seen))
        if self.source_trainer is None:
            object.__setattr__(self, "source_trainer", _default_source_trainer(self.mode))
        if self.source_trainer not in SOURCE_TRAINERS:
            raise ValueError(f"source_trainer must be one of {SOURCE_TRAINERS}")
        if self.n_train_per_class < 1 or self.n_test_per_class < 1:
            raise ValueError("per-class counts must be at least 1")
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")
        ratios = tuple(float(r) for r in self.ratios)
        if self.mode == "ratio_sweep":
            if not ratios:
                raise ValueError("ratio_sweep needs a nonempty ratios list")
            if any(not 0.0 < r <= 1.0 for r in ratios):
                raise ValueError("ratios must lie in (0, 1]")
        elif ratios:
            raise ConfigMismatch(f"{self.mode} takes no ratios")
        object.__setattr__(self, "ratios", ratios)
        grids = self.grids if self.grids is not None else default_grids(
            self.mode, self.classifier_set, self.source_trainer
        )
        for kind in self.classifier_set + ("source",):
            key = self.source_trainer if kind == "source" else kind
            if kind not in grids:
                raise ConfigMismatch(f"grids is missing an entry for {kind!r}")
            has_gamma = grids[kind].gamma_values is not None
            if (key in PLUS_KINDS) != has_gamma:
                raise ConfigMismatch(
                    f"grid for {kind!r} must carry gamma_values iff the trainer "
                    "uses privileged features"
                )
        object.__setattr__(self, "grids", dict(grids))


@dataclass(frozen=True)
class UnitResult:
    """One task x classifier x repeat measurement."""

    task: str
    classifier: str
    repeat: int
    value: float | None
    source_value: float | None = None
    target_value: float | None = None
    chosen: ParamPoint | None = None
    trained_kind: str | None = None
    fallback: bool = False
    error: str | None = None


@dataclass(frozen=True)
class TaskSeries:
    """All repeats of one task x classifier, with their summary statistics."""

    task: str
    classifier: str
    values: tuple
    mean: float | None
    stderr: float | None
    source_mean: float | None
    target_mean: float | None
    failed: bool
    fallback_count: int
    errors: tuple


@dataclass(frozen=True)
class SignificanceRecord:
    task: str
    classifier_a: str
    classifier_b: str
    z: float | None
    significant: bool | None


@dataclass(frozen=True)
class ExperimentReport:
    """Deterministic results of one protocol run, exportable three ways."""

    mode: str
    master_seed: int
    config_echo: dict
    units: tuple
    per_task: tuple
    overall: dict
    significance: tuple
    excluded_count: int

    def to_records(self):
        records = []
        for u in self.units:
            records.append({
                "task": u.task,
                "classifier": u.classifier,
                "repeat": u.repeat,
                "value": u.value,
                "source_value": u.source_value,
                "target_value": u.target_value,
                "chosen_C": None if u.chosen is None else u.chosen.C,
                "chosen_gamma_priv": None if u.chosen is None else u.chosen.gamma_priv,
                "chosen_rbf_gamma": None if u.chosen is None else u.chosen.rbf_gamma,
                "trained_kind": u.trained_kind,
                "fallback": u.fallback,
                "error": u.error,
            })
        return records

    def to_csv_text(self) -> str:
        fields = ["task", "classifier", "repeat", "value", "source_value",
                  "target_value", "chosen_C", "chosen_gamma_priv",
                  "chosen_rbf_gamma", "trained_kind", "fallback", "error"]
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for record in self.to_records():
            row = {}
            for key in fields:
                value = record[key]
                if value is None:
                    row[key] = ""
                elif isinstance(value, bool):
                    row[key] = "true" if value else "false"
                elif isinstance(value, float):
                    row[key] = repr(value)
                else:
                    row[key] = value
            writer.writerow(row)
        return buffer.getvalue()

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "master_seed": self.master_seed,
            "config": self.config_echo,
            "records": self.to_records(),
            "per_task": [{
                "task": s.task,
                "classifier": s.classifier,
                "values": list(s.values),
                "mean": s.mean,
                "stderr": s.stderr,
                "source_mean": s.source_mean,
                "target_mean": s.target_mean,
                "failed": s.failed,
                "fallback_count": s.fallback_count,
                "errors": list(s.errors),
            } for s in self.per_task],
            "overall": self.overall,
            "significance": [{
                "task": r.task,
                "classifier_a": r.classifier_a,
                "classifier_b": r.classifier_b,
                "z": r.z,
                "significant": r.significant,
            } for r in self.significance],
            "excluded_count": self.excluded_count,
        }

    def to_json_text(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def to_table_text(self) -> str:
        def num(value):
            return "-" if value is None else f"{value:.4f}"

        lines = [
            f"mode={self.mode} master_seed={self.master_seed} "
            f"repeats={self.config_echo['repeats']} "
            f"classifiers={','.join(self.config_echo['classifier_set'])}",
        ]
        rows = [("task", "classifier", "mean", "stderr", "src", "tgt", "flags")]
        for s in self.per_task:
            flags = []
            if s.failed:
                flags.append("FAILED")
            if s.fallback_count:
                flags.append(f"fallback x{s.fallback_count}")
            rows.append((s.task, s.classifier, num(s.mean), num(s.stderr),
                         num(s.source_mean), num(s.target_mean),
                         ",".join(flags) or "-"))
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        for row in rows:
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        lines.append("")
        lines.append(
            f"overall means over non-failed tasks "
            f"({self.excluded_count} task series excluded):"
        )
        for name, stats in self.overall.items():
            lines.append(
                f"  {name}: mean={num(stats['mean'])} stderr={num(stats['stderr'])} "
                f"tasks={stats['tasks_included']}/{stats['tasks_included'] + stats['tasks_excluded']}"
            )
        if self.significance:
            lines.append("")
            lines.append("per-task z-tests (|z| >= 1.96 flags significance):")
            for r in self.significance:
                ztxt = "-" if r.z is None else f"{r.z:+.4f}"
                flag = "-" if r.significant is None else ("yes" if r.significant else "no")
                lines.append(
                    f"  {r.task}: {r.classifier_a} vs {r.classifier_b}: "
                    f"z={ztxt} significant={flag}"
                )
        return "\n".join(lines) + "\n"


def _kernel_echo(spec):
    return None if spec is None else {"kind": spec.kind, "rbf_gamma": spec.rbf_gamma}


def _grid_echo(grid: CVGrid) -> dict:
    return {
        "c_values": list(grid.c_values),
        "gamma_values": None if grid.gamma_values is None else list(grid.gamma_values),
        "rbf_gamma_values": None if grid.rbf_gamma_values is None
        else list(grid.rbf_gamma_values),
        "folds": grid.folds,
        "metric": grid.metric,
        "seed": grid.seed,
    }


def _config_echo(config: ProtocolConfig) -> dict:
    return {
        "mode": config.mode,
        "classifier_set": list(config.classifier_set),
        "source_trainer": config.source_trainer,
        "n_train_per_class": config.n_train_per_class,
        "n_test_per_class": config.n_test_per_class,
        "repeats": config.repeats,
        "master_seed": config.master_seed,
        "preserve_ratio": config.preserve_ratio,
        "ratios": list(config.ratios),
        "kernel": _kernel_echo(config.kernel),
        "kernel_star": _kernel_echo(config.kernel_star),
        "grids": {name: _grid_echo(grid) for name, grid in sorted(config.grids.items())},
    }


def ratio_preserving_pool(source_preds: ScoredPredictions,
                          target_preds: ScoredPredictions,
                          source_fraction: float, seed) -> ScoredPredictions:
    """Subsample both prediction pools so their mix hits ``source_fraction``.

    The pooled size is the smaller of the two pools that actually contribute;
    the source share is the floor of ``source_fraction`` times that size and
    the target share is the complement, both drawn without replacement.
    """
    if not 0.0 <= source_fraction <= 1.0:
        raise ValueError("source_fraction must lie in [0, 1]")
    n_source = source_preds.scores.shape[0]
    n_target = target_preds.scores.shape[0]
    active = []
    if source_fraction > 0.0:
        if n_source == 0:
            raise EmptyPool("source pool is empty but its fraction is positive")
        active.append(n_source)
    if source_fraction < 1.0:
        if n_target == 0:
            raise EmptyPool("target pool is empty but its fraction is positive")
        active.append(n_target)
    n_total = min(active)
    take_source = int(math.floor(source_fraction * n_total + 1e-9))
    take_target = n_total - take_source
    rng = np.random.default_rng(seed)
    src_idx = np.sort(rng.choice(n_source, size=take_source, replace=False)) \
        if take_source else np.array([], dtype=int)
    tgt_idx = np.sort(rng.choice(n_target, size=take_target, replace=False)) \
        if take_target else np.array([], dtype=int)
    scores = np.concatenate([source_preds.scores[src_idx], target_preds.scores[tgt_idx]])
    labels = np.concatenate([source_preds.labels[src_idx], target_preds.labels[tgt_idx]])
    predicted = None
    if source_preds.predicted is not None and target_preds.predicted is not None:
        predicted = np.concatenate(
            [source_preds.predicted[src_idx], target_preds.predicted[tgt_idx]]
        )
    return ScoredPredictions(scores=scores, labels=labels, predicted=predicted)


def _relabel(data: TripletDataset, y) -> TripletDataset:
    return TripletDataset(X=data.X, Xstar=data.Xstar, y=y,
                          domain_tag=data.domain_tag, ids=data.ids)


def _concat(parts) -> TripletDataset:
    parts = [p for p in parts if p.n]
    keep_star = all(p.Xstar is not None for p in parts)
    keep_tags = all(p.domain_tag is not None for p in parts)
    keep_ids = all(p.ids is not None for p in parts)
    return TripletDataset(
        X=np.vstack([p.X for p in parts]),
        Xstar=np.vstack([p.Xstar for p in parts]) if keep_star else None,
        y=np.concatenate([p.y for p in parts]),
        domain_tag=np.concatenate([p.domain_tag for p in parts]) if keep_tags else None,
        ids=np.concatenate([p.ids for p in parts]) if keep_ids else None,
    )


def _fit_via_grid(kind, rows, grid, config, source_model=None):
    trainer = ClassifierTrainer(
        kind=kind,
        kernel=config.kernel,
        kernel_star=config.kernel_star if kind in PLUS_KINDS else None,
        source_model=source_model if kind in ADAPTIVE_KINDS else None,
    )
    search = grid_search(trainer, rows, grid)
    return retrain_full(trainer, rows, search.best), search


def _safe_ap(model, rows: TripletDataset) -> float | None:
    if rows.n == 0:
        return None
    try:
        return average_precision(
            ScoredPredictions(decision_values(model, rows.X), rows.y)
        )
    except LupiMarginError:
        return None


def _error_units(name, repeat, classifiers, message):
    return [
        UnitResult(task=name, classifier=kind, repeat=repeat, value=None,
                   error=message)
        for kind in classifiers
    ]


def _describe(exc: LupiMarginError) -> str:
    return f"{type(exc).__name__}: {exc}"


def _pairwise_worker(args):
    config, task_idx, name, data_pos, data_neg, repeat = args
    rng = np.random.default_rng([config.master_seed, task_idx, repeat])
    try:
        train_pos, test_pos = split_train_test(
            data_pos, config.n_train_per_class, rng, config.n_test_per_class
        )
        train_neg, test_neg = split_train_test(
            data_neg, config.n_train_per_class, rng, config.n_test_per_class
        )
    except LupiMarginError as exc:
        return _error_units(name, repeat, config.classifier_set, _describe(exc))
    pool_seed = int(rng.integers(2 ** 31))
    train = _concat([
        _relabel(train_pos, np.ones(train_pos.n, dtype=int)),
        _relabel(train_neg, -np.ones(train_neg.n, dtype=int)),
    ])
    test = _concat([
        _relabel(test_pos, np.ones(test_pos.n, dtype=int)),
        _relabel(test_neg, -np.ones(test_neg.n, dtype=int)),
    ])
    easy_train, hard_train = train.source_rows(), train.target_rows()
    easy_test, hard_test = test.source_rows(), test.target_rows()

    source_model = None
    fallback = False
    if easy_train.n == 0:
        fallback = True
    else:
        try:
            source_model, _ = _fit_via_grid(
                config.source_trainer, easy_train, config.grids["source"], config
            )
        except LupiMarginError:
            fallback = True

    source_preds = None
    easy_share = 0.0
    if source_model is not None and easy_test.n:
        source_preds = ScoredPredictions(
            decision_values(source_model, easy_test.X), easy_test.y
        )
        easy_share = easy_test.n / test.n

    results = []
    for kind in config.classifier_set:
        actual = FALLBACK_KIND.get(kind, kind) if fallback else kind
        try:
            model, search = _fit_via_grid(
                actual, hard_train, config.grids[kind], config,
                source_model=source_model,
            )
            hard_preds = ScoredPredictions(
                decision_values(model, hard_test.X), hard_test.y
            )
            if source_preds is not None:
                if config.preserve_ratio:
                    combined = ratio_preserving_pool(
                        source_preds, hard_preds, easy_share, pool_seed
                    )
                else:
                    combined = ScoredPredictions(
                        np.concatenate([source_preds.scores, hard_preds.scores]),
                        np.concatenate([source_preds.labels, hard_preds.labels]),
                    )
                value = average_precision(combined)
                src_value = _safe_ap(source_model, easy_test)
            else:
                value = average_precision(
                    ScoredPredictions(decision_values(model, test.X), test.y)
                )
                src_value = _safe_ap(model, easy_test)
            results.append(UnitResult(
                task=name, classifier=kind, repeat=repeat, value=value,
                source_value=src_value,
                target_value=_safe_ap(model, hard_test),
                chosen=search.best, trained_kind=actual, fallback=fallback,
            ))
        except LupiMarginError as exc:
            results.append(UnitResult(
                task=name, classifier=kind, repeat=repeat, value=None,
                trained_kind=actual, fallback=fallback, error=_describe(exc),
            ))
    return results


def _one_vs_rest_worker(args):
    config, task_idx, name, target, positives, negatives, source_model, \
        source_failed, repeat = args
    rng = np.random.default_rng([config.master_seed, task_idx, repeat])
    n_train = config.n_train_per_class
    if positives.shape[0] <= n_train or negatives.shape[0] <= n_train:
        return _error_units(
            name, repeat, config.classifier_set,
            _describe(TooFewSamples(
                f"category {name} has {positives.shape[0]} positives and "
                f"{negatives.shape[0]} negatives; need more than {n_train} of each"
            )),
        )
    train_pos = np.sort(rng.choice(positives, size=n_train, replace=False))
    train_neg = np.sort(rng.choice(negatives, size=n_train, replace=False))
    rest_pos = np.setdiff1d(positives, train_pos)
    rest_neg = np.setdiff1d(negatives, train_neg)
    if rest_pos.shape[0] > config.n_test_per_class:
        rest_pos = np.sort(rng.choice(rest_pos, size=config.n_test_per_class,
                                      replace=False))
    n_test = min(rest_pos.shape[0], rest_neg.shape[0])
    test_pos = rest_pos[:n_test]
    test_neg = np.sort(rng.choice(rest_neg, size=n_test, replace=False))
    if n_test == 0:
        return _error_units(
            name, repeat, config.classifier_set,
            _describe(EmptyTestSet("no held-out positives remain")),
        )

    def task_view(indices):
        rows = target.subset(indices)
        return _relabel(rows, np.where(rows.ids == name, 1, -1))

    train = task_view(np.concatenate([train_pos, train_neg]))
    test = task_view(np.concatenate([test_pos, test_neg]))

    results = []
    for kind in config.classifier_set:
        actual = FALLBACK_KIND.get(kind, kind) if source_failed else kind
        try:
            model, search = _fit_via_grid(
                actual, train, config.grids[kind], config,
                source_model=source_model,
            )
            value = accuracy(predict(model, test.X), test.y)
            results.append(UnitResult(
                task=name, classifier=kind, repeat=repeat, value=value,
                chosen=search.best, trained_kind=actual, fallback=source_failed,
            ))
        except LupiMarginError as exc:
            results.append(UnitResult(
                task=name, classifier=kind, repeat=repeat, value=None,
                trained_kind=actual, fallback=source_failed,
                error=_describe(exc),
            ))
    return results


def _ratio_worker(args):
    config, task_idx, name, ratio, pool, source_model, source_failed, repeat = args
    rng = np.random.default_rng([config.master_seed, task_idx, repeat])
    train_parts = []
    for label in np.unique(pool.y):
        members = np.flatnonzero(pool.y == label)
        take = max(1, int(round(ratio * members.shape[0])))
        train_parts.append(np.sort(rng.choice(members, size=take, replace=False)))
    train_idx = np.sort(np.concatenate(train_parts))
    test_idx = np.setdiff1d(np.arange(pool.n), train_idx)
    if test_idx.shape[0] == 0:
        return _error_units(
            name, repeat, config.classifier_set,
            _describe(EmptyTestSet("ratio leaves no held-out rows")),
        )
    train, test = pool.subset(train_idx), pool.subset(test_idx)
    results = []
    for kind in config.classifier_set:
        actual = FALLBACK_KIND.get(kind, kind) if source_failed else kind
        try:
            model, search = _fit_via_grid(
                actual, train, config.grids[kind], config,
                source_model=source_model,
            )
            value = average_precision(
                ScoredPredictions(decision_values(model, test.X), test.y)
            )
            results.append(UnitResult(
                task=name, classifier=kind, repeat=repeat, value=value,
                chosen=search.best, trained_kind=actual, fallback=source_failed,
            ))
        except LupiMarginError as exc:
            results.append(UnitResult(
                task=name, classifier=kind, repeat=repeat, value=None,
                trained_kind=actual, fallback=source_failed,
                error=_describe(exc),
            ))
    return results


def _run_units(worker, arg_list, jobs):
    if jobs <= 1:
        return [worker(args) for args in arg_list]
    chunk = max(1, len(arg_list) // (jobs * 4) or 1)
    with ProcessPoolExecutor(max_workers=jobs) as executor:
        return list(executor.map(worker, arg_list, chunksize=chunk))


def _assemble(config, task_names, unit_lists) -> ExperimentReport:
    units = tuple(itertools.chain.from_iterable(unit_lists))
    task_order = {name: i for i, name in enumerate(task_names)}
    clf_order = {kind: i for i, kind in enumerate(config.classifier_set)}
    units = tuple(sorted(
        units, key=lambda u: (task_order[u.task], clf_order[u.classifier], u.repeat)
    ))

    per_task = []
    series_by_key = {}
    for name in task_names:
        for kind in config.classifier_set:
            mine = [u for u in units if u.task == name and u.classifier == kind]
            values = tuple(u.value for u in mine if u.error is None)
            errors = tuple(u.error for u in mine if u.error is not None)
            failed = bool(errors)
            mean = stderr = None
            if values:
                mean, stderr = mean_and_stderr(np.array(values))
            src = [u.source_value for u in mine if u.source_value is not None]
            tgt = [u.target_value for u in mine if u.target_value is not None]
            series = TaskSeries(
                task=name, classifier=kind, values=values, mean=mean,
                stderr=stderr,
                source_mean=float(np.mean(src)) if src else None,
                target_mean=float(np.mean(tgt)) if tgt else None,
                failed=failed,
                fallback_count=sum(1 for u in mine if u.fallback),
                errors=errors,
            )
            per_task.append(series)
            series_by_key[(name, kind)] = series
    per_task = tuple(per_task)

    overall = {}
    excluded_total = 0
    for kind in config.classifier_set:
        task_means = [
            series_by_key[(name, kind)].mean
            for name in task_names
            if not series_by_key[(name, kind)].failed
        ]
        excluded = len(task_names) - len(task_means)
        excluded_total += excluded
        if task_means:
            mean, stderr = mean_and_stderr(np.array(task_means))
        else:
            mean = stderr = None
        overall[kind] = {
            "mean": mean,
            "stderr": stderr,
            "tasks_included": len(task_means),
            "tasks_excluded": excluded,
        }

    significance = []
    for name in task_names:
        for kind_a, kind_b in itertools.combinations(config.classifier_set, 2):
            a = series_by_key[(name, kind_a)]
            b = series_by_key[(name, kind_b)]
            if a.failed or b.failed or a.mean is None or b.mean is None:
                continue
            try:
                z, flag = z_test(a.mean, a.stderr, b.mean, b.stderr)
            except DegenerateVariance:
                z, flag = None, None
            significance.append(SignificanceRecord(
                task=name, classifier_a=kind_a, classifier_b=kind_b,
                z=z, significant=flag,
            ))

    return ExperimentReport(
        mode=config.mode,
        master_seed=config.master_seed,
        config_echo=_config_echo(config),
        units=units,
        per_task=per_task,
        overall=overall,
        significance=tuple(significance),
        excluded_count=excluded_total,
    )


def _require_mode(config, mode):
    if config.mode != mode:
        raise ConfigMismatch(f"config.mode is {config.mode!r}, expected {mode!r}")


def _needs_privileged(config) -> bool:
    return any(kind in PLUS_KINDS for kind in config.classifier_set) \
        or config.source_trainer in PLUS_KINDS


def run_pairwise(class_datasets, config: ProtocolConfig, jobs: int = 1) -> ExperimentReport:
    """One binary task per unordered class pair, easy->hard adaptation."""
    _require_mode(config, "pairwise")
    if len(class_datasets) < 2:
        raise ConfigMismatch("pairwise needs at least 2 class datasets")
    for i, data in enumerate(class_datasets):
        if not data.has_domains:
            raise ConfigMismatch(f"class dataset {i} lacks domain tags")
        if _needs_privileged(config) and not data.has_privileged:
            raise ConfigMismatch(f"class dataset {i} lacks privileged features")
    pairs = list(itertools.combinations(range(len(class_datasets)), 2))
    task_names = [f"{i}vs{j}" for i, j in pairs]
    arg_list = [
        (config, task_idx, task_names[task_idx],
         class_datasets[i], class_datasets[j], repeat)
        for task_idx, (i, j) in enumerate(pairs)
        for repeat in range(config.repeats)
    ]
    unit_lists = _run_units(_pairwise_worker, arg_list, jobs)
    return _assemble(config, task_names, unit_lists)


def run_one_vs_rest(source_data: TripletDataset, target_data: TripletDataset,
                    config: ProtocolConfig, jobs: int = 1) -> ExperimentReport:
    """One binary task per target category id, source dataset -> target."""
    _require_mode(config, "one_vs_rest")
    if target_data.ids is None or source_data.ids is None:
        raise ConfigMismatch("one_vs_rest needs category ids on both datasets")
    if _needs_privileged(config) and not target_data.has_privileged:
        raise ConfigMismatch("target dataset lacks privileged features")
    categories = [str(c) for c in np.unique(target_data.ids)]
    arg_list = []
    for task_idx, name in enumerate(categories):
        source_model, source_failed = None, False
        try:
            labeled = _relabel(
                source_data, np.where(source_data.ids == name, 1, -1)
            )
            source_model, _ = _fit_via_grid(
                config.source_trainer, labeled, config.grids["source"], config
            )
        except LupiMarginError:
            source_failed = True
        positives = np.flatnonzero(target_data.ids == name)
        negatives = np.flatnonzero(target_data.ids != name)
        for repeat in range(config.repeats):
            arg_list.append((config, task_idx, name, target_data, positives,
                             negatives, source_model, source_failed, repeat))
    unit_lists = _run_units(_one_vs_rest_worker, arg_list, jobs)
    return _assemble(config, categories, unit_lists)


def run_ratio_sweep(data: TripletDataset, config: ProtocolConfig,
                    jobs: int = 1) -> ExperimentReport:
    """Retrain at growing training fractions and score the held-out rest."""
    _require_mode(config, "ratio_sweep")
    if _needs_privileged(config) and not data.has_privileged:
        raise ConfigMismatch("dataset lacks privileged features")
    pool = data.target_rows() if data.has_domains else data
    if pool.n == 0:
        raise ConfigMismatch("no target-domain rows to sweep over")
    source_model, source_failed = None, False
    if any(kind in ADAPTIVE_KINDS for kind in config.classifier_set):
        source_rows = data.source_rows()
        if source_rows.n == 0:
            source_failed = True
        else:
            try:
                source_model, _ = _fit_via_grid(
                    config.source_trainer, source_rows, config.grids["source"],
                    config,
                )
            except LupiMarginError:
                source_failed = True
    task_names = [f"ratio_{r:g}" for r in config.ratios]
    arg_list = [
        (config, task_idx, task_names[task_idx], ratio, pool, source_model,
         source_failed, repeat)
        for task_idx, ratio in enumerate(config.ratios)
        for repeat in range(config.repeats)
    ]
    unit_lists = _run_units(_ratio_worker, arg_list, jobs)
    return _assemble(config, task_names, unit_lists)
