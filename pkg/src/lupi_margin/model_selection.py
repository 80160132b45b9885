"""Cross-validated hyperparameter search shared by all four trainers.

A ``ClassifierTrainer`` pins everything that is not searched (model kind,
kernel shapes, bias handling, where the pretrained scorer comes from); a
``CVGrid`` describes what is searched.  ``grid_search`` walks the grid in
ascending parameter order, scores each cell by stratified k-fold mean of the
chosen metric, and keeps the first strict maximum, so ties resolve toward the
smallest hyperparameters.  Cells whose fits fail score ``-inf`` and carry the
error text instead of aborting the sweep.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .adaptive import BIAS_MODES, fit_adaptive_svm, fit_adaptive_svm_plus
from .errors import (ConfigMismatch, LupiMarginError, MissingSource,
                     SolverFailure, TooFewSamples)
from .data_io import TripletDataset
from .kernels import KernelSpec, symmetric_gram
from .metrics import ScoredPredictions, accuracy, average_precision
from .models import (ADAPTIVE_KINDS, MODEL_KINDS, PLUS_KINDS, TrainedModel,
                     decision_values, predict, source_scores)
from .svm import fit_svm, fit_svm_plus

METRIC_NAMES = ("average_precision", "accuracy")
SOURCE_KINDS = ("svm", "svm_plus")


def decade_grid(low_exp: int, high_exp: int) -> tuple:
    """Powers of ten from ``10**low_exp`` through ``10**high_exp`` inclusive."""
    if high_exp < low_exp:
        raise ValueError("high_exp must not be below low_exp")
    return tuple(10.0 ** e for e in range(low_exp, high_exp + 1))


def _positive_tuple(values, name):
    out = tuple(float(v) for v in values)
    if not out:
        raise ValueError(f"{name} must be nonempty")
    if any(not v > 0 for v in out):
        raise ValueError(f"{name} must be positive")
    if list(out) != sorted(out):
        raise ValueError(f"{name} must be sorted ascending")
    return out


@dataclass(frozen=True)
class CVGrid:
    """Search space plus fold count, scoring metric, and shuffle seed."""

    c_values: tuple
    gamma_values: tuple | None = None
    rbf_gamma_values: tuple | None = None
    folds: int = 5
    metric: str = "average_precision"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "c_values", _positive_tuple(self.c_values, "c_values"))
        if self.gamma_values is not None:
            object.__setattr__(
                self, "gamma_values", _positive_tuple(self.gamma_values, "gamma_values")
            )
        if self.rbf_gamma_values is not None:
            object.__setattr__(
                self,
                "rbf_gamma_values",
                _positive_tuple(self.rbf_gamma_values, "rbf_gamma_values"),
            )
        if self.folds < 2:
            raise ValueError("folds must be at least 2")
        if self.metric not in METRIC_NAMES:
            raise ValueError(f"metric must be one of {METRIC_NAMES}")


@dataclass(frozen=True)
class ParamPoint:
    """One grid cell: box penalty, privileged weight, kernel width."""

    C: float
    gamma_priv: float | None = None
    rbf_gamma: float | None = None

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be positive")
        if self.gamma_priv is not None and not self.gamma_priv > 0:
            raise ValueError("gamma_priv must be positive")
        if self.rbf_gamma is not None and not self.rbf_gamma > 0:
            raise ValueError("rbf_gamma must be positive")


@dataclass(frozen=True)
class RefitSpec:
    """Recipe for fitting the pretrained scorer inside each training fold.

    Used when the scorer's own training rows live inside the data being
    cross-validated; the scorer is refit on the source-domain rows of every
    fold so held-out rows never leak into it.
    """

    kind: str
    point: ParamPoint
    kernel: KernelSpec | None = None
    kernel_star: KernelSpec | None = None

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise ValueError(f"refit kind must be one of {SOURCE_KINDS}")
        if self.kind == "svm_plus" and self.point.gamma_priv is None:
            raise ConfigMismatch("svm_plus refit needs a gamma_priv in its point")


@dataclass(frozen=True)
class ClassifierTrainer:
    """Everything fixed about a classifier while the grid is searched."""

    kind: str
    kernel: KernelSpec | None = None
    kernel_star: KernelSpec | None = None
    bias_mode: str = "none"
    source_model: TrainedModel | None = None
    source_refit: RefitSpec | None = None

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"kind must be one of {MODEL_KINDS}")
        adaptive = self.kind in ADAPTIVE_KINDS
        if adaptive:
            if self.source_model is None and self.source_refit is None:
                raise MissingSource(f"{self.kind} needs source_model or source_refit")
            if self.source_model is not None and self.source_refit is not None:
                raise ConfigMismatch("give source_model or source_refit, not both")
        elif self.source_model is not None or self.source_refit is not None:
            raise ConfigMismatch(f"{self.kind} does not take a pretrained scorer")
        if self.kind not in PLUS_KINDS and self.kernel_star is not None:
            raise ConfigMismatch(f"{self.kind} does not take a privileged kernel")
        if self.bias_mode not in BIAS_MODES:
            raise ValueError(f"bias_mode must be one of {BIAS_MODES}")


@dataclass(frozen=True)
class CellResult:
    point: ParamPoint
    score: float
    error: str | None = None


@dataclass(frozen=True)
class GridSearchResult:
    best: ParamPoint
    best_score: float
    cells: tuple

    def failed_cells(self) -> tuple:
        return tuple(c for c in self.cells if c.error is not None)


def kfold_indices(n: int, k: int, labels, seed: int):
    """Stratified k-fold assignments as ``(train, validate)`` sorted index pairs.

    Each class is shuffled with its own slice of the seeded generator and
    chunked; chunk-to-fold assignment rotates with the class position so
    uneven remainders spread across folds instead of piling into the first.
    Every class must have at least ``k`` members, which keeps each fold's
    class ratio within one sample of the global ratio.
    """
    labels = np.asarray(labels).ravel()
    if labels.shape[0] != n:
        raise ValueError(f"n={n} disagrees with {labels.shape[0]} labels")
    if k < 2:
        raise ValueError("k must be at least 2")
    rng = np.random.default_rng(seed)
    validate_sets = [[] for _ in range(k)]
    for pos, value in enumerate(np.unique(labels)):
        members = np.flatnonzero(labels == value)
        if members.shape[0] < k:
            raise TooFewSamples(
                f"class {value} has {members.shape[0]} rows; k={k} folds need {k}"
            )
        perm = rng.permutation(members)
        for chunk_idx, chunk in enumerate(np.array_split(perm, k)):
            validate_sets[(chunk_idx + pos) % k].append(chunk)
    out = []
    everything = np.arange(n)
    for parts in validate_sets:
        validate = np.sort(np.concatenate(parts))
        train = np.setdiff1d(everything, validate)
        out.append((train, validate))
    return out


def _resolve_kernel(template: KernelSpec | None, rbf_gamma: float | None) -> KernelSpec:
    if rbf_gamma is None:
        return template if template is not None else KernelSpec("linear")
    if template is not None and template.kind != "rbf":
        raise ConfigMismatch("rbf_gamma searched but the kernel template is not rbf")
    return KernelSpec("rbf", rbf_gamma)


def _points(trainer: ClassifierTrainer, grid: CVGrid):
    plus = trainer.kind in PLUS_KINDS
    if plus and grid.gamma_values is None:
        raise ConfigMismatch(f"{trainer.kind} needs gamma_values in the grid")
    if not plus and grid.gamma_values is not None:
        raise ConfigMismatch(f"{trainer.kind} takes no gamma_values")
    gammas = grid.gamma_values if plus else (None,)
    rbfs = grid.rbf_gamma_values if grid.rbf_gamma_values is not None else (None,)
    if grid.rbf_gamma_values is not None and trainer.kernel is not None \
            and trainer.kernel.kind != "rbf":
        raise ConfigMismatch("rbf_gamma_values given for a non-rbf kernel template")
    return [
        ParamPoint(C=c, gamma_priv=g, rbf_gamma=r)
        for c, g, r in itertools.product(grid.c_values, gammas, rbfs)
    ]


def _require_privileged(data: TripletDataset, kind: str):
    if data.Xstar is None:
        raise ConfigMismatch(f"{kind} needs privileged features")


def _fit_source(refit: RefitSpec, rows: TripletDataset) -> TrainedModel:
    if rows.n == 0:
        raise MissingSource("no source-domain rows available for the scorer refit")
    kernel = _resolve_kernel(refit.kernel, refit.point.rbf_gamma)
    if refit.kind == "svm":
        return fit_svm(rows.X, rows.y, refit.point.C, kernel=kernel)
    _require_privileged(rows, refit.kind)
    return fit_svm_plus(
        rows.X, rows.Xstar, rows.y, refit.point.C, refit.point.gamma_priv,
        kernel=kernel, kernel_star=refit.kernel_star,
    )


def _fit_one(trainer, rows, point, kernel, scores, gram, gram_star):
    if trainer.kind == "svm":
        return fit_svm(rows.X, rows.y, point.C, kernel=kernel, gram=gram)
    if trainer.kind == "svm_plus":
        _require_privileged(rows, trainer.kind)
        return fit_svm_plus(
            rows.X, rows.Xstar, rows.y, point.C, point.gamma_priv,
            kernel=kernel, kernel_star=trainer.kernel_star,
            gram=gram, gram_star=gram_star,
        )
    if trainer.kind == "adaptive_svm":
        return fit_adaptive_svm(rows.X, rows.y, point.C, kernel=kernel,
                                scores=scores, gram=gram)
    _require_privileged(rows, trainer.kind)
    return fit_adaptive_svm_plus(
        rows.X, rows.Xstar, rows.y, point.C, point.gamma_priv,
        kernel=kernel, kernel_star=trainer.kernel_star, scores=scores,
        bias_mode=trainer.bias_mode, gram=gram, gram_star=gram_star,
    )


def _metric_value(metric: str, model: TrainedModel, rows: TripletDataset) -> float:
    if metric == "average_precision":
        return average_precision(
            ScoredPredictions(decision_values(model, rows.X), rows.y)
        )
    return accuracy(predict(model, rows.X), rows.y)


def grid_search(trainer: ClassifierTrainer, data: TripletDataset,
                grid: CVGrid) -> GridSearchResult:
    """Score every grid cell by cross-validation and pick the best one.

    Gram matrices are computed once per distinct kernel over the full data and
    sliced per fold.  For adaptive kinds the pretrained scorer and its scores
    on each training fold are fixed before the sweep, since neither depends on
    the searched parameters.
    """
    points = _points(trainer, grid)
    folds = kfold_indices(data.n, grid.folds, data.y, grid.seed)
    plus = trainer.kind in PLUS_KINDS
    adaptive = trainer.kind in ADAPTIVE_KINDS

    gram_star_full = None
    if plus:
        _require_privileged(data, trainer.kind)
        star = trainer.kernel_star if trainer.kernel_star is not None else KernelSpec("linear")
        gram_star_full = symmetric_gram(star, data.Xstar)

    fold_ctx = []
    for train_idx, test_idx in folds:
        scores = None
        if adaptive:
            if trainer.source_model is not None:
                src = trainer.source_model
            else:
                src = _fit_source(trainer.source_refit,
                                  data.subset(train_idx).source_rows())
            scores = source_scores(src, data.X[train_idx], data.y[train_idx])
        fold_ctx.append((train_idx, test_idx, scores))

    gram_cache: dict = {}

    def full_gram(spec: KernelSpec) -> np.ndarray:
        if spec not in gram_cache:
            gram_cache[spec] = symmetric_gram(spec, data.X)
        return gram_cache[spec]

    cells = []
    best_point = None
    best_score = -math.inf
    for point in points:
        kernel = _resolve_kernel(trainer.kernel, point.rbf_gamma)
        K = full_gram(kernel)
        values = []
        error = None
        for train_idx, test_idx, scores in fold_ctx:
            sub = np.ix_(train_idx, train_idx)
            try:
                model = _fit_one(
                    trainer, data.subset(train_idx), point, kernel, scores,
                    K[sub],
                    gram_star_full[sub] if gram_star_full is not None else None,
                )
                values.append(_metric_value(grid.metric, model, data.subset(test_idx)))
            except LupiMarginError as exc:
                error = f"{type(exc).__name__}: {exc}"
                break
        score = -math.inf if error is not None else float(np.mean(values))
        cells.append(CellResult(point=point, score=score, error=error))
        if score > best_score:
            best_score = score
            best_point = point
    if best_point is None:
        first = next(c.error for c in cells if c.error)
        raise SolverFailure(f"every grid cell failed; first failure: {first}")
    return GridSearchResult(best=best_point, best_score=best_score, cells=tuple(cells))


def retrain_full(trainer: ClassifierTrainer, data: TripletDataset,
                 point: ParamPoint) -> TrainedModel:
    """Fit the trainer on all rows at one parameter point (post-search refit)."""
    kernel = _resolve_kernel(trainer.kernel, point.rbf_gamma)
    scores = None
    if trainer.kind in ADAPTIVE_KINDS:
        if trainer.source_model is not None:
            src = trainer.source_model
        else:
            src = _fit_source(trainer.source_refit, data.source_rows())
        scores = source_scores(src, data.X, data.y)
    return _fit_one(trainer, data, point, kernel, scores, None, None)
