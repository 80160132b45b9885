"""Trained-model containers and decision functions.

A ``TrainedModel`` stores a kernel expansion (support vectors and their signed
dual weights), a bias, and optionally two attachments: a ``correcting`` record
describing the privileged-space slack function learned by the "+" variants,
and a nested ``source`` model for the adaptive variants, whose decision values
are added to the learned delta at prediction time.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, MissingSource
from .kernels import KernelSpec, gram_matrix

MODEL_KINDS = ("svm", "svm_plus", "adaptive_svm", "adaptive_svm_plus")
PLUS_KINDS = ("svm_plus", "adaptive_svm_plus")
ADAPTIVE_KINDS = ("adaptive_svm", "adaptive_svm_plus")


def sv_threshold(C: float) -> float:
    """Dual weights at or below this are treated as zero when extracting SVs."""
    return 1e-8 * max(1.0, C)


@dataclass(frozen=True)
class CorrectingRecord:
    """Privileged-space slack function: xi(x*) = sum_j corr_coeff[j] k*(sv[j], x*) + bias_star."""

    sv_Xstar: np.ndarray
    corr_coeff: np.ndarray
    bias_star: float
    kernel_star: KernelSpec

    def values(self, Xstar) -> np.ndarray:
        Xstar = np.asarray(Xstar, dtype=float)
        if Xstar.ndim == 1:
            Xstar = Xstar.reshape(-1, 1) if self.sv_Xstar.shape[1] == 1 else Xstar.reshape(1, -1)
        if self.sv_Xstar.shape[0] == 0:
            return np.full(Xstar.shape[0], self.bias_star)
        return self.corr_coeff @ gram_matrix(self.kernel_star, self.sv_Xstar, Xstar) + self.bias_star


@dataclass(frozen=True)
class FitDiagnostics:
    """Raw dual variables and solver summary kept for certification and tests."""

    alpha: np.ndarray
    beta: np.ndarray | None
    dual_objective: float
    kkt_residual: float
    iterations: int

    def __repr__(self):  # keep reprs of models readable
        return (f"FitDiagnostics(n={self.alpha.shape[0]}, "
                f"kkt_residual={self.kkt_residual:.2e}, iterations={self.iterations})")


@dataclass(frozen=True)
class TrainedModel:
    kind: str
    sv_X: np.ndarray
    sv_coeff: np.ndarray
    bias: float
    kernel: KernelSpec
    C: float
    gamma_priv: float | None = None
    source: "TrainedModel | None" = None
    correcting: CorrectingRecord | None = None
    diagnostics: FitDiagnostics | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        sv_X = np.asarray(self.sv_X, dtype=float)
        if sv_X.ndim != 2:
            raise DimensionMismatch("sv_X must be 2-d")
        coeff = np.asarray(self.sv_coeff, dtype=float).ravel()
        if coeff.shape[0] != sv_X.shape[0]:
            raise DimensionMismatch("sv_X rows and sv_coeff length disagree")
        if (self.kind in PLUS_KINDS) != (self.correcting is not None):
            raise ValueError("correcting record must be present exactly for the '+' kinds")
        if (self.kind in ADAPTIVE_KINDS) and self.source is None:
            raise MissingSource(f"{self.kind} model requires an embedded source model")
        if (self.kind not in ADAPTIVE_KINDS) and self.source is not None:
            raise ValueError(f"{self.kind} model cannot embed a source model")
        object.__setattr__(self, "sv_X", sv_X)
        object.__setattr__(self, "sv_coeff", coeff)

    @property
    def n_sv(self) -> int:
        return self.sv_X.shape[0]


@dataclass(frozen=True)
class SourceScores:
    """Source-model decision values on a training set and lam[i] = y[i] * fs_values[i]."""

    fs_values: np.ndarray
    lam: np.ndarray
    source_model: TrainedModel | None = None


def _check_features(model: TrainedModel, X: np.ndarray):
    if model.sv_X.shape[0] and X.shape[1] != model.sv_X.shape[1]:
        raise DimensionMismatch(
            f"model expects {model.sv_X.shape[1]} features, got {X.shape[1]}"
        )


def decision_values(model: TrainedModel, X) -> np.ndarray:
    """Real-valued decision function; adaptive kinds add the source decision."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2:
        raise DimensionMismatch("X must be a 2-d matrix")
    if model.kind in ADAPTIVE_KINDS:
        return adapted_decision(model, X)
    if X.shape[0] == 0:
        return np.zeros(0)
    _check_features(model, X)
    if model.n_sv == 0:
        return np.full(X.shape[0], model.bias)
    return model.sv_coeff @ gram_matrix(model.kernel, model.sv_X, X) + model.bias


def adapted_decision(model: TrainedModel, X) -> np.ndarray:
    """Source decision plus the learned delta plus the bias."""
    if model.kind not in ADAPTIVE_KINDS:
        raise ValueError(f"adapted_decision needs an adaptive model, got {model.kind!r}")
    if model.source is None:
        raise MissingSource("adaptive model has no source attached")
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[0] == 0:
        return np.zeros(0)
    base = decision_values(model.source, X)
    _check_features(model, X)
    if model.n_sv == 0:
        return base + model.bias
    delta = model.sv_coeff @ gram_matrix(model.kernel, model.sv_X, X)
    return base + delta + model.bias


def predict(model: TrainedModel, X) -> np.ndarray:
    """Hard labels in {-1, +1}; a decision value of exactly 0 maps to +1."""
    d = decision_values(model, X)
    return np.where(d >= 0.0, 1, -1).astype(int)


def source_scores(source_model: TrainedModel, X, y) -> SourceScores:
    """Evaluate a frozen source model on (X, y) for use by the adaptive trainers."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DimensionMismatch("X rows and y length disagree")
    fs = decision_values(source_model, X)
    return SourceScores(fs_values=fs, lam=y * fs, source_model=source_model)


def _mean_or_fallback(values: np.ndarray, mask: np.ndarray, fallback_mask: np.ndarray,
                      what: str) -> float:
    """Average over mask; fall back to a wider mask, then to 0 with a warning."""
    if mask.any():
        return float(np.mean(values[mask]))
    if fallback_mask.any():
        return float(np.mean(values[fallback_mask]))
    warnings.warn(f"no support vectors available to recover {what}; using 0", stacklevel=3)
    return 0.0
