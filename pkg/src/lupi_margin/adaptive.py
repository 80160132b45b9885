"""Source-to-target adaptation of the max-margin trainers.

Instead of learning a decision function from scratch, these trainers learn a
delta on top of a frozen source model: f(x) = f_source(x) + delta(x) [+ b].
Writing lam[i] = y[i] * f_source(x_i), a training point the source already
classifies with margin >= 1 contributes nothing to the loss, so the dual's
linear term becomes (1 - lam) and confident source predictions switch the
delta off.

``fit_adaptive_svm`` keeps independent slacks; ``fit_adaptive_svm_plus``
models them with a privileged-space correcting function as in ``fit_svm_plus``.
The delta function of both trainers carries no intercept by default: the
adapted constraint set fixes no offset, so ``bias_mode="none"`` pins b = 0 and
omits the label-sum equality from the dual.  ``bias_mode="constrained"`` adds
that equality back and recovers b from the active margin constraints.
"""
from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, MissingSource
from .kernels import KernelSpec, linear_kernel, symmetric_gram
from .models import (FitDiagnostics, SourceScores, TrainedModel,
                     _mean_or_fallback, sv_threshold)
from .qp import QPProblem, solve_qp
from .svm import _plus_quadratic, _recover_correcting, _validate_privileged, _validate_training

BIAS_MODES = ("none", "constrained")


def _validate_scores(scores: SourceScores, n: int):
    if scores.source_model is None:
        raise MissingSource("SourceScores must carry the source model that produced them")
    lam = np.asarray(scores.lam, dtype=float).ravel()
    if lam.shape[0] != n:
        raise DimensionMismatch(f"{n} training rows but {lam.shape[0]} source scores")
    return lam


def fit_adaptive_svm(X, y, C: float, kernel: KernelSpec = None,
                     scores: SourceScores = None, *, gram=None) -> TrainedModel:
    """Learn a bias-free delta over a frozen source model with hinge slacks."""
    kernel = kernel or linear_kernel()
    X, y = _validate_training(X, y, C)
    n = X.shape[0]
    if scores is None:
        raise MissingSource("fit_adaptive_svm requires source scores")
    lam = _validate_scores(scores, n)
    K = np.asarray(gram, dtype=float) if gram is not None else symmetric_gram(kernel, X)
    problem = QPProblem(
        H=K * np.outer(y, y),
        q=-(1.0 - lam),
        A=np.zeros((0, n)),
        c=np.zeros(0),
        lower=np.zeros(n),
        upper=np.full(n, float(C)),
    )
    sol = solve_qp(problem, hessian_check="trusted", start=np.zeros(n))
    alpha = np.asarray(sol.z)
    sv = alpha > sv_threshold(C)
    return TrainedModel(
        kind="adaptive_svm",
        sv_X=X[sv],
        sv_coeff=(alpha * y)[sv],
        bias=0.0,
        kernel=kernel,
        C=float(C),
        source=scores.source_model,
        diagnostics=FitDiagnostics(
            alpha=alpha, beta=None, dual_objective=-sol.objective,
            kkt_residual=sol.kkt_residual, iterations=sol.iterations,
        ),
    )


def fit_adaptive_svm_plus(X, Xstar, y, C: float, gamma_priv: float,
                          kernel: KernelSpec = None, kernel_star: KernelSpec = None,
                          scores: SourceScores = None, bias_mode: str = "none",
                          *, gram=None, gram_star=None) -> TrainedModel:
    """Learn a delta over a frozen source model with privileged-space slacks."""
    kernel = kernel or linear_kernel()
    kernel_star = kernel_star or linear_kernel()
    if bias_mode not in BIAS_MODES:
        raise ValueError(f"bias_mode must be one of {BIAS_MODES}")
    X, y = _validate_training(X, y, C)
    Xstar = _validate_privileged(X, Xstar)
    if not gamma_priv > 0:
        raise ValueError("gamma_priv must be positive")
    n = X.shape[0]
    if scores is None:
        raise MissingSource("fit_adaptive_svm_plus requires source scores")
    lam = _validate_scores(scores, n)
    K = np.asarray(gram, dtype=float) if gram is not None else symmetric_gram(kernel, X)
    Kstar = (np.asarray(gram_star, dtype=float) if gram_star is not None
             else symmetric_gram(kernel_star, Xstar))

    H, q, constant = _plus_quadratic(K, Kstar, y, C, gamma_priv, lam=lam)
    if bias_mode == "constrained":
        A = np.zeros((2, 2 * n))
        A[0, :n] = y
        A[1, :] = 1.0
        c = np.array([0.0, n * float(C)])
    else:
        A = np.ones((1, 2 * n))
        c = np.array([n * float(C)])
    problem = QPProblem(
        H=H, q=q, A=A, c=c,
        lower=np.zeros(2 * n), upper=np.full(2 * n, np.inf),
    )
    start = np.concatenate([np.zeros(n), np.full(n, float(C))])
    sol = solve_qp(problem, hessian_check="trusted", start=start)
    alpha = np.asarray(sol.z[:n])
    beta = np.asarray(sol.z[n:])
    thr = sv_threshold(C)

    record, xi = _recover_correcting(Xstar, Kstar, alpha, beta, C, gamma_priv, kernel_star)
    if bias_mode == "constrained":
        s = K @ (alpha * y)
        asv = alpha > thr
        bias = _mean_or_fallback(y * (1.0 - xi) - scores.fs_values - s, asv, asv, "the bias")
    else:
        bias = 0.0

    sv = alpha > thr
    return TrainedModel(
        kind="adaptive_svm_plus",
        sv_X=X[sv],
        sv_coeff=(alpha * y)[sv],
        bias=bias,
        kernel=kernel,
        C=float(C),
        gamma_priv=float(gamma_priv),
        source=scores.source_model,
        correcting=record,
        diagnostics=FitDiagnostics(
            alpha=alpha, beta=beta, dual_objective=-(sol.objective + constant),
            kkt_residual=sol.kkt_residual, iterations=sol.iterations,
        ),
    )
