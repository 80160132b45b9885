"""Soft-margin SVM and its privileged-information extension.

Both trainers compile their duals into box/equality QPs and hand them to
``solve_qp``.  For the plain SVM the dual is

    min  0.5 a'(yy' * K)a - 1'a     s.t.  y'a = 0,  0 <= a <= C.

The privileged variant replaces the independent slacks with a correcting
function living in a second feature space: slack_i = <w*, x*_i> + b*.  Its
dual couples a second vector b (one multiplier per nonnegativity constraint
on the slacks) to a through the privileged Gram matrix K*:

    min  0.5 a'(yy' * K)a - 1'a + 1/(2 gamma) (a + b - C)' K* (a + b - C)
    s.t. y'a = 0,  1'(a + b - C) = 0,  a >= 0,  b >= 0.
"""
from __future__ import annotations

import numpy as np

from .errors import DegenerateLabels, DimensionMismatch
from .kernels import KernelSpec, linear_kernel, symmetric_gram
from .models import (CorrectingRecord, FitDiagnostics, TrainedModel,
                     _mean_or_fallback, sv_threshold)
from .qp import QPProblem, solve_qp


def _validate_training(X, y, C):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise DimensionMismatch("X must be a 2-d matrix")
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != X.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} rows but {y.shape[0]} labels")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be -1 or +1")
    if np.unique(y).size < 2:
        raise DegenerateLabels("training set contains a single class")
    if not C > 0:
        raise ValueError("C must be positive")
    return X, y


def fit_svm(X, y, C: float, kernel: KernelSpec = None, *, gram=None) -> TrainedModel:
    """Fit a soft-margin SVM; ``gram`` may carry a precomputed symmetric Gram of X."""
    kernel = kernel or linear_kernel()
    X, y = _validate_training(X, y, C)
    n = X.shape[0]
    K = np.asarray(gram, dtype=float) if gram is not None else symmetric_gram(kernel, X)
    H = K * np.outer(y, y)
    problem = QPProblem(
        H=H,
        q=-np.ones(n),
        A=y[None, :],
        c=np.zeros(1),
        lower=np.zeros(n),
        upper=np.full(n, float(C)),
    )
    sol = solve_qp(problem, hessian_check="trusted", start=np.zeros(n))
    alpha = np.asarray(sol.z)
    thr = sv_threshold(C)
    sv = alpha > thr

    s = K @ (alpha * y)
    free = sv & (alpha < C - thr)
    bias = _mean_or_fallback(y - s, free, sv, "the bias")

    return TrainedModel(
        kind="svm",
        sv_X=X[sv],
        sv_coeff=(alpha * y)[sv],
        bias=bias,
        kernel=kernel,
        C=float(C),
        diagnostics=FitDiagnostics(
            alpha=alpha, beta=None, dual_objective=-sol.objective,
            kkt_residual=sol.kkt_residual, iterations=sol.iterations,
        ),
    )


def _validate_privileged(X, Xstar):
    Xstar = np.asarray(Xstar, dtype=float)
    if Xstar.ndim == 1:
        Xstar = Xstar.reshape(-1, 1)
    if Xstar.ndim != 2:
        raise DimensionMismatch("Xstar must be a 2-d matrix")
    if Xstar.shape[0] != X.shape[0]:
        raise DimensionMismatch(
            f"X has {X.shape[0]} rows but Xstar has {Xstar.shape[0]}"
        )
    return Xstar


def _plus_quadratic(K, Kstar, y, C, gamma_priv, lam=None):
    """Shared assembly of the stacked (a, b) dual for the '+' trainers.

    Returns (H, q, constant) where constant restores the dropped C^2 term so
    that -(solution.objective + constant) is the true dual value.
    """
    n = K.shape[0]
    S = Kstar / gamma_priv
    H = np.empty((2 * n, 2 * n))
    H[:n, :n] = K * np.outer(y, y) + S
    H[:n, n:] = S
    H[n:, :n] = S
    H[n:, n:] = S
    srow = S @ np.ones(n)
    q = np.empty(2 * n)
    ones_term = np.ones(n) if lam is None else (1.0 - lam)
    q[:n] = -ones_term - C * srow
    q[n:] = -C * srow
    constant = 0.5 * C * C * float(np.ones(n) @ srow)
    return H, q, constant


def _recover_correcting(Xstar, Kstar, alpha, beta, C, gamma_priv, kernel_star,
                        y, s, lam, with_bias):
    """Correcting record, slack values and the decision bias, from one dual pair.

    ``s`` is the raw kernel expansion at the training points and ``lam`` the
    per-row margin credit of a frozen source model (zeros when there is none).
    Active beta coordinates pin the privileged bias directly.  When none are
    active the nonnegativity of the correcting function never binds, and both
    offsets come from the margin support vectors instead: each row with active
    alpha satisfies y_i * b + d = 1 - lam_i - y_i * s_i - wstar_i, which fixes
    (b, d) as soon as both classes contribute.
    """
    v = alpha + beta - C
    thr = sv_threshold(C)
    wstar_at_train = Kstar @ (v / gamma_priv)
    bsv = beta > thr
    asv = alpha > thr
    resid = 1.0 - lam - y * s - wstar_at_train
    if bsv.any():
        bias_star = float(np.mean(-wstar_at_train[bsv]))
        xi = np.maximum(0.0, wstar_at_train + bias_star)
        if with_bias:
            bias = _mean_or_fallback(y * (1.0 - xi - lam) - s, asv, asv, "the bias")
        else:
            bias = 0.0
    elif not with_bias:
        bias = 0.0
        bias_star = _mean_or_fallback(resid, asv, asv, "the privileged bias")
        xi = np.maximum(0.0, wstar_at_train + bias_star)
    else:
        pos = asv & (y > 0)
        neg = asv & (y < 0)
        if pos.any() and neg.any():
            rp = float(np.mean(resid[pos]))
            rn = float(np.mean(resid[neg]))
            bias = 0.5 * (rp - rn)
            bias_star = 0.5 * (rp + rn)
        else:
            bias = 0.0
            bias_star = _mean_or_fallback(resid, asv, asv, "the privileged bias")
        xi = np.maximum(0.0, wstar_at_train + bias_star)
    keep = np.abs(v) > thr
    record = CorrectingRecord(
        sv_Xstar=Xstar[keep],
        corr_coeff=(v / gamma_priv)[keep],
        bias_star=bias_star,
        kernel_star=kernel_star,
    )
    return record, xi, bias


def fit_svm_plus(X, Xstar, y, C: float, gamma_priv: float,
                 kernel: KernelSpec = None, kernel_star: KernelSpec = None,
                 *, gram=None, gram_star=None) -> TrainedModel:
    """Fit an SVM whose slacks are a function learned in the privileged space."""
    kernel = kernel or linear_kernel()
    kernel_star = kernel_star or linear_kernel()
    X, y = _validate_training(X, y, C)
    Xstar = _validate_privileged(X, Xstar)
    if not gamma_priv > 0:
        raise ValueError("gamma_priv must be positive")
    n = X.shape[0]
    K = np.asarray(gram, dtype=float) if gram is not None else symmetric_gram(kernel, X)
    Kstar = (np.asarray(gram_star, dtype=float) if gram_star is not None
             else symmetric_gram(kernel_star, Xstar))

    H, q, constant = _plus_quadratic(K, Kstar, y, C, gamma_priv)
    A = np.zeros((2, 2 * n))
    A[0, :n] = y
    A[1, :] = 1.0
    problem = QPProblem(
        H=H, q=q, A=A, c=np.array([0.0, n * float(C)]),
        lower=np.zeros(2 * n), upper=np.full(2 * n, np.inf),
    )
    start = np.concatenate([np.zeros(n), np.full(n, float(C))])
    sol = solve_qp(problem, hessian_check="trusted", start=start)
    alpha = np.asarray(sol.z[:n])
    beta = np.asarray(sol.z[n:])
    thr = sv_threshold(C)

    s = K @ (alpha * y)
    asv = alpha > thr
    record, xi, bias = _recover_correcting(
        Xstar, Kstar, alpha, beta, C, gamma_priv, kernel_star,
        y, s, np.zeros(n), with_bias=True,
    )

    return TrainedModel(
        kind="svm_plus",
        sv_X=X[asv],
        sv_coeff=(alpha * y)[asv],
        bias=bias,
        kernel=kernel,
        C=float(C),
        gamma_priv=float(gamma_priv),
        correcting=record,
        diagnostics=FitDiagnostics(
            alpha=alpha, beta=beta, dual_objective=-(sol.objective + constant),
            kkt_residual=sol.kkt_residual, iterations=sol.iterations,
        ),
    )
