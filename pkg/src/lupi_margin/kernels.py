"""Kernel evaluation for the decision space and the privileged space."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch

VALID_KINDS = ("linear", "rbf")


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus its parameters; ``rbf_gamma`` is only meaningful for "rbf"."""

    kind: str
    rbf_gamma: float | None = None

    def __post_init__(self):
        if self.kind not in VALID_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}; expected one of {VALID_KINDS}")
        if self.kind == "rbf":
            if self.rbf_gamma is None or not float(self.rbf_gamma) > 0.0:
                raise ValueError("rbf kernel requires rbf_gamma > 0")
            object.__setattr__(self, "rbf_gamma", float(self.rbf_gamma))
        elif self.rbf_gamma is not None:
            raise ValueError("linear kernel carries no parameters")


def linear_kernel() -> KernelSpec:
    return KernelSpec("linear")


def rbf_kernel(gamma: float) -> KernelSpec:
    return KernelSpec("rbf", float(gamma))


def _as_vector(v) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1:
        raise DimensionMismatch(f"expected a 1-d vector, got shape {arr.shape}")
    return arr


def _as_matrix(M) -> np.ndarray:
    arr = np.asarray(M, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionMismatch(f"expected a 2-d matrix, got shape {arr.shape}")
    return arr


def eval_kernel(spec: KernelSpec, x, z) -> float:
    """Scalar kernel value k(x, z)."""
    x = _as_vector(x)
    z = _as_vector(z)
    if x.shape != z.shape:
        raise DimensionMismatch(f"kernel arguments disagree: {x.shape} vs {z.shape}")
    if spec.kind == "linear":
        return float(x @ z)
    d = x - z
    return float(np.exp(-spec.rbf_gamma * (d @ d)))


def gram_matrix(spec: KernelSpec, X, Z) -> np.ndarray:
    """Cross Gram matrix with entries k(X[i], Z[j])."""
    X = _as_matrix(X)
    Z = _as_matrix(Z)
    if X.shape[1] != Z.shape[1]:
        raise DimensionMismatch(
            f"feature width mismatch: {X.shape[1]} vs {Z.shape[1]}"
        )
    if spec.kind == "linear":
        return X @ Z.T
    sq = np.sum(X * X, axis=1)[:, None] + np.sum(Z * Z, axis=1)[None, :] - 2.0 * (X @ Z.T)
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-spec.rbf_gamma * sq)

def symmetric_gram(spec: KernelSpec, X) -> np.ndarray:
    """Square Gram of X against itself, symmetrized as (G + G.T)/2 before any QP use."""
    G = gram_matrix(spec, X, X)
    return 0.5 * (G + G.T)
