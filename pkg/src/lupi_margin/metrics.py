"""Ranking and classification metrics plus the two-sample z-test."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVariance, Empty, LengthMismatch, NoPositives


@dataclass(frozen=True)
class ScoredPredictions:
    """Decision scores with ground-truth labels; ``predicted`` is optional."""

    scores: np.ndarray
    labels: np.ndarray
    predicted: np.ndarray | None = None

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float).ravel()
        labels = np.asarray(self.labels).ravel()
        if scores.shape[0] != labels.shape[0]:
            raise LengthMismatch(
                f"{scores.shape[0]} scores but {labels.shape[0]} labels"
            )
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels.astype(int))


def average_precision(predictions: ScoredPredictions) -> float:
    """Interpolation-free average precision.

    Samples are ranked by decreasing score, ties kept in original order, and
    precision is averaged over the ranks that hold a positive.
    """
    scores = predictions.scores
    labels = predictions.labels
    positives = int(np.sum(labels == 1))
    if positives == 0:
        raise NoPositives("average precision needs at least one positive label")
    order = np.argsort(-scores, kind="stable")
    hit = labels[order] == 1
    cum = np.cumsum(hit)
    ranks = np.arange(1, scores.shape[0] + 1)
    return float(np.sum(cum[hit] / ranks[hit]) / positives)


def accuracy(predicted, truth) -> float:
    predicted = np.asarray(predicted).ravel()
    truth = np.asarray(truth).ravel()
    if predicted.shape[0] != truth.shape[0]:
        raise LengthMismatch(f"{predicted.shape[0]} predictions but {truth.shape[0]} labels")
    if predicted.shape[0] == 0:
        raise Empty("accuracy of an empty prediction set is undefined")
    return float(np.mean(predicted == truth))


def mean_and_stderr(values) -> tuple[float, float]:
    """Sample mean and the standard error sd(n-1)/sqrt(n); stderr is 0 for n = 1."""
    values = np.asarray(values, dtype=float).ravel()
    n = values.shape[0]
    if n == 0:
        raise Empty("cannot aggregate zero values")
    mean = float(np.mean(values))
    if n == 1:
        return mean, 0.0
    sd = float(np.std(values, ddof=1))
    return mean, sd / math.sqrt(n)


def z_test(mean_a: float, stderr_a: float, mean_b: float, stderr_b: float) -> tuple[float, bool]:
    """Two-sample z statistic and whether |z| reaches the 0.05 level (1.96)."""
    denom = math.sqrt(stderr_a ** 2 + stderr_b ** 2)
    if denom == 0.0:
        raise DegenerateVariance("both standard errors are zero")
    z = (mean_a - mean_b) / denom
    return float(z), bool(abs(z) >= 1.96)
