"""Classification metrics and curriculum diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import EvaluationError


def confusion_matrix(y_true, y_pred, class_count):
    """Counts grid with rows = true class, columns = predicted class."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise EvaluationError("y_true and y_pred differ in length")
    cm = np.zeros((class_count, class_count), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def predict_labels(logits):
    """Row-wise argmax; ties resolve to the lowest class index."""
    return np.argmax(np.asarray(logits), axis=1)


def _checked(cm):
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise EvaluationError(f"confusion matrix must be square, got {cm.shape}")
    if np.any(cm < 0):
        raise EvaluationError("confusion matrix has negative counts")
    total = cm.sum()
    if total <= 0:
        raise EvaluationError("confusion matrix is empty")
    return cm, total


def accuracy(cm):
    cm, total = _checked(cm)
    return float(np.trace(cm) / total)


def per_class_f1(cm):
    cm, _ = _checked(cm)
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    support = cm.sum(axis=1).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(support > 0, tp / support, 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    return f1


def weighted_f1(cm):
    """Support-weighted mean of per-class F1; zero-support classes carry no weight."""
    cm, total = _checked(cm)
    support = cm.sum(axis=1).astype(np.float64)
    return float(np.sum(support * per_class_f1(cm)) / total)


def expanding_rate(selected, total):
    if total <= 0:
        raise EvaluationError("expanding rate needs a positive total")
    return selected / total


def modality_ratio(mean_true_prob):
    """Each modality's mean true-class probability relative to the weakest one.

    Returns None when some mean is not positive (ratio undefined that epoch).
    """
    means = {m: float(v) for m, v in mean_true_prob.items()}
    if not means or any(not v > 0 or not math.isfinite(v) for v in means.values()):
        return None
    floor = min(means.values())
    return {m: (1.0 if v == floor else v / floor) for m, v in means.items()}


def ratio_spread(ratios):
    """max/min of a modality-ratio map (the min is 1 by construction)."""
    return max(ratios.values()) / min(ratios.values())


@dataclass
class EpochDiagnostics:
    selected: int
    total: int
    lambda_value: float
    modality_ratio: dict | None
    mean_difficulty: float
    skipped_batches: int
    count_threshold: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def expanding_rate(self):
        return expanding_rate(self.selected, self.total)
