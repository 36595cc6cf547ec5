"""Classification metrics and batched evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ..autodiff.optim import weighted_cross_entropy
from ..autodiff.tensor import Tensor


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Rows are true classes, columns predictions."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def per_class_f1(cm: np.ndarray) -> np.ndarray:
    """F1 per class with the 0/0 -> 0 convention (so absent classes score 0)."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    return np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)


def macro_f1(cm: np.ndarray) -> float:
    """Unweighted mean of per-class F1, evaluated in exact rationals and rounded once."""
    cm = np.asarray(cm, dtype=np.int64)
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    total = sum((Fraction(2 * int(t), int(2 * t + p + n)) for t, p, n in zip(tp, fp, fn) if 2 * t + p + n),
                Fraction(0))
    return float(total / len(tp))


def accuracy(cm: np.ndarray) -> float:
    total = cm.sum()
    return float(np.trace(cm) / total) if total else 0.0


def pr_points(logits: np.ndarray, labels, n_classes: int, max_points: int = 50) -> list:
    """One-vs-rest (class, threshold, precision, recall) rows, thresholds taken from the logits.

    A threshold predicts positive when ``logit >= threshold``. At most
    ``max_points`` thresholds per class, spread over the logit quantiles.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    rows = []
    for c in range(n_classes):
        score = logits[:, c]
        pos = labels == c
        thr = np.unique(score)
        if len(thr) > max_points:
            thr = np.unique(np.quantile(score, np.linspace(0, 1, max_points)))
        for t in thr:
            pred = score >= t
            tp = int(np.sum(pred & pos))
            n_pred = int(pred.sum())
            precision = tp / n_pred if n_pred else 1.0
            recall = tp / int(pos.sum()) if pos.any() else 0.0
            rows.append((c, float(t), precision, recall))
    return rows


@dataclass
class MetricsReport:
    accuracy: float
    macro_f1: float
    confusion: np.ndarray
    loss: float
    pr: list = field(default_factory=list)
    n: int = 0

    def scalars(self) -> dict:
        return {"accuracy": self.accuracy, "macro_f1": self.macro_f1, "loss": self.loss, "n": self.n}

    def to_dict(self) -> dict:
        return {**self.scalars(), "confusion_matrix": self.confusion.tolist()}


def report_from_logits(logits, labels, n_classes: int, loss: float = float("nan")) -> MetricsReport:
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    cm = confusion_matrix(labels, logits.argmax(axis=1), n_classes)
    return MetricsReport(accuracy(cm), macro_f1(cm), cm, loss, pr_points(logits, labels, n_classes), len(labels))


def predict(model, ds, batch_size: int = 64, return_fused: bool = False):
    """Eval-mode logits (and optionally fused embeddings) for every window in order."""
    model.eval()
    logits, fused = [], []
    for batch in ds.batches(batch_size):
        out = model(batch, return_fused=return_fused)
        logits.append(out[0].data)
        if return_fused:
            fused.append(out[2].data)
    logits = np.concatenate(logits)
    return (logits, np.concatenate(fused)) if return_fused else logits


def evaluate(model, ds, n_classes: int = 7, class_weights=None, batch_size: int = 64) -> MetricsReport:
    """Accuracy, macro-F1, confusion matrix, PR points and (weighted) cross-entropy."""
    if len(ds) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    logits = predict(model, ds, batch_size)
    loss = weighted_cross_entropy(Tensor(logits), ds.labels, class_weights).item()
    return report_from_logits(logits, ds.labels, n_classes, loss)
