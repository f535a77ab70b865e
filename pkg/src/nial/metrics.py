"""Confusion matrix, accuracy and F1 (binary or macro)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # (K, K); row = true class, column = predicted class

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_list(self) -> list[list[int]]:
        return self.counts.astype(int).tolist()


def confusion(preds, labels, n_classes: int) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if preds.shape != labels.shape:
        raise ContractError(f"{preds.size} predictions for {labels.size} labels")
    for name, arr in (("prediction", preds), ("label", labels)):
        bad = np.flatnonzero((arr < 0) | (arr >= n_classes))
        if bad.size:
            raise ContractError(f"{name} {arr[bad[0]]} at index {bad[0]} outside [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return ConfusionMatrix(counts)


def _require_nonempty(cm: ConfusionMatrix) -> None:
    if cm.total <= 0:
        raise ContractError("metrics need at least one evaluated sample")


def accuracy(cm: ConfusionMatrix) -> float:
    _require_nonempty(cm)
    return float(np.trace(cm.counts)) / cm.total


def per_class_f1(cm: ConfusionMatrix) -> np.ndarray:
    """2TP / (2TP + FP + FN) per class, with 0/0 taken as 0."""
    tp = np.diag(cm.counts).astype(np.float64)
    fp = cm.counts.sum(axis=0) - tp
    fn = cm.counts.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    return np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)


def f1(cm: ConfusionMatrix, mode: str = "macro") -> float:
    """``binary``: F1 of class 1. ``macro``: unweighted mean over all K classes."""
    _require_nonempty(cm)
    scores = per_class_f1(cm)
    if mode == "binary":
        if cm.n_classes != 2:
            raise ContractError(f"binary F1 needs a 2x2 matrix, got {cm.n_classes} classes")
        return float(scores[1])
    if mode == "macro":
        return float(scores.mean())
    raise ContractError(f"unknown F1 mode {mode!r}")
