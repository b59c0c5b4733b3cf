"""Cross-validation partitions and binary classification metrics.

The positive class is high arousal / positive valence (label 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion matrix counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @classmethod
    def from_labels(cls, y_true, y_pred) -> "ConfusionMatrix":
        t = np.asarray(y_true).astype(bool)
        p = np.asarray(y_pred).astype(bool)
        if t.shape != p.shape:
            raise ValueError("label arrays differ in shape")
        return cls(int(np.sum(t & p)), int(np.sum(~t & ~p)), int(np.sum(~t & p)), int(np.sum(t & ~p)))

    def to_dict(self) -> dict:
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn}


def accuracy(cm: ConfusionMatrix) -> float:
    """Percentage of correct predictions, in [0, 100]."""
    if cm.total == 0:
        raise ValueError("accuracy of an empty confusion matrix")
    return 100.0 * (cm.tp + cm.tn) / cm.total


def mcc(cm: ConfusionMatrix) -> float:
    """Matthews correlation coefficient; 0 when any marginal is empty."""
    if cm.total == 0:
        raise ValueError("mcc of an empty confusion matrix")
    denom = (cm.tp + cm.fp) * (cm.tp + cm.fn) * (cm.tn + cm.fp) * (cm.tn + cm.fn)
    if denom == 0:
        return 0.0
    return (cm.tp * cm.tn - cm.fp * cm.fn) / math.sqrt(denom)


def kfold_split(n: int, k: int = 10, seed: int = 0, labels=None) -> list[tuple[np.ndarray, np.ndarray]]:
    """Seeded k-fold partition of ``range(n)`` into (train, test) index pairs.

    Unstratified: shuffle, then cut into k contiguous folds whose sizes differ
    by at most one. With ``labels`` the shuffled indices are grouped by class
    and dealt round-robin, so each fold gets a near-equal share of every class.
    """
    if k < 2:
        raise SplitError("k must be >= 2")
    if n < k:
        raise SplitError(f"too few instances ({n}) for {k} folds")
    rng = np.random.default_rng(seed)
    if labels is None:
        folds = np.array_split(rng.permutation(n), k)
    else:
        labels = np.asarray(labels)
        if labels.shape != (n,):
            raise SplitError("labels must have one entry per instance")
        dealt = np.concatenate([
            idx[rng.permutation(idx.size)] for idx in (np.flatnonzero(labels == c) for c in np.unique(labels))
        ])
        folds = [dealt[i::k] for i in range(k)]
    everything = np.arange(n)
    return [(np.setdiff1d(everything, f), np.sort(f)) for f in folds]


def loso_split(subject_ids) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """One (subject, train, test) triple per subject, in sorted subject order."""
    subjects = np.asarray(subject_ids)
    unique = sorted(set(subjects.tolist()))
    if len(unique) < 2:
        raise SplitError("leave-one-subject-out needs at least 2 subjects")
    return [(s, np.flatnonzero(subjects != s), np.flatnonzero(subjects == s)) for s in unique]


@dataclass(frozen=True)
class FoldResult:
    fold: int | str
    cm: ConfusionMatrix
    repeat: int | None = None
    order: list | None = None
    n_train: int = 0
    best_epoch: int = 0
    stopped_epoch: int = 0

    @property
    def accuracy(self) -> float:
        return accuracy(self.cm)

    @property
    def mcc(self) -> float:
        return mcc(self.cm)

    def to_dict(self) -> dict:
        d = {
            "fold": self.fold,
            "confusion": self.cm.to_dict(),
            "accuracy": self.accuracy,
            "mcc": self.mcc,
            "n_train": self.n_train,
            "n_test": self.cm.total,
            "best_epoch": self.best_epoch,
            "stopped_epoch": self.stopped_epoch,
        }
        if self.repeat is not None:
            d["repeat"] = self.repeat
        if self.order is not None:
            d["order"] = self.order
        return d


def mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values)
