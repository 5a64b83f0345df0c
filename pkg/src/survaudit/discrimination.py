"""Discrimination metrics for binary 60-month labels.

Tie conventions: AUROC gives half credit to tied positive/negative pairs,
precision-recall steps process a block of equal scores at once, and
thresholded predictions are positive when ``p >= tau``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import DataValidationError


def _check(y, p):
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    if y.shape != p.shape or y.ndim != 1:
        raise DataValidationError("labels and scores must be 1-D arrays of equal length")
    if y.size == 0:
        raise DataValidationError("empty input")
    if not np.all((y == 0) | (y == 1)):
        raise DataValidationError("labels must be 0/1")
    return y, p


def auroc(y, p) -> float:
    """Probability that a random positive outscores a random negative (ties count 1/2)."""
    y, p = _check(y, p)
    n1 = int(y.sum())
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        raise DataValidationError("AUROC is undefined for single-class labels")
    ranks = rankdata(p, method="average")
    return float((ranks[y == 1].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def _blocks(y, p):
    """Cumulative TP/FP counts after each block of equal scores, scores descending."""
    order = np.argsort(-p, kind="stable")
    ps = p[order]
    ys = y[order]
    last = np.r_[ps[1:] != ps[:-1], True]
    tp = np.cumsum(ys)[last]
    fp = np.cumsum(1 - ys)[last]
    return ps[last], tp, fp


@dataclass
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray

    def area(self) -> float:
        return float(np.sum(np.diff(self.fpr) * (self.tpr[1:] + self.tpr[:-1]) / 2.0))


def roc_curve(y, p) -> RocCurve:
    y, p = _check(y, p)
    n1 = y.sum()
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        raise DataValidationError("ROC curve is undefined for single-class labels")
    thr, tp, fp = _blocks(y, p)
    return RocCurve(np.r_[np.inf, thr], np.r_[0.0, fp / n0], np.r_[0.0, tp / n1])


@dataclass
class PrCurve:
    thresholds: np.ndarray
    recall: np.ndarray
    precision: np.ndarray


def pr_curve(y, p) -> PrCurve:
    y, p = _check(y, p)
    npos = y.sum()
    if npos == 0:
        raise DataValidationError("precision-recall is undefined without positives")
    thr, tp, fp = _blocks(y, p)
    return PrCurve(thr, tp / npos, tp / (tp + fp))


def average_precision(y, p) -> float:
    """Step-wise sum of precision times recall increments over descending score blocks."""
    c = pr_curve(y, p)
    return float(np.sum(np.diff(np.r_[0.0, c.recall]) * c.precision))


@dataclass
class ConfusionAtThreshold:
    tau: float
    tp: int
    fp: int
    tn: int
    fn: int

    @staticmethod
    def _ratio(a, b):
        return a / b if b else None

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def tpr(self):
        return self._ratio(self.tp, self.tp + self.fn)

    @property
    def fpr(self):
        return self._ratio(self.fp, self.fp + self.tn)

    @property
    def ppv(self):
        return self._ratio(self.tp, self.tp + self.fp)

    @property
    def predicted_positive_rate(self):
        return self._ratio(self.tp + self.fp, self.n)

    def to_json(self) -> dict:
        return {"tau": self.tau, "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
                "tpr": self.tpr, "fpr": self.fpr, "ppv": self.ppv,
                "predicted_positive_rate": self.predicted_positive_rate}


def confusion_at_threshold(y, p, tau: float = 0.2) -> ConfusionAtThreshold:
    y, p = _check(y, p)
    if not 0.0 <= tau <= 1.0:
        raise DataValidationError(f"threshold must lie in [0, 1], got {tau}")
    pos = p >= tau
    yb = y == 1
    return ConfusionAtThreshold(float(tau), int(np.sum(pos & yb)), int(np.sum(pos & ~yb)),
                                int(np.sum(~pos & ~yb)), int(np.sum(~pos & yb)))
