"""Detection metrics: confusion counts, ROC sweeps, AUC and FA calibration.

Counts are pooled over every (sample, user) decision. A score strictly
above the threshold means "declared active".
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


class CalibrationError(ValueError):
    """Raised when a test set cannot support a ROC (single class)."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def recall(self) -> float:
        pos = self.tp + self.fn
        return self.tp / pos if pos else float("nan")

    @property
    def false_alarm(self) -> float:
        neg = self.fp + self.tn
        return self.fp / neg if neg else float("nan")


@dataclass
class RocCurve:
    thresholds: np.ndarray  # increasing; first entry -inf
    fa: np.ndarray
    recall: np.ndarray
    auc: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            fh.write("threshold,fa,recall\n")
            for t, f, r in zip(self.thresholds.tolist(), self.fa.tolist(), self.recall.tolist()):
                fh.write(f"{t!r},{f!r},{r!r}\n")
            fh.write(f"# auc={float(self.auc)!r}\n")


def confusion(scores, truth, thr: float) -> ConfusionCounts:
    scores = np.asarray(scores)
    truth = np.asarray(truth).astype(bool)
    if scores.shape != truth.shape:
        raise ValueError(f"scores {scores.shape} and truth {truth.shape} differ in shape")
    pred = scores > thr
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    return ConfusionCounts(tp, fp, int(np.sum(~truth)) - fp, int(np.sum(truth)) - tp)


def roc_sweep(scores, truths) -> RocCurve:
    """Sweep the threshold over every distinct score (plus -inf)."""
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(truths).astype(bool).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and truths differ in size")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise CalibrationError("ROC needs at least one positive and one negative label")
    order = np.argsort(s, kind="stable")
    s, y = s[order], y[order]
    distinct, first = np.unique(s, return_index=True)
    # items strictly above distinct[i] are those from index first[i+1] on
    pos_below = np.concatenate([[0], np.cumsum(y)])
    last = np.append(first[1:], s.size)
    above_pos = n_pos - pos_below[last]
    above_neg = (s.size - last) - above_pos
    thresholds = np.concatenate([[-np.inf], distinct])
    recall = np.concatenate([[1.0], above_pos / n_pos])
    fa = np.concatenate([[1.0], above_neg / n_neg])
    # trapezoid over (fa, recall) with ties grouped = Mann-Whitney with half credit
    auc = float(np.sum((fa[:-1] - fa[1:]) * (recall[:-1] + recall[1:]) / 2.0))
    return RocCurve(thresholds, fa, recall, auc)


def auc_score(scores, truths) -> float:
    return roc_sweep(scores, truths).auc


def threshold_for_fa(curve: RocCurve, target_fa: float):
    """Smallest swept threshold whose false-alarm rate is <= ``target_fa``.

    Returns ``(threshold, achieved_fa, ok)``; ``ok`` is False when no
    threshold meets the target, in which case the largest one is returned.
    """
    meets = np.flatnonzero(curve.fa <= target_fa)
    if meets.size == 0:
        warnings.warn(f"no threshold reaches FA <= {target_fa}", RuntimeWarning, stacklevel=2)
        return float(curve.thresholds[-1]), float(curve.fa[-1]), False
    i = int(meets[0])
    return float(curve.thresholds[i]), float(curve.fa[i]), True


def recall_at_fa(scores, truths, target_fa: float) -> float:
    curve = roc_sweep(scores, truths)
    thr, _, _ = threshold_for_fa(curve, target_fa)
    return float(curve.recall[np.searchsorted(curve.thresholds, thr)])
