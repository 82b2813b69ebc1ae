"""ROC curve, AUROC and the TPR-band AUC."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class RocCurve:
    """Operating points from a descending-score sweep, tied scores grouped.

    The first point is (0, 0) at threshold +inf; the last is (1, 1) at the
    lowest score. A row is flagged iff its score is >= the threshold.
    """

    fpr: np.ndarray
    tpr: np.ndarray
    threshold: np.ndarray

    def rows(self):
        return zip(self.fpr.tolist(), self.tpr.tolist(), self.threshold.tolist())


def _check(scores, labels):
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise MetricError("scores and labels must be 1-D and of equal length")
    if np.isnan(s).any():
        raise MetricError("scores contain NaN")
    return s, y.astype(bool)


def _sweep(s: np.ndarray, y: np.ndarray):
    """Cumulative (tp, fp) after each distinct score, highest first."""
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    y_sorted = y[order]
    last_of_group = np.r_[s_sorted[1:] != s_sorted[:-1], True]
    tp = np.cumsum(y_sorted)[last_of_group]
    fp = np.cumsum(~y_sorted)[last_of_group]
    return s_sorted[last_of_group], tp, fp


def roc_auroc(scores, labels) -> tuple[RocCurve, float]:
    """ROC curve and AUROC.

    The area is the Mann-Whitney statistic with ties counted one half,
    evaluated in integers and divided once, so it is exact.
    """
    s, y = _check(scores, labels)
    P = int(y.sum())
    N = len(y) - P
    if P == 0 or N == 0:
        raise MetricError("undefined AUROC: need both classes")
    thr, tp, fp = _sweep(s, y)
    pos_g = np.diff(np.r_[0, tp])
    neg_g = np.diff(np.r_[0, fp])
    tp_before = np.r_[0, tp[:-1]]
    twice_u = int(np.sum(neg_g * (2 * tp_before + pos_g)))
    auc = twice_u / (2 * P * N)
    curve = RocCurve(
        fpr=np.r_[0.0, fp / N],
        tpr=np.r_[0.0, tp / P],
        threshold=np.r_[np.inf, thr],
    )
    return curve, auc


def auroc(scores, labels) -> float:
    return roc_auroc(scores, labels)[1]


def band_auc(roc: RocCurve, tpr_lo: float = 0.75, tpr_hi: float = 0.85) -> float:
    """Mean specificity over ``tpr_lo <= TPR <= tpr_hi``.

    The ROC points are joined linearly (a tie group is a diagonal segment)
    and the band edges are interpolated, so the result is
    ``1/(hi-lo) * integral of (1 - fpr) dTPR`` over the band.
    """
    if not 0.0 <= tpr_lo < tpr_hi <= 1.0:
        raise MetricError("band must satisfy 0 <= lo < hi <= 1")
    fpr, tpr = roc.fpr, roc.tpr
    if tpr[0] > tpr_lo or tpr[-1] < tpr_hi:
        raise MetricError("band lies outside the curve's TPR support")
    t0, t1 = tpr[:-1], tpr[1:]
    f0, f1 = fpr[:-1], fpr[1:]
    a = np.maximum(t0, tpr_lo)
    b = np.minimum(t1, tpr_hi)
    seg = (t1 > t0) & (b > a)
    t0, t1, f0, f1, a, b = t0[seg], t1[seg], f0[seg], f1[seg], a[seg], b[seg]
    fa = f0 + (f1 - f0) * (a - t0) / (t1 - t0)
    fb = f0 + (f1 - f0) * (b - t0) / (t1 - t0)
    total = float(np.sum((b - a) * (1.0 - 0.5 * (fa + fb))))
    return float(total / (tpr_hi - tpr_lo))
