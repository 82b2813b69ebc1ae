"""Confusion ratios and threshold policies. A row is flagged iff score >= threshold."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .roc import MetricError, _check, _sweep

NAN = float("nan")


def _ratio(a: int, b: int) -> float:
    return a / b if b else NAN


def confusion_counts(scores, labels, threshold: float) -> tuple[int, int, int, int]:
    """(tp, fp, tn, fn)."""
    s, y = _check(scores, labels)
    flag = s >= threshold
    tp = int(np.sum(flag & y))
    fp = int(np.sum(flag & ~y))
    fn = int(np.sum(~flag & y))
    tn = int(np.sum(~flag & ~y))
    return tp, fp, tn, fn


def ratios(tp: int, fp: int, tn: int, fn: int) -> dict[str, float]:
    """Undefined ratios (zero denominator) come back as NaN, never 0."""
    n = tp + fp + tn + fn
    return {
        "sens": _ratio(tp, tp + fn),
        "spec": _ratio(tn, tn + fp),
        "ppv": _ratio(tp, tp + fp),
        "npv": _ratio(tn, tn + fn),
        "prevalence": _ratio(tp + fn, n),
    }


def confusion_metrics(scores, labels, threshold: float) -> dict[str, float]:
    return ratios(*confusion_counts(scores, labels, threshold))


@dataclass(frozen=True)
class ThresholdRow:
    policy: str
    threshold: float
    sens: float
    spec: float
    ppv: float
    npv: float
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def youden_j(self) -> float:
        return self.sens + self.spec - 1.0

    def to_dict(self) -> dict:
        return asdict(self)


def _row(policy: str, scores, labels, threshold: float) -> ThresholdRow:
    tp, fp, tn, fn = confusion_counts(scores, labels, threshold)
    r = ratios(tp, fp, tn, fn)
    return ThresholdRow(policy, float(threshold), r["sens"], r["spec"], r["ppv"], r["npv"], tp, fp, tn, fn)


def policy_name(target: float) -> str:
    return f"target_sens({target:g})"


def threshold_at_sensitivity(scores, labels, target: float = 0.80) -> ThresholdRow:
    """Largest threshold whose sensitivity is at least ``target``.

    That is the k-th highest positive score, with k the smallest count of
    flagged positives meeting the floor, which maximises specificity under
    the constraint.
    """
    if not 0.0 < target <= 1.0:
        raise MetricError("target sensitivity must be in (0, 1]")
    s, y = _check(scores, labels)
    pos = np.sort(s[y])[::-1]
    P = len(pos)
    if P == 0:
        raise MetricError("threshold selection needs positives")
    k = min(P, max(1, math.ceil(target * P)))
    # settle float rounding in target * P against the tp / P check
    while k > 1 and (k - 1) / P >= target:
        k -= 1
    while k < P and k / P < target:
        k += 1
    return _row(policy_name(target), s, y, float(pos[k - 1]))


def youden_threshold(scores, labels) -> ThresholdRow:
    """Threshold maximising sens + spec - 1; ties go to the higher threshold.

    Candidates are every distinct score plus +inf (flag nothing).
    """
    s, y = _check(scores, labels)
    P = int(y.sum())
    N = len(y) - P
    if P == 0 or N == 0:
        raise MetricError("Youden threshold needs both classes")
    thr, tp, fp = _sweep(s, y)
    # integer numerator of J * P * N keeps the comparison exact
    j_num = np.r_[0, tp * N - fp * P]
    cands = np.r_[np.inf, thr]
    best = int(np.argmax(j_num))  # first maximum = highest threshold
    return _row("youden", s, y, float(cands[best]))


def threshold_table(scores, labels, targets=(0.70, 0.75, 0.80, 0.85, 0.90), youden: bool = True) -> list[ThresholdRow]:
    rows = [threshold_at_sensitivity(scores, labels, t) for t in targets]
    if youden:
        rows.append(youden_threshold(scores, labels))
    return rows
