"""Decision-curve net benefit."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .roc import MetricError


@dataclass(frozen=True)
class NetBenefitCurve:
    threshold: np.ndarray
    nb_model: np.ndarray
    nb_treat_all: np.ndarray

    @property
    def nb_treat_none(self) -> np.ndarray:
        return np.zeros_like(self.threshold)


def default_grid(n: int = 100, hi: float = 0.05) -> np.ndarray:
    """Thresholds suited to rare events: 0.0005 .. ``hi``."""
    return np.round(np.linspace(hi / n, hi, n), 10)


def net_benefit(probs, labels, thresholds=None) -> NetBenefitCurve:
    """nb(t) = TP/N - FP/N * t/(1-t), flagging rows with prob >= t."""
    p = np.asarray(probs, dtype=float)
    y = np.asarray(labels).astype(bool)
    t = default_grid() if thresholds is None else np.asarray(thresholds, dtype=float)
    if ((t <= 0) | (t >= 1)).any():
        raise MetricError("net-benefit thresholds must lie in (0, 1)")
    n = len(p)
    if n == 0:
        raise MetricError("net benefit needs rows")
    prev = y.mean()
    odds = t / (1 - t)
    # counts of flagged positives/negatives at each threshold via sorting
    ps = np.sort(p[y])
    ns = np.sort(p[~y])
    tp = len(ps) - np.searchsorted(ps, t, side="left")
    fp = len(ns) - np.searchsorted(ns, t, side="left")
    nb = tp / n - fp / n * odds
    all_ = prev - (1 - prev) * odds
    return NetBenefitCurve(t, nb, all_)
