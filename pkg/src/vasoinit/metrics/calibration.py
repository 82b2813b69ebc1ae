"""Calibration diagnostics: slope, intercept, Brier score and ECE."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..learn.baseline import fit_logistic
from .roc import MetricError

log = logging.getLogger(__name__)

DEFAULT_BINS = 15
LOGIT_EPS = 1e-6


@dataclass(frozen=True)
class CalibrationStats:
    slope: float
    intercept: float
    brier: float
    ece: float
    bin_edges: np.ndarray
    bin_mean_pred: np.ndarray  # NaN for empty bins
    bin_event_rate: np.ndarray
    bin_count: np.ndarray

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "brier": self.brier, "ece": self.ece, "n_bins": len(self.bin_count)}


def reliability_bins(probs, labels, n_bins: int = DEFAULT_BINS):
    """Equal-width bins on [0, 1]; p = 1 falls in the last bin."""
    p = np.asarray(probs, dtype=float)
    y = np.asarray(labels, dtype=float)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    idx = np.minimum((p * n_bins).astype(np.int64), n_bins - 1)
    count = np.bincount(idx, minlength=n_bins)
    psum = np.bincount(idx, weights=p, minlength=n_bins)
    ysum = np.bincount(idx, weights=y, minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_p = np.where(count > 0, psum / np.maximum(count, 1), np.nan)
        rate = np.where(count > 0, ysum / np.maximum(count, 1), np.nan)
    return edges, mean_p, rate, count


def expected_calibration_error(probs, labels, n_bins: int = DEFAULT_BINS) -> float:
    _, mean_p, rate, count = reliability_bins(probs, labels, n_bins)
    n = count.sum()
    used = count > 0
    return float(np.sum(count[used] / n * np.abs(mean_p[used] - rate[used])))


def calibration_stats(probs, labels, n_bins: int = DEFAULT_BINS) -> CalibrationStats:
    """Slope and intercept come from a logistic fit of labels on logit(prob).

    Probabilities are clipped to [1e-6, 1 - 1e-6] for the logit only; with
    a single label class slope and intercept are NaN.
    """
    p = np.asarray(probs, dtype=float)
    y = np.asarray(labels, dtype=float)
    if p.shape != y.shape or p.ndim != 1 or len(p) == 0:
        raise MetricError("probs and labels must be nonempty 1-D arrays of equal length")
    if ((p < 0) | (p > 1)).any() or np.isnan(p).any():
        raise MetricError("probabilities must lie in [0, 1]")
    brier = float(np.mean((p - y) ** 2))
    edges, mean_p, rate, count = reliability_bins(p, y, n_bins)
    used = count > 0
    ece = float(np.sum(count[used] / len(p) * np.abs(mean_p[used] - rate[used])))
    if len(np.unique(y)) < 2:
        slope = intercept = float("nan")
    else:
        pc = np.clip(p, LOGIT_EPS, 1 - LOGIT_EPS)
        z = np.log(pc) - np.log1p(-pc)
        if np.ptp(z) == 0:
            log.warning("calibration slope undefined for constant predictions")
            slope = intercept = float("nan")
        else:
            intercept, slope, _, _ = fit_logistic(z, y)
    return CalibrationStats(slope, intercept, brier, ece, edges, mean_p, rate, count)
