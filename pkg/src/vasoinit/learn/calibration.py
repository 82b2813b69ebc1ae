"""Isotonic calibration via pool-adjacent-violators."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class IsotonicMap:
    """Monotone score-to-probability map.

    Between knots the map interpolates linearly; outside the knot range it is
    clamped to the first/last value.
    """

    breakpoints: np.ndarray
    values: np.ndarray

    def __call__(self, scores) -> np.ndarray:
        return calibrate(self, scores)

    def to_dict(self) -> dict:
        return {"breakpoints": self.breakpoints.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "IsotonicMap":
        return cls(np.asarray(d["breakpoints"], dtype=float), np.asarray(d["values"], dtype=float))


def pava(y, w=None) -> np.ndarray:
    """Weighted least-squares nondecreasing fit to ``y`` (already in x order)."""
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    # blocks as (weighted mean, weight, length)
    means: list[float] = []
    weights: list[float] = []
    lengths: list[int] = []
    for yi, wi in zip(y, w):
        means.append(yi)
        weights.append(wi)
        lengths.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, l2 = means.pop(), weights.pop(), lengths.pop()
            m1, w1, l1 = means[-1], weights[-1], lengths[-1]
            wt = w1 + w2
            means[-1] = (m1 * w1 + m2 * w2) / wt
            weights[-1] = wt
            lengths[-1] = l1 + l2
    return np.repeat(means, lengths)


def fit_isotonic(scores, labels) -> IsotonicMap:
    """Fit on validation scores and 0/1 labels; tied scores are pooled first."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if len(scores) != len(labels):
        raise ValueError("scores and labels differ in length")
    if len(scores) < 2:
        raise ValueError("isotonic calibration needs at least two rows")
    xu, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    ysum = np.bincount(inverse, weights=labels, minlength=len(xu))
    fitted = np.clip(pava(ysum / counts, counts), 0.0, 1.0)
    # keep only the ends of each constant run; interpolation is unchanged
    keep = np.ones(len(xu), dtype=bool)
    if len(xu) > 2:
        same_prev = fitted[1:-1] == fitted[:-2]
        same_next = fitted[1:-1] == fitted[2:]
        keep[1:-1] = ~(same_prev & same_next)
    return IsotonicMap(xu[keep], fitted[keep])


def calibrate(iso: IsotonicMap, scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    if len(iso.breakpoints) == 1:
        return np.full(scores.shape, iso.values[0])
    return np.interp(scores, iso.breakpoints, iso.values)
