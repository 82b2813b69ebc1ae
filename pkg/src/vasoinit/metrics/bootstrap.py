"""Percentile bootstrap intervals with window-level resampling."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Collection, Mapping

import numpy as np

from .roc import MetricError

log = logging.getLogger(__name__)

Metric = Callable[[np.ndarray, np.ndarray], float]


@dataclass(frozen=True)
class MetricCI:
    point: float
    lower: float
    upper: float
    n_boot: int
    seed: int
    n_redrawn: int = 0
    n_undefined: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _evaluate(fn: Metric, s, y) -> float:
    try:
        v = float(fn(s, y))
    except (MetricError, ValueError, ZeroDivisionError):
        return math.nan
    return v


def bootstrap_many(
    metrics: Mapping[str, Metric],
    scores,
    labels,
    n_boot: int = 1000,
    alpha: float = 0.05,
    seed: int = 0,
    require_both_classes: bool = True,
    max_redraws: int = 100,
    allow_undefined: Collection[str] = (),
) -> dict[str, MetricCI]:
    """Percentile intervals for several metrics over the same resamples.

    Iteration ``b`` draws from ``default_rng(seed ^ b)``, so any iteration can
    be reproduced on its own and parallel runs match serial ones. Resamples
    missing a class are redrawn (up to ``max_redraws`` times) when
    ``require_both_classes`` is set. A metric that is undefined (NaN or
    raising) on more than half the resamples is an error, unless its key is
    in ``allow_undefined``; such metrics get a NaN interval instead.
    The interval is widened, if needed, to contain the point estimate.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    n = len(s)
    if n == 0 or len(y) != n:
        raise MetricError("bootstrap needs equal-length, nonempty inputs")
    if not 0 < alpha < 1 or n_boot < 1:
        raise MetricError("alpha must be in (0, 1) and n_boot >= 1")
    # metrics are order-free; presorting by score and sorting each resample's
    # indices hands the ROC sweep already-ordered input
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    yb = y.astype(bool)
    both = yb.any() and (~yb).any()
    points = {k: _evaluate(fn, s, y) for k, fn in metrics.items()}
    values = {k: np.full(n_boot, np.nan) for k in metrics}
    redrawn = 0
    for b in range(n_boot):
        rng = np.random.default_rng(seed ^ b)
        idx = rng.integers(0, n, size=n)
        if require_both_classes and both:
            tries = 0
            while tries < max_redraws:
                yy = yb[idx]
                if yy.any() and (~yy).any():
                    break
                idx = rng.integers(0, n, size=n)
                tries += 1
                redrawn += 1
        idx.sort()
        rs, ry = s[idx], y[idx]
        for k, fn in metrics.items():
            values[k][b] = _evaluate(fn, rs, ry)
    if redrawn:
        log.info("bootstrap: %d single-class resamples redrawn", redrawn)
    out = {}
    for k, v in values.items():
        ok = ~np.isnan(v)
        n_undef = int(n_boot - ok.sum())
        if n_undef * 2 > n_boot:
            if k in allow_undefined:
                out[k] = MetricCI(float(points[k]), math.nan, math.nan, n_boot, seed, redrawn, n_undef)
                continue
            raise MetricError(f"metric {k!r} undefined on {n_undef} of {n_boot} resamples")
        lo, hi = np.percentile(v[ok], [100 * alpha / 2, 100 * (1 - alpha / 2)])
        p = points[k]
        if not math.isnan(p):
            lo, hi = min(lo, p), max(hi, p)
        out[k] = MetricCI(float(p), float(lo), float(hi), n_boot, seed, redrawn, n_undef)
    return out


def bootstrap_ci(metric: Metric, scores, labels, n_boot: int = 1000, alpha: float = 0.05, seed: int = 0, **kw) -> MetricCI:
    return bootstrap_many({"m": metric}, scores, labels, n_boot, alpha, seed, **kw)["m"]
