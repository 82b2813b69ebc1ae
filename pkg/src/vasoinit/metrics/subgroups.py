"""Subgroup performance at one global threshold."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from ..features import COMORBIDITY_NAMES, ETHNICITIES, TREATMENT_CATEGORIES
from .roc import auroc
from .thresholds import confusion_counts, ratios

# (label, lower exclusive, upper inclusive)
LAST_MAP_BANDS = (
    ("last <= 65", -math.inf, 65.0),
    ("65 < last <= 70", 65.0, 70.0),
    ("70 < last <= 100", 70.0, 100.0),
    ("last > 100", 100.0, math.inf),
)


@dataclass(frozen=True)
class Subgroup:
    name: str
    select: Callable[[np.ndarray], np.ndarray]  # feature matrix -> bool mask


@dataclass(frozen=True)
class SubgroupRow:
    subgroup: str
    auroc: float
    sens: float
    spec: float
    pos: int
    total: int


def _col(names: Sequence[str], name: str) -> int:
    return list(names).index(name)


def _eq(j: int, v: float):
    return lambda X: X[:, j] == v


def _band(j: int, lo: float, hi: float):
    return lambda X: (X[:, j] > lo) & (X[:, j] <= hi)


def _quartile_label(feature: str, q: int, cuts: Sequence[float] | None) -> str:
    if cuts is None:
        return f"{feature}_q = {q}"
    c = [f"{x:.1f}" for x in cuts]
    # a value equal to a cut stays in the lower bin
    return (f"{feature} <= {c[0]}", f"{feature} ({c[0]} - {c[1]}]", f"{feature} ({c[1]} - {c[2]}]", f"{feature} > {c[2]}")[q]


def default_subgroups(feature_names: Sequence[str], cuts: Mapping[str, Sequence[float]] | None = None) -> list[Subgroup]:
    """Everything, demographics, quartile bins, comorbidities, treatments and last-MAP bands.

    ``cuts`` maps age/height/weight/bmi to their three cut points and only
    changes the row labels.
    """
    names = list(feature_names)
    out = [Subgroup("all", lambda X: np.ones(len(X), dtype=bool))]
    g = _col(names, "gender")
    out += [Subgroup("gender: Male", _eq(g, 1.0)), Subgroup("gender: Female", _eq(g, 0.0))]
    e = _col(names, "ethnicity")
    out += [Subgroup(f"ethnicity: {eth.capitalize()}", _eq(e, float(k))) for k, eth in enumerate(ETHNICITIES)]
    for feat in ("age", "height", "weight", "bmi"):
        j = _col(names, f"{feat}_q")
        c = None if cuts is None else cuts.get(feat)
        out += [Subgroup(_quartile_label(feat, q, c), _eq(j, float(q))) for q in range(4)]
    for flag in COMORBIDITY_NAMES[:-1]:
        j = _col(names, flag)
        label = flag.replace("_", " ")
        out += [Subgroup(f"{label} = 0", _eq(j, 0.0)), Subgroup(f"{label} = 1", _eq(j, 1.0))]
    j = _col(names, "n_comorbidities")
    out += [
        Subgroup("Comorbidities = 0", _eq(j, 0.0)),
        Subgroup("Comorbidities = 1", _eq(j, 1.0)),
        Subgroup("Comorbidities >= 2", lambda X, j=j: X[:, j] >= 2),
    ]
    for cat in TREATMENT_CATEGORIES:
        j = _col(names, cat)
        label = cat.replace("_", " ")
        out += [Subgroup(f"{label} = 0", _eq(j, 0.0)), Subgroup(f"{label} = 1", _eq(j, 1.0))]
    j = _col(names, "last")
    out += [Subgroup(label, _band(j, lo, hi)) for label, lo, hi in LAST_MAP_BANDS]
    return out


def subgroup_report(X, scores, labels, threshold: float, subgroups: Sequence[Subgroup]) -> list[SubgroupRow]:
    """AUROC, sensitivity and specificity per subgroup; single-class groups get NaN AUROC."""
    X = np.asarray(X, dtype=float)
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    rows = []
    for sg in subgroups:
        m = np.asarray(sg.select(X), dtype=bool)
        ys, ss = y[m], s[m]
        total = int(m.sum())
        pos = int(ys.sum())
        if total == 0:
            rows.append(SubgroupRow(sg.name, math.nan, math.nan, math.nan, 0, 0))
            continue
        r = ratios(*confusion_counts(ss, ys, threshold))
        auc = auroc(ss, ys) if 0 < pos < total else math.nan
        rows.append(SubgroupRow(sg.name, auc, r["sens"], r["spec"], pos, total))
    return rows
