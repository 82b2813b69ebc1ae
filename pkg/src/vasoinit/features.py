"""The 37-slot window feature vector.

Slot order is fixed by :data:`FEATURE_NAMES`: eleven MAP statistics, six
encoded demographic/biometric slots, the eight comorbidity flags plus their
count, and eleven concomitant-treatment flags. Missing values are ``NaN`` and
are never imputed; the tree learner routes them itself.
"""
from __future__ import annotations

import hashlib
import io
import json
import math
import zipfile
from collections import Counter
from dataclasses import astuple, dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .cohort import LabeledWindow, WindowSpec
from .ingest import COMORBIDITIES, ETHNICITIES, ConcomitantEvent, PatientStatic

MAP_STAT_NAMES = (
    "mean",
    "std",
    "median",
    "iqr",
    "min",
    "max",
    "first",
    "last",
    "rate_of_change",
    "slope",
    "time_weighted_mean",
)
STATIC_NAMES = ("gender", "age_q", "ethnicity", "height_q", "weight_q", "bmi_q")
COMORBIDITY_NAMES = COMORBIDITIES + ("n_comorbidities",)
TREATMENT_CATEGORIES = (
    "sedatives",
    "blood_products",
    "antibiotics",
    "anticoag_antiplt",
    "neuromuscular_blockers",
    "analgesics",
    "crystalloids",
    "electrolytes",
    "gi_protection",
    "parenteral_nutrition",
    "antiarrhythmics",
)
FEATURE_NAMES = MAP_STAT_NAMES + STATIC_NAMES + COMORBIDITY_NAMES + TREATMENT_CATEGORIES
N_FEATURES = len(FEATURE_NAMES)
QUARTILE_FEATURES = ("age", "height", "weight", "bmi")
MISSING = float("nan")

assert N_FEATURES == 37


class FeatureError(Exception):
    pass


def schema_hash(names: Sequence[str] = FEATURE_NAMES) -> str:
    return hashlib.sha256("\n".join(names).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# MAP statistics


@dataclass(frozen=True)
class MapStats:
    mean: float
    std: float
    median: float
    iqr: float
    min: float
    max: float
    first: float
    last: float
    rate_of_change: float
    slope: float
    time_weighted_mean: float

    def as_tuple(self) -> tuple[float, ...]:
        return astuple(self)


assert tuple(f.name for f in fields(MapStats)) == MAP_STAT_NAMES


def _percentile(sorted_vals: list[float], q: float) -> float:
    pos = q * (len(sorted_vals) - 1)
    lo = math.floor(pos)
    hi = min(lo + 1, len(sorted_vals) - 1)
    frac = pos - lo
    return sorted_vals[lo] + (sorted_vals[hi] - sorted_vals[lo]) * frac


def map_stats(points: Sequence[tuple[float, float]], context_start: float, context_end: float) -> MapStats:
    """Summary statistics of the MAP readings inside one context window.

    ``points`` are ``(time_seconds, mmHg)`` pairs in strictly increasing time.
    Rates are in mmHg/s. The time-weighted mean weights each reading by its
    elapsed fraction of the window, so later readings count more.
    """
    n = len(points)
    if n < 2:
        raise FeatureError("map_stats needs at least two points")
    ts = [float(p[0]) for p in points]
    vs = [float(p[1]) for p in points]
    for a, b in zip(ts, ts[1:]):
        if not b > a:
            raise FeatureError("timestamps must be strictly increasing")
    if not context_end > context_start:
        raise FeatureError("empty context window")

    mean = math.fsum(vs) / n
    var = math.fsum((v - mean) ** 2 for v in vs) / (n - 1)
    srt = sorted(vs)
    q25, median, q75 = _percentile(srt, 0.25), _percentile(srt, 0.5), _percentile(srt, 0.75)

    t0 = ts[0]
    rel = [t - t0 for t in ts]
    t_mean = math.fsum(rel) / n
    sxx = math.fsum((t - t_mean) ** 2 for t in rel)
    sxy = math.fsum((t - t_mean) * (v - mean) for t, v in zip(rel, vs))

    span = float(context_end - context_start)
    w = [(t - context_start) / span for t in ts]
    wsum = math.fsum(w)
    twm = math.fsum(wi * vi for wi, vi in zip(w, vs)) / wsum
    # clamp rounding drift so min <= twm <= max holds exactly
    twm = min(max(twm, srt[0]), srt[-1])
    mean = min(max(mean, srt[0]), srt[-1])

    return MapStats(
        mean=mean,
        std=math.sqrt(var),
        median=median,
        iqr=q75 - q25,
        min=srt[0],
        max=srt[-1],
        first=vs[0],
        last=vs[-1],
        rate_of_change=(vs[-1] - vs[0]) / (ts[-1] - ts[0]),
        slope=sxy / sxx,
        time_weighted_mean=twm,
    )


# ---------------------------------------------------------------------------
# static encodings


@dataclass(frozen=True)
class QuartileCuts:
    feature: str
    q1: float
    q2: float
    q3: float

    def encode(self, value: float | None) -> float:
        if value is None or (isinstance(value, float) and math.isnan(value)):
            return MISSING
        # value <= cut stays in the lower bin
        return float((value > self.q1) + (value > self.q2) + (value > self.q3))


def fit_quartiles(values: Iterable[float | None], feature: str = "") -> QuartileCuts:
    arr = np.asarray([v for v in values if v is not None], dtype=float)
    arr = arr[~np.isnan(arr)]
    if len(arr) < 4:
        raise FeatureError("insufficient for quartiles")
    q1, q2, q3 = np.percentile(arr, [25, 50, 75])
    return QuartileCuts(feature, float(q1), float(q2), float(q3))


def static_value(p: PatientStatic, feature: str) -> float | None:
    if feature == "age":
        return float(p.age)
    if feature == "height":
        return p.height
    if feature == "weight":
        return p.weight
    if feature == "bmi":
        return p.bmi
    raise KeyError(feature)


def fit_static_cuts(values_by_feature: Mapping[str, Iterable[float | None]]) -> dict[str, QuartileCuts]:
    return {f: fit_quartiles(values_by_feature[f], f) for f in QUARTILE_FEATURES}


def encode_static(p: PatientStatic, cuts: Mapping[str, QuartileCuts]) -> tuple[float, ...]:
    """(gender, age_q, ethnicity, height_q, weight_q, bmi_q)."""
    return (
        1.0 if p.gender == "male" else 0.0,
        cuts["age"].encode(float(p.age)),
        float(ETHNICITIES.index(p.ethnicity)),
        cuts["height"].encode(p.height),
        cuts["weight"].encode(p.weight),
        cuts["bmi"].encode(p.bmi),
    )


def comorbidity_flags(p: PatientStatic) -> tuple[float, ...]:
    return tuple(1.0 if c in p.comorbidities else 0.0 for c in COMORBIDITIES)


# ---------------------------------------------------------------------------
# concomitant treatments


class MedicationCategoryMap:
    """Case-insensitive medication label to treatment category lookup."""

    def __init__(self, mapping: Mapping[str, str]):
        self._map: dict[str, str] = {}
        for label, cat in mapping.items():
            if cat not in TREATMENT_CATEGORIES:
                raise FeatureError(f"unknown treatment category {cat!r}")
            key = label.strip().lower()
            if self._map.get(key, cat) != cat:
                raise FeatureError(f"label {label!r} mapped to two categories")
            self._map[key] = cat
        self.unmapped: Counter = Counter()

    def __len__(self) -> int:
        return len(self._map)

    def category(self, label: str) -> str | None:
        cat = self._map.get(label.strip().lower())
        if cat is None:
            self.unmapped[label] += 1
        return cat

    def labels(self, category: str) -> list[str]:
        return sorted(k for k, v in self._map.items() if v == category)

    @classmethod
    def from_file(cls, path: str | Path) -> "MedicationCategoryMap":
        with open(path, encoding="utf-8") as fh:
            return cls._parse(fh.read())

    @classmethod
    def default(cls) -> "MedicationCategoryMap":
        text = resources.files("vasoinit").joinpath("data/medication_categories.tsv").read_text(encoding="utf-8")
        return cls._parse(text)

    @classmethod
    def _parse(cls, text: str) -> "MedicationCategoryMap":
        pairs: dict[str, str] = {}
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            label, cat = line.rsplit("\t", 1)
            key = label.strip()
            if pairs.get(key, cat.strip()) != cat.strip():
                raise FeatureError(f"label {label!r} mapped to two categories")
            pairs[key] = cat.strip()
        return cls(pairs)


def treatment_flags(
    window: WindowSpec, events: Iterable[ConcomitantEvent], cmap: MedicationCategoryMap
) -> tuple[float, ...]:
    """1.0 for each category given during ``[context_start, context_end)``."""
    present = set()
    for ev in events:
        if window.context_start <= ev.time < window.context_end:
            cat = cmap.category(ev.medication_label)
            if cat is not None:
                present.add(cat)
    return tuple(1.0 if c in present else 0.0 for c in TREATMENT_CATEGORIES)


class StayTreatments:
    """Per-category sorted event times of one stay, for fast window queries."""

    def __init__(self, events: Iterable[ConcomitantEvent], cmap: MedicationCategoryMap):
        by_cat: dict[str, list[int]] = {c: [] for c in TREATMENT_CATEGORIES}
        for ev in events:
            cat = cmap.category(ev.medication_label)
            if cat is not None:
                by_cat[cat].append(ev.time)
        self.times = [np.sort(np.asarray(by_cat[c], dtype=np.int64)) for c in TREATMENT_CATEGORIES]

    def flags(self, context_start: np.ndarray, context_end: np.ndarray) -> np.ndarray:
        out = np.zeros((len(context_start), len(TREATMENT_CATEGORIES)))
        for j, t in enumerate(self.times):
            if len(t):
                out[:, j] = np.searchsorted(t, context_start, "left") < np.searchsorted(t, context_end, "left")
        return out


# ---------------------------------------------------------------------------
# assembly


def assemble(
    stats: MapStats | Sequence[float],
    static_slots: Sequence[float],
    comorbidities: Sequence[float],
    treatments: Sequence[float],
) -> np.ndarray:
    stats_t = stats.as_tuple() if isinstance(stats, MapStats) else tuple(stats)
    if len(stats_t) != len(MAP_STAT_NAMES):
        raise FeatureError(f"expected {len(MAP_STAT_NAMES)} MAP statistics, got {len(stats_t)}")
    if len(static_slots) != len(STATIC_NAMES):
        raise FeatureError(f"expected {len(STATIC_NAMES)} static slots, got {len(static_slots)}")
    if len(comorbidities) != len(COMORBIDITIES):
        raise FeatureError(f"expected {len(COMORBIDITIES)} comorbidity flags, got {len(comorbidities)}")
    if len(treatments) != len(TREATMENT_CATEGORIES):
        raise FeatureError(f"expected {len(TREATMENT_CATEGORIES)} treatment flags, got {len(treatments)}")
    vec = np.array(
        stats_t + tuple(static_slots) + tuple(comorbidities) + (float(sum(comorbidities)),) + tuple(treatments),
        dtype=float,
    )
    assert len(vec) == N_FEATURES
    return vec


@dataclass
class FeatureMatrix:
    X: np.ndarray
    y: np.ndarray
    patient_id: np.ndarray
    stay_id: np.ndarray
    context_start: np.ndarray
    split: np.ndarray
    feature_names: tuple[str, ...] = FEATURE_NAMES

    @property
    def schema_hash(self) -> str:
        return schema_hash(self.feature_names)

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, mask: np.ndarray) -> "FeatureMatrix":
        return FeatureMatrix(
            self.X[mask],
            self.y[mask],
            self.patient_id[mask],
            self.stay_id[mask],
            self.context_start[mask],
            self.split[mask],
            self.feature_names,
        )

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.feature_names.index(name)]

    def save(self, path: str | Path) -> None:
        """Write an ``.npz`` archive with fixed member timestamps (byte-reproducible)."""
        arrays = {
            "X": self.X,
            "y": self.y,
            "patient_id": self.patient_id,
            "stay_id": self.stay_id,
            "context_start": self.context_start,
            "split": self.split,
            "feature_names": np.array(self.feature_names),
        }
        with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
            for name, arr in arrays.items():
                buf = io.BytesIO()
                np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
                zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())

    @classmethod
    def load(cls, path: str | Path) -> "FeatureMatrix":
        with np.load(path) as d:
            names = tuple(str(n) for n in d["feature_names"])
            if names != FEATURE_NAMES:
                raise FeatureError("feature file schema does not match this library's feature schema")
            X = d["X"]
            if np.isinf(X).any():
                raise FeatureError("non-finite feature values")
            return cls(X, d["y"], d["patient_id"], d["stay_id"], d["context_start"], d["split"], names)


def schema_document() -> dict:
    return {
        "feature_names": list(FEATURE_NAMES),
        "n_features": N_FEATURES,
        "missing": "NaN",
        "schema_hash": schema_hash(),
        "units": {"map": "mmHg", "rate_of_change": "mmHg/s", "slope": "mmHg/s"},
        "ethnicity_codes": list(ETHNICITIES),
        "treatment_categories": list(TREATMENT_CATEGORIES),
    }


def write_schema(path: str | Path) -> None:
    Path(path).write_text(json.dumps(schema_document(), indent=2) + "\n")


def build_feature_matrix(
    windows: Sequence[LabeledWindow],
    patients: Mapping[str, PatientStatic],
    meds_by_stay: Mapping[str, Sequence[ConcomitantEvent]],
    cmap: MedicationCategoryMap,
    cuts: Mapping[str, QuartileCuts],
) -> FeatureMatrix:
    """Feature rows for ``windows`` (kept in input order)."""
    n = len(windows)
    X = np.empty((n, N_FEATURES))
    static_cache: dict[str, np.ndarray] = {}
    treat_cache: dict[str, StayTreatments] = {}
    n_map = len(MAP_STAT_NAMES)

    # treatment flags are computed stay by stay
    by_stay: dict[str, list[int]] = {}
    for i, w in enumerate(windows):
        by_stay.setdefault(w.stay_id, []).append(i)
    for stay_id, rows in by_stay.items():
        st = treat_cache.get(stay_id)
        if st is None:
            st = treat_cache[stay_id] = StayTreatments(meds_by_stay.get(stay_id, ()), cmap)
        cs = np.array([windows[i].spec.context_start for i in rows], dtype=np.int64)
        ce = np.array([windows[i].spec.context_end for i in rows], dtype=np.int64)
        X[rows, n_map + len(STATIC_NAMES) + len(COMORBIDITY_NAMES) :] = st.flags(cs, ce)

    for i, w in enumerate(windows):
        stats = map_stats(list(zip(w.map_times.tolist(), w.map_values.tolist())), w.spec.context_start, w.spec.context_end)
        X[i, :n_map] = stats.as_tuple()
        static = static_cache.get(w.patient_id)
        if static is None:
            p = patients[w.patient_id]
            flags = comorbidity_flags(p)
            static = static_cache[w.patient_id] = np.array(encode_static(p, cuts) + flags + (float(sum(flags)),))
        X[i, n_map : n_map + len(static)] = static

    return FeatureMatrix(
        X=X,
        y=np.array([w.label for w in windows], dtype=np.int8),
        patient_id=np.array([w.patient_id for w in windows], dtype=str),
        stay_id=np.array([w.stay_id for w in windows], dtype=str),
        context_start=np.array([w.spec.context_start for w in windows], dtype=np.int64),
        split=np.array([w.split for w in windows], dtype=str),
    )
