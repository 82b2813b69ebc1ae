"""Treatment episodes, sliding windows, labels and patient-level splits."""
from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ingest import AdministrationRecord, MapSeries

MINUTE = 60
CONTEXT = 120 * MINUTE
TARGET = 15 * MINUTE
HOP = 15 * MINUTE
DEFAULT_MERGE_GAP = 15 * MINUTE
MIN_MAP_POINTS = 2
SPLITS = ("train", "valid", "test")


class CohortError(Exception):
    pass


@dataclass(frozen=True)
class TreatmentEpisode:
    stay_id: str
    drug: str
    onset: int
    offset: int


@dataclass(frozen=True)
class WindowSpec:
    context_start: int
    context_end: int
    target_end: int


@dataclass
class LabeledWindow:
    patient_id: str
    stay_id: str
    spec: WindowSpec
    map_times: np.ndarray
    map_values: np.ndarray
    label: bool
    split: str = ""


def group_episodes(admins: Iterable[AdministrationRecord], merge_gap: int = DEFAULT_MERGE_GAP) -> list[TreatmentEpisode]:
    """Merge same-drug administrations separated by at most ``merge_gap`` seconds.

    Rate changes inside a continuous infusion show up as back-to-back records
    and therefore never open a new episode. Different drugs are grouped
    independently and may overlap.
    """
    if merge_gap < 0:
        raise ValueError("merge_gap must be >= 0")
    by_drug: dict[tuple[str, str], list[AdministrationRecord]] = defaultdict(list)
    for rec in admins:
        by_drug[(rec.stay_id, rec.drug)].append(rec)
    episodes = []
    for (stay_id, drug), recs in by_drug.items():
        recs.sort(key=lambda r: (r.start, r.end))
        onset, offset = recs[0].start, recs[0].end
        for rec in recs[1:]:
            if rec.start - offset <= merge_gap:
                offset = max(offset, rec.end)
            else:
                episodes.append(TreatmentEpisode(stay_id, drug, onset, offset))
                onset, offset = rec.start, rec.end
        episodes.append(TreatmentEpisode(stay_id, drug, onset, offset))
    episodes.sort(key=lambda e: (e.stay_id, e.onset, e.drug))
    return episodes


def window_starts(admit: int, discharge: int) -> np.ndarray:
    """Context-window start times on the admission-anchored 15 min grid."""
    span = discharge - admit
    if span < CONTEXT + TARGET:
        return np.empty(0, dtype=np.int64)
    n = (span - CONTEXT - TARGET) // HOP + 1
    return admit + HOP * np.arange(n, dtype=np.int64)


def enumerate_windows(series: MapSeries | None, stay_span: tuple[int, int]) -> list[WindowSpec]:
    admit, discharge = stay_span
    if discharge < admit:
        raise ValueError("discharge precedes admission")
    return [WindowSpec(int(s), int(s) + CONTEXT, int(s) + CONTEXT + TARGET) for s in window_starts(admit, discharge)]


def _onset_array(episodes: Iterable[TreatmentEpisode]) -> np.ndarray:
    return np.sort(np.fromiter((e.onset for e in episodes), dtype=np.int64))


def label_window_arrays(starts: np.ndarray, series: MapSeries, onsets: np.ndarray):
    """Vectorised labelling: (keep mask, label, context slice lo, hi)."""
    ce = starts + CONTEXT
    te = ce + TARGET
    lo = np.searchsorted(series.times, starts, side="left")
    hi = np.searchsorted(series.times, ce, side="left")
    keep = (hi - lo) >= MIN_MAP_POINTS
    label = np.searchsorted(onsets, ce, side="left") < np.searchsorted(onsets, te, side="left")
    return keep, label, lo, hi


def label_windows(
    specs: Sequence[WindowSpec],
    series: MapSeries,
    episodes: Iterable[TreatmentEpisode],
    patient_id: str = "",
) -> list[LabeledWindow]:
    """Attach labels and context MAP points; windows with < 2 points are dropped.

    A window is positive iff some episode onset lies in ``[context_end, target_end)``.
    """
    if not specs:
        return []
    starts = np.fromiter((s.context_start for s in specs), dtype=np.int64, count=len(specs))
    keep, label, lo, hi = label_window_arrays(starts, series, _onset_array(episodes))
    out = []
    for i in np.flatnonzero(keep):
        out.append(
            LabeledWindow(
                patient_id=patient_id,
                stay_id=series.stay_id,
                spec=specs[i],
                map_times=series.times[lo[i] : hi[i]],
                map_values=series.values[lo[i] : hi[i]],
                label=bool(label[i]),
            )
        )
    return out


def split_patients(
    patient_ids: Iterable[str],
    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15),
    seed: int = 42,
) -> dict[str, str]:
    """Deterministic patient-to-split assignment from ``(seed, sorted ids)``."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must be three non-negative numbers summing to 1")
    ids = sorted(set(patient_ids))
    if len(ids) < 3:
        raise CohortError("insufficient cohort")
    order = np.random.default_rng(seed).permutation(len(ids))
    n_train = int(round(ratios[0] * len(ids)))
    n_valid = int(round(ratios[1] * len(ids)))
    assignment = {}
    for rank, idx in enumerate(order):
        if rank < n_train:
            assignment[ids[idx]] = "train"
        elif rank < n_train + n_valid:
            assignment[ids[idx]] = "valid"
        else:
            assignment[ids[idx]] = "test"
    return assignment


def assign_splits(windows: Iterable[LabeledWindow], assignment: Mapping[str, str]) -> list[LabeledWindow]:
    return [replace(w, split=assignment[w.patient_id]) for w in windows]


def split_leakage(windows: Iterable[LabeledWindow]) -> int:
    """Number of patients whose windows fall into more than one split."""
    seen: dict[str, set[str]] = defaultdict(set)
    for w in windows:
        seen[w.patient_id].add(w.split)
    return sum(1 for s in seen.values() if len(s) > 1)


def label_alignment_stats(
    windows: Iterable[LabeledWindow],
    series: Mapping[str, MapSeries],
    episodes: Mapping[str, Sequence[TreatmentEpisode]],
    bins: Sequence[float] | None = None,
) -> dict:
    """Distribution of the last MAP value recorded before each labelled onset.

    For every onset inside a kept window's target interval the last MAP at or
    before the onset is taken; target-window readings naturally win over
    context-window ones because they are later. Onsets with no reading in
    either window are skipped and counted.
    """
    last_values = []
    n_onsets = 0
    skipped = 0
    for w in windows:
        if not w.label:
            continue
        s = series[w.stay_id]
        for ep in episodes.get(w.stay_id, ()):
            if not w.spec.context_end <= ep.onset < w.spec.target_end:
                continue
            n_onsets += 1
            j = np.searchsorted(s.times, ep.onset, side="right") - 1
            if j >= 0 and s.times[j] >= w.spec.context_start:
                last_values.append(float(s.values[j]))
            else:
                skipped += 1
    if n_onsets == 0:
        raise CohortError("no onsets")
    values = np.asarray(last_values)
    edges = np.asarray(bins if bins is not None else np.arange(30.0, 205.0, 5.0))
    counts, edges = np.histogram(values, bins=edges)
    if len(values) == 0:
        p25 = med = p75 = float("nan")
    else:
        p25, med, p75 = (float(v) for v in np.percentile(values, [25, 50, 75]))
    return {
        "median": med,
        "p25": p25,
        "p75": p75,
        "n_onsets": n_onsets,
        "n_skipped": skipped,
        "values": values,
        "histogram": {"edges": edges.tolist(), "counts": counts.tolist()},
    }


WINDOW_COLUMNS = ("patient_id", "stay_id", "context_start", "context_end", "target_end", "label", "split", "n_map")


def write_windows(path: str | Path, windows: Sequence[LabeledWindow]) -> None:
    """One row per labelled window; ``.csv`` or ``.npz`` chosen by suffix."""
    path = Path(path)
    cols = {
        "patient_id": np.array([w.patient_id for w in windows], dtype=str),
        "stay_id": np.array([w.stay_id for w in windows], dtype=str),
        "context_start": np.array([w.spec.context_start for w in windows], dtype=np.int64),
        "context_end": np.array([w.spec.context_end for w in windows], dtype=np.int64),
        "target_end": np.array([w.spec.target_end for w in windows], dtype=np.int64),
        "label": np.array([int(w.label) for w in windows], dtype=np.int8),
        "split": np.array([w.split for w in windows], dtype=str),
        "n_map": np.array([len(w.map_times) for w in windows], dtype=np.int32),
    }
    if path.suffix == ".npz":
        np.savez(path, **cols)
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(WINDOW_COLUMNS)
        for i in range(len(windows)):
            writer.writerow([cols[c][i] for c in WINDOW_COLUMNS])


def read_windows(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as data:
            return {c: data[c] for c in WINDOW_COLUMNS}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != WINDOW_COLUMNS:
            raise CohortError(f"unexpected windows header {reader.fieldnames}")
        rows = list(reader)
    out = {}
    for c in WINDOW_COLUMNS:
        vals = [r[c] for r in rows]
        if c in ("patient_id", "stay_id", "split"):
            out[c] = np.array(vals, dtype=str)
        else:
            out[c] = np.array(vals, dtype=np.int64)
    return out
