"""Glue from parsed cohort tables to a labelled feature matrix."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cohort import (
    DEFAULT_MERGE_GAP,
    SPLITS,
    LabeledWindow,
    TreatmentEpisode,
    assign_splits,
    enumerate_windows,
    group_episodes,
    label_windows,
    split_leakage,
    split_patients,
)
from .features import (
    N_FEATURES,
    QUARTILE_FEATURES,
    FeatureMatrix,
    MedicationCategoryMap,
    QuartileCuts,
    build_feature_matrix,
    fit_static_cuts,
    static_value,
)
from .ingest import CohortEvents, MapSeries, fuse_map, group_by_stay


class InvariantError(Exception):
    """An internal consistency check failed."""


@dataclass
class Dataset:
    features: FeatureMatrix
    windows: list[LabeledWindow]
    series: dict[str, MapSeries]
    episodes: dict[str, list[TreatmentEpisode]]
    cuts: dict[str, QuartileCuts]
    assignment: dict[str, str]
    unmapped_labels: dict[str, int] = field(default_factory=dict)

    def summary(self) -> dict:
        y = self.features.y
        split = self.features.split
        sizes = {s: int((split == s).sum()) for s in SPLITS}
        positives = {s: int(y[split == s].sum()) for s in SPLITS}
        return {
            "n_patients": len(self.assignment),
            "n_stays": len(self.series),
            "n_windows": int(len(y)),
            "n_positive": int(y.sum()),
            "prevalence": float(y.mean()) if len(y) else 0.0,
            "split_windows": sizes,
            "split_positives": positives,
            "quartile_cuts": {k: [c.q1, c.q2, c.q3] for k, c in self.cuts.items()},
            "unmapped_medication_labels": dict(sorted(self.unmapped_labels.items())),
        }


def _fit_cuts(events: CohortEvents, assignment: dict[str, str]) -> dict[str, QuartileCuts]:
    # one value per training patient, so long stays do not dominate
    train = [p for p in events.patients if assignment.get(p.patient_id) == "train"]
    if len(train) < 4:
        train = list(events.patients)
    return fit_static_cuts({f: [static_value(p, f) for p in train] for f in QUARTILE_FEATURES})


def build_dataset(
    events: CohortEvents,
    mode: str = "mix",
    split_seed: int = 42,
    merge_gap: int = DEFAULT_MERGE_GAP,
    cmap: MedicationCategoryMap | None = None,
) -> Dataset:
    """Fuse MAP, window and label every stay, split by patient and extract features.

    Quartile cut points for the static features are fitted on training
    patients only.
    """
    cmap = cmap or MedicationCategoryMap.default()
    patients = {p.patient_id: p for p in events.patients}
    readings = group_by_stay(events.map_readings)
    admins = group_by_stay(events.admins)
    meds = group_by_stay(events.meds)

    series: dict[str, MapSeries] = {}
    episodes: dict[str, list[TreatmentEpisode]] = {}
    windows: list[LabeledWindow] = []
    for stay in sorted(events.stays, key=lambda s: s.stay_id):
        if stay.patient_id not in patients:
            continue
        s = fuse_map(readings.get(stay.stay_id, ()), mode, stay.stay_id)
        series[stay.stay_id] = s
        eps = group_episodes(admins.get(stay.stay_id, ()), merge_gap)
        episodes[stay.stay_id] = eps
        specs = enumerate_windows(s, (stay.admit, stay.discharge))
        windows += label_windows(specs, s, eps, stay.patient_id)

    if events.patients:
        assignment = split_patients(patients, seed=split_seed)
    else:
        assignment = {}
    windows = assign_splits(windows, assignment)
    if split_leakage(windows):
        raise InvariantError("a patient appears in more than one split")

    if windows:
        cuts = _fit_cuts(events, assignment)
        fm = build_feature_matrix(windows, patients, meds, cmap, cuts)
    else:
        cuts = _fit_cuts(events, assignment) if len(events.patients) >= 4 else {}
        fm = FeatureMatrix(
            X=np.empty((0, N_FEATURES)),
            y=np.empty(0, dtype=np.int8),
            patient_id=np.empty(0, dtype=str),
            stay_id=np.empty(0, dtype=str),
            context_start=np.empty(0, dtype=np.int64),
            split=np.empty(0, dtype=str),
        )
    return Dataset(fm, windows, series, episodes, cuts, assignment, dict(cmap.unmapped))
