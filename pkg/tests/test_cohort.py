import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import merged_episodes, scan_labels
from vasoinit.cohort import (
    CohortError,
    LabeledWindow,
    TreatmentEpisode,
    WindowSpec,
    assign_splits,
    enumerate_windows,
    group_episodes,
    label_alignment_stats,
    label_windows,
    read_windows,
    split_leakage,
    split_patients,
    write_windows,
)
from vasoinit.ingest import DRUGS, AdministrationRecord, MapSeries

MIN = 60


def A(drug, start, end, rate=None, stay="s1"):
    return AdministrationRecord(stay, drug, start * MIN, end * MIN, rate)


def series(times, values=None, stay="s1"):
    times = np.asarray(times, dtype=np.int64)
    values = np.full(len(times), 75.0) if values is None else np.asarray(values, dtype=float)
    return MapSeries(stay, times, values, np.zeros(len(times), dtype=bool))


# --- episodes ---------------------------------------------------------------


def test_dose_change_is_not_a_new_onset():
    eps = group_episodes([A("norepinephrine", 0, 60, 5), A("norepinephrine", 60, 120, 10)])
    assert [(e.drug, e.onset, e.offset) for e in eps] == [("norepinephrine", 0, 120 * MIN)]


def test_different_drugs_overlap():
    eps = group_episodes([A("norepinephrine", 0, 60), A("vasopressin", 30, 90)])
    assert [(e.drug, e.onset) for e in eps] == [("norepinephrine", 0), ("vasopressin", 30 * MIN)]


def test_long_gap_splits_episode():
    eps = group_episodes([A("norepinephrine", 0, 60), A("norepinephrine", 420, 480)], merge_gap=15 * MIN)
    assert [e.onset for e in eps] == [0, 420 * MIN]


def test_gap_boundary_merges():
    eps = group_episodes([A("dopamine", 0, 60), A("dopamine", 75, 90)], merge_gap=15 * MIN)
    assert len(eps) == 1
    eps = group_episodes([A("dopamine", 0, 60), A("dopamine", 76, 90)], merge_gap=15 * MIN)
    assert len(eps) == 2


def test_empty_admins():
    assert group_episodes([]) == []


admin_lists = st.lists(
    st.tuples(st.sampled_from(DRUGS[:3]), st.integers(0, 600), st.integers(1, 120)).map(
        lambda t: A(t[0], t[1], t[1] + t[2])
    ),
    max_size=10,
)


@given(admin_lists, st.integers(0, 60))
def test_grouping_matches_interval_union(admins, gap_min):
    gap = gap_min * MIN
    got = [(e.drug, e.onset, e.offset) for e in group_episodes(admins, gap)]
    assert sorted(got, key=lambda e: (e[1], e[0])) == merged_episodes(admins, gap)
    # same-drug episodes never overlap
    for drug in DRUGS:
        spans = sorted((s, e) for d, s, e in got if d == drug)
        assert all(a[1] < b[0] for a, b in zip(spans, spans[1:]))


# --- windows ----------------------------------------------------------------


@pytest.mark.parametrize("minutes, expected", [(135, 1), (150, 2), (134, 0), (149, 1), (0, 0)])
def test_window_count(minutes, expected):
    assert len(enumerate_windows(None, (1000, 1000 + minutes * MIN))) == expected


@given(st.integers(0, 10**6), st.integers(0, 3000))
def test_window_grid(admit, span_min):
    specs = enumerate_windows(None, (admit, admit + span_min * MIN))
    assert len(specs) == max(0, (span_min - 135) // 15 + 1)
    for k, w in enumerate(specs):
        assert w.context_start == admit + k * 900
        assert w.context_end - w.context_start == 7200 and w.target_end - w.context_end == 900
    if specs:
        assert specs[-1].target_end <= admit + span_min * MIN


def _one_window(onsets_min, map_min=(0, 60)):
    spec = WindowSpec(0, 7200, 8100)
    eps = [TreatmentEpisode("s1", "norepinephrine", m * MIN, m * MIN + 600) for m in onsets_min]
    return label_windows([spec], series([m * MIN for m in map_min]), eps)


def test_onset_in_target_is_positive():
    (w,) = _one_window([125])
    assert w.label


def test_onset_in_context_is_negative():
    (w,) = _one_window([119])
    assert not w.label


def test_target_interval_half_open():
    assert _one_window([120])[0].label
    assert not _one_window([135])[0].label


def test_single_map_point_excludes_window():
    assert _one_window([125], map_min=(10,)) == []


def test_context_points_half_open():
    # a reading at context_end belongs to the next window, not this one
    assert _one_window([], map_min=(0, 120)) == []
    (w,) = _one_window([], map_min=(0, 119))
    assert w.map_times.tolist() == [0, 119 * MIN]


@given(
    st.integers(0, 10**5),
    st.integers(0, 1500),
    st.lists(st.integers(0, 1500), max_size=60),
    st.lists(st.integers(-200, 1700), max_size=6),
)
def test_labels_match_exhaustive_scan(admit, span_min, map_min, onset_min):
    discharge = admit + span_min * MIN
    times = sorted({admit + m * MIN for m in map_min})
    onsets = [admit + m * MIN for m in onset_min]
    eps = [TreatmentEpisode("s1", "dopamine", o, o + 60) for o in onsets]
    got = label_windows(enumerate_windows(None, (admit, discharge)), series(times), eps)
    assert [(w.spec.context_start, w.label) for w in got] == scan_labels(admit, discharge, times, onsets)
    assert all(len(w.map_times) >= 2 for w in got)


# --- splits -----------------------------------------------------------------


def test_split_counts_and_determinism():
    ids = [f"p{i:03d}" for i in range(100)]
    a = split_patients(ids, seed=42)
    counts = {s: sum(v == s for v in a.values()) for s in ("train", "valid", "test")}
    assert counts == {"train": 70, "valid": 15, "test": 15}
    assert split_patients(list(reversed(ids)), seed=42) == a
    assert split_patients(ids, seed=43) != a


def test_split_needs_three_patients():
    with pytest.raises(CohortError, match="insufficient cohort"):
        split_patients(["a", "b"])


def test_patient_windows_share_a_split():
    spec = WindowSpec(0, 7200, 8100)
    ws = [LabeledWindow(f"p{i % 7}", f"s{i}", spec, np.zeros(2), np.zeros(2), False) for i in range(50)]
    out = assign_splits(ws, split_patients([f"p{i}" for i in range(7)], seed=1))
    assert split_leakage(out) == 0
    for pid in {w.patient_id for w in out}:
        assert len({w.split for w in out if w.patient_id == pid}) == 1


def test_leakage_counter_detects_overlap():
    spec = WindowSpec(0, 7200, 8100)
    ws = [LabeledWindow("p1", "s1", spec, np.zeros(2), np.zeros(2), False, s) for s in ("train", "test")]
    assert split_leakage(ws) == 1


# --- label alignment --------------------------------------------------------


def _aligned(values):
    # one onset per stay, each preceded by a reading with the given value
    windows, ser, eps = [], {}, {}
    for k, v in enumerate(values):
        sid = f"s{k}"
        s = series([0, 3600, 7300], [80.0, 75.0, v], stay=sid)
        ser[sid] = s
        eps[sid] = [TreatmentEpisode(sid, "norepinephrine", 7500, 9000)]
        windows += label_windows([WindowSpec(0, 7200, 8100)], s, eps[sid], "p")
    return label_alignment_stats(windows, ser, eps)


def test_alignment_singleton():
    st_ = _aligned([67.0])
    assert st_["median"] == st_["p25"] == st_["p75"] == 67.0


def test_alignment_median():
    assert _aligned([80.0, 60.0, 67.0])["median"] == 67.0


def test_alignment_prefers_target_reading_and_falls_back():
    s = series([0, 3600], [70.0, 64.0])
    eps = [TreatmentEpisode("s1", "dopamine", 7500, 9000)]
    ws = label_windows([WindowSpec(0, 7200, 8100)], s, eps)
    assert label_alignment_stats(ws, {"s1": s}, {"s1": eps})["median"] == 64.0


def test_alignment_no_onsets():
    with pytest.raises(CohortError, match="no onsets"):
        label_alignment_stats([], {}, {})


def test_windows_file_round_trip(tmp_path):
    spec = WindowSpec(0, 7200, 8100)
    ws = [LabeledWindow("p1", "s1", spec, np.array([0, 60]), np.array([70.0, 71.0]), True, "train")]
    for name in ("w.csv", "w.npz"):
        write_windows(tmp_path / name, ws)
        back = read_windows(tmp_path / name)
        assert back["label"].tolist() == [1] or back["label"].tolist() == [True]
        assert back["context_start"].tolist() == [0]
        assert [str(x) for x in back["split"]] == ["train"]
