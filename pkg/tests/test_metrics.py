import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import pairwise_auc
from vasoinit.features import FEATURE_NAMES
from vasoinit.metrics import (
    LAST_MAP_BANDS,
    REPORT_FILES,
    MetricError,
    RocCurve,
    band_auc,
    bootstrap_ci,
    bootstrap_many,
    calibration_stats,
    confusion_counts,
    confusion_metrics,
    default_subgroups,
    evaluate,
    expected_calibration_error,
    net_benefit,
    ratios,
    roc_auroc,
    subgroup_report,
    threshold_at_sensitivity,
    threshold_table,
    write_report,
    youden_threshold,
)

S4 = [0.9, 0.8, 0.3, 0.2]


# --- ROC ----------------------------------------------------------------------


def test_auroc_examples():
    assert roc_auroc(S4, [1, 1, 0, 0])[1] == 1.0
    assert roc_auroc(S4, [1, 0, 1, 0])[1] == 0.75
    assert roc_auroc([0.4] * 6, [1, 0, 1, 0, 0, 0])[1] == 0.5


def test_one_class_undefined():
    with pytest.raises(MetricError, match="undefined AUROC"):
        roc_auroc([0.1, 0.2], [1, 1])


def test_curve_shape():
    curve, _ = roc_auroc([0.9, 0.5, 0.5, 0.1], [1, 1, 0, 0])
    assert curve.fpr.tolist() == [0.0, 0.0, 0.5, 1.0]
    assert curve.tpr.tolist() == [0.0, 0.5, 1.0, 1.0]
    assert curve.threshold[0] == math.inf and curve.threshold[1:].tolist() == [0.9, 0.5, 0.1]


scored = st.lists(st.tuples(st.integers(0, 20), st.booleans()), min_size=2, max_size=200)


@given(scored)
def test_auroc_matches_pairwise(rows):
    s = [r[0] / 20 for r in rows]
    y = [r[1] for r in rows]
    if all(y) or not any(y):
        return
    curve, auc = roc_auroc(s, y)
    assert auc == pairwise_auc(s, y)
    assert (np.diff(curve.fpr) >= 0).all() and (np.diff(curve.tpr) >= 0).all()
    assert (curve.fpr[0], curve.tpr[0], curve.fpr[-1], curve.tpr[-1]) == (0, 0, 1, 1)


# --- band AUC ---------------------------------------------------------------


def test_band_perfect_and_diagonal():
    assert band_auc(roc_auroc(S4, [1, 1, 0, 0])[0]) == 1.0
    diag = RocCurve(np.array([0.0, 1.0]), np.array([0.0, 1.0]), np.array([np.inf, 0.0]))
    assert band_auc(diag, 0.75, 0.85) == pytest.approx(0.20, abs=1e-12)


def test_band_checks():
    curve = roc_auroc(S4, [1, 0, 1, 0])[0]
    with pytest.raises(MetricError):
        band_auc(curve, 0.9, 0.8)


@given(scored)
def test_full_band_equals_mean_specificity(rows):
    s = [r[0] / 20 for r in rows]
    y = [r[1] for r in rows]
    if all(y) or not any(y):
        return
    curve, auc = roc_auroc(s, y)
    # integral of (1 - fpr) dtpr with tie groups as diagonal segments is the AUROC
    assert band_auc(curve, 0.0, 1.0) == pytest.approx(auc, abs=1e-12)
    assert 0.0 <= band_auc(curve, 0.75, 0.85) <= 1.0


@given(st.integers(2, 30), st.integers(2, 30))
def test_band_monotone_when_adding_ranked_positive(P, N):
    s = list(np.linspace(1, 0.5, P)) + list(np.linspace(0.4, 0, N))
    y = [1] * P + [0] * N
    before = band_auc(roc_auroc(s, y)[0])
    after = band_auc(roc_auroc(s + [1.5], y + [1])[0])
    assert after >= before - 1e-12


# --- thresholds -------------------------------------------------------------


def test_target_sensitivity_example():
    s = [0.9, 0.7, 0.5, 0.3, 0.1, 0.6, 0.4, 0.2]
    y = [1, 1, 1, 1, 1, 0, 0, 0]
    row = threshold_at_sensitivity(s, y, 0.8)
    assert row.threshold == 0.3 and row.tp == 4 and row.sens == 0.8
    assert threshold_at_sensitivity(s, y, 1.0).threshold == 0.1


@given(scored, st.sampled_from([0.7, 0.75, 0.8, 0.85, 0.9, 1.0]))
def test_sensitivity_floor_and_maximality(rows, target):
    s = np.array([r[0] / 20 for r in rows])
    y = np.array([r[1] for r in rows])
    if not y.any():
        return
    row = threshold_at_sensitivity(s, y, target)
    assert row.sens >= target
    higher = s[s > row.threshold]
    if len(higher):
        # the next candidate up misses the floor
        assert confusion_metrics(s, y, higher.min())["sens"] < target


def test_youden_example():
    row = youden_threshold(S4, [1, 0, 1, 0])
    assert row.youden_j == pytest.approx(0.5)
    # 0.3 reaches the same J; the tie goes to the higher threshold
    assert row.threshold == 0.9
    m = confusion_metrics(S4, [1, 0, 1, 0], 0.3)
    assert m["sens"] + m["spec"] - 1 == pytest.approx(0.5)


def test_youden_separated():
    row = youden_threshold([0.9, 0.8, 0.3, 0.2], [1, 1, 0, 0])
    assert row.youden_j == 1.0 and row.threshold == 0.8


def test_youden_chance():
    rng = np.random.default_rng(8)
    s, y = rng.random(10000), rng.random(10000) < 0.5
    assert abs(youden_threshold(s, y).youden_j) < 0.1


@given(st.lists(st.tuples(st.integers(0, 50), st.booleans()), min_size=2, max_size=500))
def test_youden_exhaustively_maximal(rows):
    s = np.array([r[0] / 50 for r in rows])
    y = np.array([r[1] for r in rows])
    if y.all() or not y.any():
        return
    best = youden_threshold(s, y)
    P, N = y.sum(), (~y).sum()
    for t in list(np.unique(s)) + [np.inf]:
        tp, fp, tn, fn = confusion_counts(s, y, t)
        j_num = tp * N - fp * P
        assert best.tp * N - best.fp * P >= j_num
        if j_num == best.tp * N - best.fp * P:
            assert best.threshold >= t


def test_threshold_table_grid():
    rng = np.random.default_rng(9)
    rows = threshold_table(rng.random(300), rng.random(300) < 0.2)
    assert [r.policy for r in rows] == [
        "target_sens(0.7)", "target_sens(0.75)", "target_sens(0.8)", "target_sens(0.85)", "target_sens(0.9)", "youden",
    ]


def test_confusion_hand_case():
    r = ratios(tp=8, fp=30, tn=60, fn=2)
    assert r["sens"] == 0.8 and r["spec"] == pytest.approx(2 / 3)
    assert r["ppv"] == pytest.approx(8 / 38) and r["npv"] == pytest.approx(60 / 62)


def test_confusion_extremes():
    s, y = [0.2, 0.4, 0.6], [1, 0, 1]
    hi = confusion_metrics(s, y, 0.9)
    assert hi["sens"] == 0 and hi["spec"] == 1 and math.isnan(hi["ppv"])
    lo = confusion_metrics(s, y, 0.0)
    assert lo["sens"] == 1 and lo["spec"] == 0 and math.isnan(lo["npv"])
    assert confusion_counts(s, y, 0.4) == (1, 1, 0, 1)  # inclusive rule


# --- calibration --------------------------------------------------------------


def test_consistent_probabilities():
    rng = np.random.default_rng(10)
    p = rng.uniform(0.02, 0.98, 100_000)
    y = rng.random(100_000) < p
    c = calibration_stats(p, y)
    assert 0.9 <= c.slope <= 1.1 and -0.1 <= c.intercept <= 0.1
    assert c.ece < 0.01
    assert c.bin_count.sum() == 100_000 and len(c.bin_count) == 15


def test_perfect_predictions():
    y = np.array([0, 1, 1, 0, 1])
    c = calibration_stats(y.astype(float), y)
    assert c.brier == 0 and c.ece == 0


def test_base_rate_predictor():
    rng = np.random.default_rng(11)
    y = rng.random(5000) < 0.1
    prev = y.mean()
    c = calibration_stats(np.full(5000, prev), y)
    assert c.ece == pytest.approx(0.0, abs=1e-12)
    assert c.brier == pytest.approx(prev * (1 - prev), rel=1e-9)


def test_single_class_slope_missing():
    c = calibration_stats([0.1, 0.2], [0, 0])
    assert math.isnan(c.slope) and math.isnan(c.intercept)


def test_ece_hand_case():
    # bins of width 1/15: 0.01 and 0.02 share bin 0, 0.99 sits in the last
    p = np.array([0.01, 0.02, 0.99])
    y = np.array([0, 1, 1])
    assert expected_calibration_error(p, y) == pytest.approx(2 / 3 * abs(0.015 - 0.5) + 1 / 3 * 0.01)


# --- net benefit --------------------------------------------------------------


def test_net_benefit_direct_formula():
    p = np.r_[np.full(10, 0.9), np.full(90, 0.1)]
    y = np.r_[np.ones(10), np.zeros(90)]
    nb = net_benefit(p, y, [0.2])
    assert nb.nb_model[0] == pytest.approx(0.10)


def test_treat_all_limit_and_empty_model():
    y = np.r_[np.ones(3), np.zeros(97)]
    nb = net_benefit(np.zeros(100), y, [1e-9, 0.3])
    assert nb.nb_treat_all[0] == pytest.approx(0.03, abs=1e-9)
    assert np.all(nb.nb_model == 0) and np.all(nb.nb_treat_none == 0)


@given(st.lists(st.booleans(), min_size=1, max_size=100), st.lists(st.floats(0.001, 0.999), min_size=1, max_size=20))
def test_perfect_classifier_dominates(y, ts):
    y = np.array(y)
    nb = net_benefit(y.astype(float), y, ts)
    assert np.all(nb.nb_model >= nb.nb_treat_all - 1e-12) and np.all(nb.nb_model >= 0)


def test_net_benefit_grid_validation():
    with pytest.raises(MetricError):
        net_benefit([0.1], [1], [0.0])


# --- bootstrap ----------------------------------------------------------------


def test_constant_metric_zero_width():
    ci = bootstrap_ci(lambda s, y: 0.42, np.arange(20.0), np.arange(20) % 2, n_boot=50)
    assert ci.lower == ci.upper == ci.point == 0.42


def test_bootstrap_deterministic_and_contains_point():
    rng = np.random.default_rng(12)
    s = rng.random(200)
    y = rng.random(200) < 0.3 + 0.4 * s
    a = bootstrap_ci(lambda s_, y_: roc_auroc(s_, y_)[1], s, y, n_boot=300, seed=5)
    b = bootstrap_ci(lambda s_, y_: roc_auroc(s_, y_)[1], s, y, n_boot=300, seed=5)
    assert a == b
    assert a.lower <= a.point <= a.upper


def test_iteration_seeds_are_independent():
    # iteration b depends only on seed ^ b, so the first k of n resamples agree
    s = np.linspace(0, 1, 40)
    y = np.arange(40) % 3 == 0
    vals = []
    fn = lambda s_, y_: vals.append(float(s_.sum())) or 0.0  # noqa: E731
    bootstrap_ci(fn, s, y, n_boot=5, seed=3)
    first = vals[1:]
    vals.clear()
    bootstrap_ci(fn, s, y, n_boot=9, seed=3)
    assert vals[1:6] == first


def test_single_class_resamples_redrawn():
    s = np.arange(30.0)
    y = np.zeros(30, dtype=bool)
    y[0] = True
    ci = bootstrap_ci(lambda s_, y_: roc_auroc(s_, y_)[1], s, y, n_boot=100, seed=0)
    assert ci.n_redrawn > 0 and ci.n_undefined == 0


def test_undefined_metric_errors():
    with pytest.raises(MetricError):
        bootstrap_ci(lambda s, y: float("nan"), np.arange(10.0), np.arange(10) % 2, n_boot=20)


# --- subgroups and report -------------------------------------------------------


def _frame(n=400, seed=13):
    rng = np.random.default_rng(seed)
    X = np.zeros((n, 37))
    j = FEATURE_NAMES.index
    X[:, j("gender")] = rng.integers(0, 2, n)
    X[:, j("ethnicity")] = rng.integers(0, 5, n)
    for q in ("age_q", "height_q", "weight_q", "bmi_q"):
        X[:, j(q)] = rng.integers(0, 4, n)
    X[:, j("last")] = rng.uniform(50, 120, n)
    X[:, j("diabetes")] = rng.integers(0, 2, n)
    X[:, j("n_comorbidities")] = X[:, j("diabetes")]
    y = (rng.random(n) < 0.15).astype(int)
    X[:, j("sedatives")] = y  # only positives get sedatives
    s = np.clip(0.5 * y + rng.random(n) * 0.7, 0, 1)
    return X, s, y


def test_everything_subgroup_equals_overall():
    X, s, y = _frame()
    rows = subgroup_report(X, s, y, 0.5, default_subgroups(FEATURE_NAMES))
    allrow = rows[0]
    m = confusion_metrics(s, y, 0.5)
    assert allrow.subgroup == "all" and allrow.total == len(y) and allrow.pos == y.sum()
    assert allrow.auroc == roc_auroc(s, y)[1] and allrow.sens == m["sens"] and allrow.spec == m["spec"]


def test_zero_positive_subgroup():
    X, s, y = _frame()
    rows = {r.subgroup: r for r in subgroup_report(X, s, y, 0.5, default_subgroups(FEATURE_NAMES))}
    r = rows["sedatives = 0"]
    assert r.pos == 0 and math.isnan(r.auroc) and not math.isnan(r.spec)
    assert rows["Comorbidities >= 2"].total == 0


def test_last_map_bands():
    assert [b[0] for b in LAST_MAP_BANDS] == ["last <= 65", "65 < last <= 70", "70 < last <= 100", "last > 100"]
    X, s, y = _frame()
    X[:4, FEATURE_NAMES.index("last")] = [65.0, 70.0, 100.0, 100.5]
    rows = {r.subgroup: r for r in subgroup_report(X, s, y, 0.5, default_subgroups(FEATURE_NAMES))}
    last = X[:, FEATURE_NAMES.index("last")]
    assert rows["last <= 65"].total == (last <= 65).sum()
    assert rows["65 < last <= 70"].total == ((last > 65) & (last <= 70)).sum()
    assert sum(rows[b[0]].total for b in LAST_MAP_BANDS) == len(y)


def test_quartile_labels_use_cuts():
    names = [g.name for g in default_subgroups(FEATURE_NAMES, {"age": [53.0, 64.5, 76.0]})]
    assert "age <= 53.0" in names and "age > 76.0" in names


def test_report_files(tmp_path):
    X, s, y = _frame()
    report, curves = evaluate({"model": s, "other": 1 - s}, y, X=X, feature_names=FEATURE_NAMES, primary="model", n_boot=30)
    written = write_report(tmp_path, report, curves)
    assert sorted(p.name for p in written) == sorted(REPORT_FILES)
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["ece_bins"] == 15 and doc["bootstrap"]["n_boot"] == 30
    sec = doc["models"]["model"]
    assert sec["auroc"]["lower"] <= sec["auroc"]["point"] <= sec["auroc"]["upper"]
    assert [t["policy"] for t in sec["thresholds"]][-1] == "youden"
    with open(tmp_path / "net_benefit.csv") as fh:
        header = next(csv.reader(fh))
    assert header == ["threshold", "nb_model", "nb_other", "nb_treat_all", "nb_treat_none"]
    roc_rows = list(csv.DictReader(open(tmp_path / "roc.csv")))
    assert roc_rows[0]["threshold"] == "inf"


def test_ratio_undefined_everywhere_gives_nan_interval():
    s = np.arange(10.0)
    y = np.arange(10) % 2
    cis = bootstrap_many(
        {"npv": lambda s_, y_: ratios(*confusion_counts(s_, y_, -1.0))["npv"]}, s, y, n_boot=20, allow_undefined={"npv"}
    )
    assert math.isnan(cis["npv"].lower) and cis["npv"].n_undefined == 20
