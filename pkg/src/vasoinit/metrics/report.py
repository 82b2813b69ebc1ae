"""Evaluation report: one JSON document plus plot-ready CSV curves."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .bootstrap import bootstrap_many
from .calibration import DEFAULT_BINS, calibration_stats
from .decision import default_grid, net_benefit
from .roc import band_auc, roc_auroc
from .subgroups import default_subgroups, subgroup_report
from .thresholds import confusion_counts, ratios, threshold_table

DEFAULT_TARGETS = (0.70, 0.75, 0.80, 0.85, 0.90)
DEFAULT_BAND = (0.75, 0.85)
REPORT_FILES = ("report.json", "roc.csv", "calibration_bins.csv", "net_benefit.csv", "thresholds.csv", "subgroups.csv")


def _clean(obj):
    """JSON-safe copy: NaN/inf become null, numpy scalars become Python numbers."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _stat_at(t, key):
    return lambda s, y: ratios(*confusion_counts(s, y, t))[key]


def evaluate_scores(
    probs,
    labels,
    targets: Sequence[float] = DEFAULT_TARGETS,
    band: tuple[float, float] = DEFAULT_BAND,
    n_boot: int = 1000,
    seed: int = 0,
    n_bins: int = DEFAULT_BINS,
    thresholds_grid=None,
) -> tuple[dict, dict]:
    """Metrics for one model; returns (report section, curve arrays)."""
    p = np.asarray(probs, dtype=float)
    y = np.asarray(labels).astype(int)
    curve, _ = roc_auroc(p, y)
    rows = threshold_table(p, y, targets)

    fns = {
        "auroc": lambda s, yy: roc_auroc(s, yy)[1],
        "band_auc": lambda s, yy: band_auc(roc_auroc(s, yy)[0], *band),
    }
    for r in rows:
        for key in ("sens", "spec", "ppv", "npv"):
            fns[f"{r.policy}:{key}"] = _stat_at(r.threshold, key)
    # a ratio can be undefined at its threshold (NPV when everything is flagged)
    lenient = [k for k in fns if ":" in k]
    cis = bootstrap_many(fns, p, y, n_boot=n_boot, seed=seed, allow_undefined=lenient)

    cal = calibration_stats(p, y, n_bins)
    nb = net_benefit(p, y, default_grid() if thresholds_grid is None else thresholds_grid)
    section = {
        "n": int(len(y)),
        "n_positive": int(y.sum()),
        "auroc": cis["auroc"].to_dict(),
        "band_auc": {**cis["band_auc"].to_dict(), "tpr_lo": band[0], "tpr_hi": band[1]},
        "calibration": cal.to_dict(),
        "thresholds": [
            {**r.to_dict(), "ci": {k: [cis[f"{r.policy}:{k}"].lower, cis[f"{r.policy}:{k}"].upper] for k in ("sens", "spec", "ppv", "npv")}}
            for r in rows
        ],
    }
    curves = {"roc": curve, "calibration": cal, "net_benefit": nb, "thresholds": rows}
    return section, curves


def evaluate(
    models: Mapping[str, np.ndarray],
    labels,
    X=None,
    feature_names: Sequence[str] | None = None,
    primary: str | None = None,
    cuts: Mapping[str, Sequence[float]] | None = None,
    config: dict | None = None,
    **kw,
) -> tuple[dict, dict]:
    """Evaluate several score vectors on the same rows.

    Subgroups are reported for ``primary`` at its 0.80-sensitivity threshold
    when ``X`` and ``feature_names`` are given.
    """
    labels = np.asarray(labels).astype(int)
    report = {
        "n_rows": int(len(labels)),
        "n_positive": int(labels.sum()),
        "prevalence": float(labels.mean()) if len(labels) else math.nan,
        "decision_rule": "flag iff score >= threshold",
        "ece_bins": kw.get("n_bins", DEFAULT_BINS),
        "bootstrap": {"n_boot": kw.get("n_boot", 1000), "alpha": 0.05, "seed": kw.get("seed", 0), "unit": "window"},
        "config": config or {},
        "models": {},
    }
    curves = {}
    for name, probs in models.items():
        report["models"][name], curves[name] = evaluate_scores(probs, labels, **kw)
    if primary is not None and X is not None and feature_names is not None:
        rows = curves[primary]["thresholds"]
        t80 = next((r.threshold for r in rows if r.policy == "target_sens(0.8)"), rows[0].threshold)
        sg = subgroup_report(X, models[primary], labels, t80, default_subgroups(feature_names, cuts))
        report["subgroups"] = {"model": primary, "threshold": t80, "rows": [r.__dict__ for r in sg]}
    return _clean(report), curves


def write_report(directory: str | Path, report: dict, curves: dict) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    written = []
    p = d / "report.json"
    p.write_text(json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n")
    written.append(p)

    p = d / "roc.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "fpr", "tpr", "threshold"])
        for name, c in curves.items():
            for fpr, tpr, thr in c["roc"].rows():
                w.writerow([name, repr(fpr), repr(tpr), "inf" if math.isinf(thr) else repr(thr)])
    written.append(p)

    p = d / "calibration_bins.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "bin_lo", "bin_hi", "mean_pred", "event_rate", "count"])
        for name, c in curves.items():
            cal = c["calibration"]
            for k in range(len(cal.bin_count)):
                w.writerow([name, _fmt(cal.bin_edges[k]), _fmt(cal.bin_edges[k + 1]), _fmt(cal.bin_mean_pred[k]), _fmt(cal.bin_event_rate[k]), int(cal.bin_count[k])])
    written.append(p)

    p = d / "net_benefit.csv"
    names = list(curves)
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", *[f"nb_{n}" for n in names], "nb_treat_all", "nb_treat_none"])
        first = curves[names[0]]["net_benefit"] if names else None
        if first is not None:
            for k, t in enumerate(first.threshold):
                w.writerow([repr(float(t)), *[repr(float(curves[n]["net_benefit"].nb_model[k])) for n in names], repr(float(first.nb_treat_all[k])), "0.0"])
    written.append(p)

    p = d / "thresholds.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "policy", "threshold", "sens", "spec", "ppv", "npv", "tp", "fp", "tn", "fn"])
        for name, c in curves.items():
            for r in c["thresholds"]:
                w.writerow([name, r.policy, _fmt(r.threshold), _fmt(r.sens), _fmt(r.spec), _fmt(r.ppv), _fmt(r.npv), r.tp, r.fp, r.tn, r.fn])
    written.append(p)

    p = d / "subgroups.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subgroup", "auroc", "sens", "spec", "pos", "total"])
        for r in report.get("subgroups", {}).get("rows", []):
            w.writerow([r["subgroup"], _fmt(r["auroc"]), _fmt(r["sens"]), _fmt(r["spec"]), r["pos"], r["total"]])
    written.append(p)
    return written
