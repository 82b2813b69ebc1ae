"""Command-line entry point: synth, build, train, eval, explain.

Every command takes ``--config`` (JSON), ``--out`` and ``--seed``; flags
override the file and the file overrides built-in defaults. Each run writes
its outputs plus a ``manifest.json`` echoing the resolved configuration.

Exit codes: 0 ok, 2 configuration error, 3 missing or invalid input
artifact, 4 internal invariant breach.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cohort import CohortError, label_alignment_stats, write_windows
from .explain import ModelIntegrityError, global_importance, tree_shap, write_importance, write_shap_long
from .features import FEATURE_NAMES, FeatureError, FeatureMatrix, write_schema
from .ingest import FUSION_MODES, IngestError, read_cohort, write_rejections
from .learn import (
    GbtConfig,
    LogisticBaseline,
    ModelError,
    calibrate,
    fit_isotonic,
    load_artifact,
    save_artifact,
    train_baseline,
    train_gbt,
)
from .metrics import MetricError, evaluate, write_report
from .pipeline import InvariantError, build_dataset
from .synth import SynthConfig, SynthError, generate_cohort, write_cohort

log = logging.getLogger("vasoinit")

EXIT_OK, EXIT_CONFIG, EXIT_INPUT, EXIT_INVARIANT = 0, 2, 3, 4

DEFAULTS = {
    "format": "csv",
    "mode": "mix",
    "split_seed": 42,
    "merge_gap": 900,
    "gbt": {},
    "synth": {"seed": 0},
    "bootstrap_seed": 0,
    "n_boot": 1000,
    "targets": [0.70, 0.75, 0.80, 0.85, 0.90],
    "band": [0.75, 0.85],
    "eval_split": "test",
    "explain": {"split": "test", "max_rows": 1000, "seed": 0, "top_k": 10},
    "paths": {"cohort": None, "build": None, "model": None},
}


class ConfigError(Exception):
    pass


class InputError(Exception):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULTS)
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} not found")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return _merge(DEFAULTS, doc)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, cfg: dict, extra: dict, files=()) -> None:
    doc = {
        "command": command,
        "version": __version__,
        "config": cfg,
        **extra,
        "files": {Path(f).name: _sha256(Path(f)) for f in sorted(files, key=lambda f: Path(f).name)},
    }
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _require_dir(cfg: dict, key: str, flag: str) -> Path:
    p = cfg["paths"].get(key)
    if not p:
        raise ConfigError(f"no {key} directory given (use {flag} or paths.{key} in the config)")
    p = Path(p)
    if not p.is_dir():
        raise InputError(f"{key} directory {p} does not exist")
    return p


def _load_features(build_dir: Path) -> FeatureMatrix:
    path = build_dir / "features.npz"
    if not path.exists():
        raise InputError(f"missing feature matrix {path}")
    return FeatureMatrix.load(path)


def _load_model(model_dir: Path):
    path = model_dir / "model.json"
    if not path.exists():
        raise InputError(f"missing model artifact {path}")
    return load_artifact(path)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg: dict, out: Path) -> int:
    try:
        scfg = SynthConfig.from_dict(cfg["synth"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"synth config: {exc}") from None
    cohort = generate_cohort(scfg)
    paths = write_cohort(out, cohort, cfg["format"])
    extra = {
        "n_patients": len(cohort.patients),
        "n_stays": len(cohort.stays),
        "n_windows": cohort.n_windows,
        "prevalence": cohort.prevalence,
        "decline_hazard": cohort.decline_hazard,
        "attempts": cohort.attempts,
        "synth_config": scfg.to_dict(),
    }
    write_manifest(out, "synth", cfg, extra, paths.values())
    log.info("synth: %d patients, %d windows, prevalence %.5f", len(cohort.patients), cohort.n_windows, cohort.prevalence)
    return EXIT_OK


def cmd_build(cfg: dict, out: Path) -> int:
    if cfg["mode"] not in FUSION_MODES:
        raise ConfigError(f"mode must be one of {FUSION_MODES}")
    cohort_dir = _require_dir(cfg, "cohort", "--cohort")
    events = read_cohort(cohort_dir, cfg["format"])
    ds = build_dataset(events, mode=cfg["mode"], split_seed=int(cfg["split_seed"]), merge_gap=int(cfg["merge_gap"]))
    fm = ds.features
    files = [out / "features.npz", out / "windows.csv", out / "schema.json", out / "rejections.jsonl"]
    fm.save(files[0])
    write_windows(files[1], ds.windows)
    write_schema(files[2])
    write_rejections(files[3], events.rejections)
    extra = ds.summary()
    extra["rejections"] = {t: len(r) for t, r in events.rejections.items()}
    extra["warnings"] = {t: dict(w) for t, w in events.warnings.items() if w}
    extra["schema_hash"] = fm.schema_hash
    extra["invasive_conflicts"] = int(sum(s.n_invasive_conflicts for s in ds.series.values()))
    try:
        la = label_alignment_stats(ds.windows, ds.series, ds.episodes)
        la.pop("values")
        extra["label_alignment"] = la
    except CohortError:
        extra["label_alignment"] = None
    if len(fm) and fm.y.sum() != sum(w.label for w in ds.windows):
        raise InvariantError("feature labels disagree with window labels")
    write_manifest(out, "build", cfg, extra, files)
    log.info("build: %d windows, %d positive", len(fm), int(fm.y.sum()))
    return EXIT_OK


def cmd_train(cfg: dict, out: Path) -> int:
    try:
        gcfg = GbtConfig.from_dict(cfg["gbt"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"gbt config: {exc}") from None
    fm = _load_features(_require_dir(cfg, "build", "--build"))
    tr, va = fm.split == "train", fm.split == "valid"
    model, tlog = train_gbt(fm.X[tr], fm.y[tr], fm.X[va], fm.y[va], gcfg, fm.schema_hash, fm.feature_names)
    iso = fit_isotonic(model.predict(fm.X[va]), fm.y[va])
    last = fm.column("last")
    baseline = train_baseline(last[tr], fm.y[tr])
    files = [out / "model.json", out / "training_log.csv"]
    save_artifact(files[0], model, iso, {"baseline": baseline.to_dict()})
    tlog.write_csv(files[1])
    extra = {
        "n_train": int(tr.sum()),
        "n_valid": int(va.sum()),
        "n_rounds": tlog.n_rounds,
        "best_round": tlog.best_round,
        "stopped_early": tlog.stopped_early,
        "base_score": tlog.base_score,
        "best_valid_logloss": tlog.valid_loss[tlog.best_round] if tlog.best_round >= 0 else None,
        "gbt_config": gcfg.__dict__,
        "baseline": baseline.to_dict(),
        "schema_hash": fm.schema_hash,
    }
    write_manifest(out, "train", cfg, extra, files)
    log.info("train: %d rounds, best %d", tlog.n_rounds, tlog.best_round)
    return EXIT_OK


def cmd_eval(cfg: dict, out: Path) -> int:
    build_dir = _require_dir(cfg, "build", "--build")
    fm = _load_features(build_dir)
    model, iso, extra = _load_model(_require_dir(cfg, "model", "--model"))
    model.check_schema(fm.schema_hash)
    if "baseline" not in extra:
        raise InputError("model artifact lacks the baseline fit")
    baseline = LogisticBaseline.from_dict(extra["baseline"])
    sel = fm.split == cfg["eval_split"]
    if not sel.any():
        raise InputError(f"no rows in split {cfg['eval_split']!r}")
    X, y = fm.X[sel], fm.y[sel]
    raw = model.predict(X, fm.schema_hash)
    scores = {"gbt": calibrate(iso, raw) if iso is not None else raw, "gbt_uncalibrated": raw}
    scores["baseline"] = baseline.predict(fm.column("last")[sel])
    cuts = None
    manifest_path = build_dir / "manifest.json"
    if manifest_path.exists():
        cuts = json.loads(manifest_path.read_text()).get("quartile_cuts")
    report, curves = evaluate(
        scores,
        y,
        X=X,
        feature_names=fm.feature_names,
        primary="gbt",
        cuts=cuts,
        config=cfg,
        targets=tuple(cfg["targets"]),
        band=tuple(cfg["band"]),
        n_boot=int(cfg["n_boot"]),
        seed=int(cfg["bootstrap_seed"]),
    )
    files = write_report(out, report, curves)
    summary = {m: {"auroc": r["auroc"]["point"], "ece": r["calibration"]["ece"]} for m, r in report["models"].items()}
    write_manifest(out, "eval", cfg, {"summary": summary, "n_rows": int(sel.sum())}, files)
    for m, s in summary.items():
        log.info("eval: %s AUROC %.4f ECE %.3g", m, s["auroc"], s["ece"])
    return EXIT_OK


def cmd_explain(cfg: dict, out: Path) -> int:
    ecfg = cfg["explain"]
    fm = _load_features(_require_dir(cfg, "build", "--build"))
    model, _, _ = _load_model(_require_dir(cfg, "model", "--model"))
    rows = np.flatnonzero(fm.split == ecfg["split"]) if ecfg.get("split") else np.arange(len(fm))
    if len(rows) == 0:
        raise InputError(f"no rows in split {ecfg.get('split')!r}")
    max_rows = ecfg.get("max_rows")
    if max_rows and len(rows) > max_rows:
        rng = np.random.default_rng(int(ecfg.get("seed", 0)))
        rows = np.sort(rng.choice(rows, size=int(max_rows), replace=False))
    X = fm.X[rows]
    attr = tree_shap(model, X, fm.schema_hash)
    gap = float(np.max(np.abs(attr.base + attr.shap.sum(axis=1) - attr.raw)))
    if gap > 1e-6:
        raise InvariantError(f"SHAP local accuracy violated by {gap:.3g}")
    imp = global_importance(attr.shap, fm.feature_names)
    top_k = int(ecfg.get("top_k", 10))
    files = [out / "shap_values.csv", out / "shap_summary.csv", out / f"shap_top{top_k}.csv"]
    write_shap_long(files[0], attr, X, fm.feature_names, row_ids=rows.tolist())
    write_importance(files[1], imp)
    write_importance(files[2], imp, top=top_k)
    extra = {
        "n_rows": int(len(rows)),
        "base_value": attr.base,
        "base_probability": float(1 / (1 + np.exp(-attr.base))),
        "mean_probability_check": float(np.mean(attr.probability())),
        "max_local_accuracy_gap": gap,
        "top": [{"feature": f, "mean_abs_shap": v} for f, v in imp.top(top_k)],
        "units": "log-odds (uncalibrated margin)",
    }
    write_manifest(out, "explain", cfg, extra, files)
    return EXIT_OK


COMMANDS = {
    "synth": (cmd_synth, "simulate a cohort and write ingest-format tables"),
    "build": (cmd_build, "ingest, window, label, split and extract features"),
    "train": (cmd_train, "fit the boosted trees, isotonic map and last-MAP baseline"),
    "eval": (cmd_eval, "evaluate on a split and write the report files"),
    "explain": (cmd_explain, "export SHAP values and the global ranking"),
}

# which --seed each command consumes
SEED_KEYS = {
    "synth": ("synth", "seed"),
    "build": (None, "split_seed"),
    "train": ("gbt", "seed"),
    "eval": (None, "bootstrap_seed"),
    "explain": ("explain", "seed"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vasoinit", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", required=True, help="run directory")
        p.add_argument("--seed", type=int, help="seed for this command's randomness")
        if name == "build":
            p.add_argument("--cohort", help="directory with the cohort tables")
            p.add_argument("--mode", choices=FUSION_MODES)
        if name in ("train", "eval", "explain"):
            p.add_argument("--build", help="build run directory (features.npz)")
        if name in ("eval", "explain"):
            p.add_argument("--model", help="train run directory (model.json)")
        if name == "synth":
            p.add_argument("--n-patients", type=int)
            p.add_argument("--prevalence", type=float, help="target window prevalence")
        if name == "eval":
            p.add_argument("--n-boot", type=int)
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = load_config(args.config)
    if args.seed is not None:
        section, key = SEED_KEYS[args.command]
        (cfg[section] if section else cfg)[key] = args.seed
    for flag, key in (("cohort", "cohort"), ("build", "build"), ("model", "model")):
        v = getattr(args, flag, None)
        if v is not None:
            cfg["paths"][key] = v
    if getattr(args, "mode", None):
        cfg["mode"] = args.mode
    if getattr(args, "n_patients", None) is not None:
        cfg["synth"]["n_patients"] = args.n_patients
    if getattr(args, "prevalence", None) is not None:
        cfg["synth"]["target_prevalence"] = args.prevalence
    if getattr(args, "n_boot", None) is not None:
        cfg["n_boot"] = args.n_boot
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        fn = COMMANDS[args.command][0]
        return fn(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, IngestError, FeatureError, ModelError, ModelIntegrityError, FileNotFoundError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InvariantError as exc:
        print(f"invariant breach: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (CohortError, SynthError, MetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
