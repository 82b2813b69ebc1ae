"""Synthetic ICU cohorts with a planted MAP-decline -> catecholamine mechanism.

Each stay carries a latent MAP trajectory: a mean-reverting process around a
patient baseline, simulated on a 5 minute grid. Deterioration events pull the
mean down over one to three hours; most of them end in a vasoactive start.
Fluids and blood products are charted more often while MAP falls, sedation
raises the deterioration hazard, and a share of initiations happens with no
preceding decline at all, so neither the last MAP value nor any single
feature explains every onset.

The output is a set of records in the ingest schemas, so writing them with
``write_cohort`` gives files that ``ingest.read_cohort`` reads back unchanged.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .cohort import DEFAULT_MERGE_GAP, group_episodes, label_window_arrays, window_starts
from .features import TREATMENT_CATEGORIES
from .ingest import (
    COMORBIDITIES,
    DRUGS,
    ETHNICITIES,
    MAP_MAX,
    MAP_MIN,
    AdministrationRecord,
    ConcomitantEvent,
    MapReading,
    PatientStatic,
    Stay,
    fuse_map,
    write_table,
)

HOUR = 3600
MINUTE = 60
GRID = 5 * MINUTE
EPOCH_2150 = 5680281600  # 2150-01-01, shifted-date style

# share of positive stays per drug; normalised when sampling
DRUG_WEIGHTS = {
    "phenylephrine": 68.3,
    "norepinephrine": 45.1,
    "epinephrine": 10.4,
    "vasopressin": 14.1,
    "dopamine": 12.8,
    "dobutamine": 2.9,
    "milrinone": 6.3,
}

COMORBIDITY_RATES = {
    "hypertension": 0.58,
    "diabetes": 0.27,
    "kidney_disease": 0.20,
    "lung_disease": 0.18,
    "heart_disease": 0.28,
    "drug_abuse": 0.06,
    "depression": 0.12,
}

# events per hour for a patient of average acuity
MED_RATES = {
    "sedatives": 0.04,
    "blood_products": 0.008,
    "antibiotics": 0.04,
    "anticoag_antiplt": 0.03,
    "neuromuscular_blockers": 0.002,
    "analgesics": 0.05,
    "crystalloids": 0.12,
    "electrolytes": 0.05,
    "gi_protection": 0.03,
    "parenteral_nutrition": 0.005,
    "antiarrhythmics": 0.01,
}

# multipliers while MAP is falling (resuscitation before vasoactives)
DECLINE_MED_BOOST = {"crystalloids": 8.0, "blood_products": 10.0, "electrolytes": 4.0}


class SynthError(Exception):
    pass


@dataclass(frozen=True)
class SynthConfig:
    seed: int
    n_patients: int = 2000
    extra_stays_mean: float = 0.3
    stay_hours_median: float = 20.0
    stay_hours_iqr: tuple[float, float] = (12.0, 34.0)
    chart_minutes: tuple[float, float] = (45.0, 75.0)
    decline_chart_minutes: tuple[float, float] = (12.0, 25.0)
    map_mean: float = 78.0
    map_sd: float = 9.0
    map_volatility: float = 6.0  # mmHg per sqrt(hour)
    map_reversion: float = 1.5  # per hour
    measurement_sd: float = 2.5
    decline_hazard: float | None = None  # per hour; None -> calibrated to target_prevalence
    decline_hours: tuple[float, float] = (1.0, 3.0)
    decline_drop: tuple[float, float] = (12.0, 32.0)
    initiation_prob: float = 0.75
    spontaneous_fraction: float = 0.3
    sedation_hazard_ratio: float = 3.0
    target_prevalence: float = 0.0020
    prevalence_tolerance: float = 0.25
    max_attempts: int = 6
    invasive_fraction: float = 0.6
    dual_line_prob: float = 0.1
    cuff_in_invasive_prob: float = 0.15
    pre_icu_prob: float = 0.05
    med_rates: dict = field(default_factory=lambda: dict(MED_RATES))

    def __post_init__(self):
        if self.seed is None:
            raise ValueError("seed is mandatory")
        if self.n_patients < 0:
            raise ValueError("n_patients must be >= 0")
        probs = (
            "initiation_prob",
            "spontaneous_fraction",
            "target_prevalence",
            "invasive_fraction",
            "dual_line_prob",
            "cuff_in_invasive_prob",
            "pre_icu_prob",
        )
        for name in probs:
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.decline_hazard is not None and self.decline_hazard < 0:
            raise ValueError("decline_hazard must be >= 0")
        for name in ("stay_hours_iqr", "chart_minutes", "decline_chart_minutes", "decline_hours", "decline_drop"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"{name} must be an increasing positive pair")
        unknown = set(self.med_rates) - set(TREATMENT_CATEGORIES)
        if unknown:
            raise ValueError(f"unknown medication categories {sorted(unknown)}")
        if any(r < 0 for r in self.med_rates.values()):
            raise ValueError("medication rates must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synth config keys: {sorted(unknown)}")
        d = dict(d)
        for k, v in d.items():
            if isinstance(v, list):
                d[k] = tuple(v)
        if "med_rates" in d:
            d["med_rates"] = {**MED_RATES, **d["med_rates"]}
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


@dataclass
class SynthCohort:
    patients: list[PatientStatic]
    stays: list[Stay]
    map_readings: list[MapReading]
    admins: list[AdministrationRecord]
    meds: list[ConcomitantEvent]
    decline_hazard: float = 0.0
    prevalence: float = 0.0
    n_windows: int = 0
    attempts: int = 0


def _category_labels() -> dict[str, list[str]]:
    text = resources.files("vasoinit").joinpath("data/medication_categories.tsv").read_text(encoding="utf-8")
    out: dict[str, list[str]] = {c: [] for c in TREATMENT_CATEGORIES}
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        label, cat = line.split("\t")
        out[cat.strip()].append(label.strip())
    return out


def _lognormal_from_iqr(rng, median, iqr):
    sigma = math.log(iqr[1] / iqr[0]) / 1.349
    return median * math.exp(sigma * rng.standard_normal())


def _patient(rng: np.random.Generator, pid: str) -> tuple[PatientStatic, float]:
    """Static record plus a latent acuity multiplier."""
    gender = "male" if rng.random() < 0.44 else "female"
    age = int(np.clip(round(rng.normal(64, 17)), 18, 95))
    eth_w = np.array([72.8, 10.6, 4.0, 2.6, 9.9])
    ethnicity = ETHNICITIES[int(rng.choice(len(ETHNICITIES), p=eth_w / eth_w.sum()))]
    height = rng.normal(176, 8) if gender == "male" else rng.normal(163, 7)
    bmi = 27.0 * math.exp(0.2 * rng.standard_normal())
    weight = bmi * (height / 100) ** 2
    height_v = None if rng.random() < 0.08 else round(height, 1)
    weight_v = None if rng.random() < 0.04 else round(weight, 1)
    flags = set()
    if bmi >= 30 and rng.random() < 0.8:
        flags.add("obesity")
    for name, rate in COMORBIDITY_RATES.items():
        r = rate * (1.3 if age >= 70 and name in ("hypertension", "heart_disease", "kidney_disease") else 1.0)
        if rng.random() < r:
            flags.add(name)
    assert flags <= set(COMORBIDITIES)
    acuity = math.exp(0.5 * rng.standard_normal())
    if "heart_disease" in flags:
        acuity *= 1.5
    if age >= 70:
        acuity *= 1.2
    p = PatientStatic(pid, gender, age, ethnicity, height_v, weight_v, frozenset(flags))
    return p, acuity


def _poisson_times(rng, rate_per_hour: np.ndarray, t0: int) -> list[int]:
    """Event times from a piecewise-constant rate on the 5 minute grid."""
    p = 1.0 - np.exp(-rate_per_hour * GRID / HOUR)
    hits = np.flatnonzero(rng.random(len(p)) < p)
    offs = rng.integers(0, GRID // MINUTE, size=len(hits)) * MINUTE
    return [int(t0 + k * GRID + o) for k, o in zip(hits, offs)]


def _simulate_stay(rng, cfg: SynthConfig, stay: Stay, acuity: float, baseline: float, hazard: float, spont: float, labels):
    """MAP readings, administrations and medication events of one stay."""
    n = (stay.discharge - stay.admit) // GRID + 1
    t_grid = stay.admit + GRID * np.arange(n, dtype=np.int64)
    dt_h = GRID / HOUR

    # sedation raises the deterioration hazard for two hours after each dose
    sed_rate = np.full(n, cfg.med_rates.get("sedatives", 0.0) * acuity)
    sed_times = _poisson_times(rng, sed_rate, stay.admit)
    sedated = np.zeros(n, dtype=bool)
    for t in sed_times:
        k = (t - stay.admit) // GRID
        sedated[k : k + 2 * HOUR // GRID + 1] = True

    offset = np.zeros(n)  # mean shift from deterioration
    declining = np.zeros(n, dtype=bool)
    onsets: list[int] = []
    k = 0
    # patients arriving on vasoactives only exist when the mechanism is on
    pre_icu = (hazard > 0 or spont > 0) and rng.random() < cfg.pre_icu_prob
    if pre_icu:
        onsets.append(stay.admit)
        k = int(rng.uniform(4, 10) * HOUR // GRID)
    while k < n:
        h = hazard * acuity * (cfg.sedation_hazard_ratio if sedated[k] else 1.0)
        if h > 0 and rng.random() < 1.0 - math.exp(-h * dt_h):
            dur = int(rng.uniform(*cfg.decline_hours) * HOUR // GRID)
            drop = rng.uniform(*cfg.decline_drop)
            end = min(k + dur, n)
            offset[k:end] = -drop * np.arange(1, end - k + 1) / dur
            declining[k:end] = True
            if rng.random() < cfg.initiation_prob and k + dur < n:
                onset_k = k + dur
                onsets.append(int(t_grid[onset_k] + rng.integers(0, GRID // MINUTE) * MINUTE))
                hold = int(rng.uniform(4, 12) * HOUR // GRID)
            else:
                onset_k = k + dur
                hold = int(rng.uniform(1, 3) * HOUR // GRID)
            # recovery back to baseline over about an hour, then a refractory stretch
            rec = HOUR // GRID
            stop = min(onset_k + rec, n)
            if onset_k < n:
                offset[onset_k:stop] = -drop * (1.0 - np.arange(1, stop - onset_k + 1) / rec)
            k = onset_k + hold
            continue
        if spont > 0 and rng.random() < 1.0 - math.exp(-spont * acuity * dt_h):
            onsets.append(int(t_grid[k] + rng.integers(0, GRID // MINUTE) * MINUTE))
            k += int(rng.uniform(4, 12) * HOUR // GRID)
            continue
        k += 1

    # latent MAP: exact discretisation of the mean-reverting process
    a = math.exp(-cfg.map_reversion * dt_h)
    sd = cfg.map_volatility * math.sqrt((1 - a * a) / (2 * cfg.map_reversion))
    eps = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = baseline + offset[0] + rng.normal(0, 3)
    for i in range(1, n):
        mu = baseline + offset[i]
        x[i] = mu + a * (x[i - 1] - mu) + sd * eps[i]
    np.clip(x, MAP_MIN + 5, MAP_MAX - 10, out=x)

    # charting: denser while MAP falls and right after an onset
    dense = declining.copy()
    for t in onsets:
        k0 = (t - stay.admit) // GRID
        dense[k0 : k0 + 30 * MINUTE // GRID] = True
    chart = []
    t = stay.admit + int(rng.integers(0, 20)) * MINUTE
    while t <= stay.discharge:
        chart.append(t)
        k = min((t - stay.admit) // GRID, n - 1)
        lo, hi = cfg.decline_chart_minutes if dense[k] else cfg.chart_minutes
        t += int(rng.uniform(lo, hi)) * MINUTE
    invasive = rng.random() < cfg.invasive_fraction
    readings = []
    for t in chart:
        latent = float(np.interp(t, t_grid, x))

        def measure(bias=0.0):
            while True:
                v = round(latent + bias + rng.normal(0, cfg.measurement_sd))
                if MAP_MIN <= v <= MAP_MAX:
                    return float(v)

        if invasive:
            readings.append(MapReading(stay.stay_id, t, measure(), "invasive_a"))
            if rng.random() < cfg.dual_line_prob:
                readings.append(MapReading(stay.stay_id, t, measure(), "invasive_b"))
            if rng.random() < cfg.cuff_in_invasive_prob:
                readings.append(MapReading(stay.stay_id, t, measure(3.0), "noninvasive"))
        else:
            readings.append(MapReading(stay.stay_id, t, measure(), "noninvasive"))

    admins = []
    drug_w = np.array([DRUG_WEIGHTS[d] for d in DRUGS])
    drug_w = drug_w / drug_w.sum()
    for t0 in onsets:
        drug = DRUGS[int(rng.choice(len(DRUGS), p=drug_w))]
        total = int(rng.uniform(2, 10) * HOUR)
        # rate changes are back-to-back records of one infusion
        n_parts = int(rng.integers(1, 4))
        cuts = np.sort(rng.integers(1, total // MINUTE, size=n_parts - 1)) * MINUTE
        bounds = [0, *cuts.tolist(), total]
        for s, e in zip(bounds[:-1], bounds[1:]):
            if e > s:
                admins.append(AdministrationRecord(stay.stay_id, drug, t0 + s, min(t0 + e, stay.discharge), round(rng.uniform(0.02, 0.5), 3)))
        if rng.random() < 0.2:
            second = DRUGS[int(rng.choice(len(DRUGS), p=drug_w))]
            if second != drug:
                admins.append(AdministrationRecord(stay.stay_id, second, t0, min(t0 + total, stay.discharge), round(rng.uniform(0.02, 0.5), 3)))
    admins = [a for a in admins if a.end > a.start]

    meds = [ConcomitantEvent(stay.stay_id, t, str(rng.choice(labels["sedatives"]))) for t in sed_times] if labels["sedatives"] else []
    for cat in TREATMENT_CATEGORIES:
        if cat == "sedatives" or not labels[cat]:
            continue
        rate = np.full(n, cfg.med_rates.get(cat, 0.0) * acuity)
        boost = DECLINE_MED_BOOST.get(cat)
        if boost:
            rate[declining] *= boost
        for t in _poisson_times(rng, rate, stay.admit):
            meds.append(ConcomitantEvent(stay.stay_id, t, str(rng.choice(labels[cat]))))
    meds = [m for m in meds if m.time <= stay.discharge]
    meds.sort(key=lambda m: (m.time, m.medication_label))
    return readings, admins, meds


def _window_counts(stay: Stay, readings, admins) -> tuple[int, int]:
    starts = window_starts(stay.admit, stay.discharge)
    if len(starts) == 0:
        return 0, 0
    series = fuse_map(readings, "mix", stay.stay_id)
    onsets = np.sort(np.array([e.onset for e in group_episodes(admins, DEFAULT_MERGE_GAP)], dtype=np.int64))
    keep, label, _, _ = label_window_arrays(starts, series, onsets)
    return int(keep.sum()), int((keep & label).sum())


def _simulate(cfg: SynthConfig, hazard: float, spont: float) -> SynthCohort:
    labels = _category_labels()
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_patients)
    width = max(4, len(str(cfg.n_patients)))
    patients, stays, readings, admins, meds = [], [], [], [], []
    n_win = n_pos = 0
    for i, ss in enumerate(children):
        rng = np.random.default_rng(ss)
        pid = f"P{i:0{width}d}"
        p, acuity = _patient(rng, pid)
        patients.append(p)
        baseline = rng.normal(cfg.map_mean, cfg.map_sd)
        n_stays = 1 + int(rng.poisson(cfg.extra_stays_mean))
        t = EPOCH_2150 + int(rng.integers(0, 3650)) * 86400 + int(rng.integers(0, 1440)) * MINUTE
        for j in range(n_stays):
            los = max(3.0, _lognormal_from_iqr(rng, cfg.stay_hours_median, cfg.stay_hours_iqr))
            stay = Stay(f"{pid}-S{j + 1}", pid, t, t + int(los * HOUR) // MINUTE * MINUTE)
            r, a, m = _simulate_stay(rng, cfg, stay, acuity, baseline, hazard, spont, labels)
            stays.append(stay)
            readings += r
            admins += a
            meds += m
            w, pos = _window_counts(stay, r, a)
            n_win += w
            n_pos += pos
            t = stay.discharge + int(rng.uniform(2, 200) * 86400) // MINUTE * MINUTE
    prev = n_pos / n_win if n_win else 0.0
    return SynthCohort(patients, stays, readings, admins, meds, hazard, prev, n_win)


def generate_cohort(cfg: SynthConfig) -> SynthCohort:
    """Simulate a cohort; deterministic under ``cfg.seed``.

    With ``decline_hazard=None`` the hazard is tuned so the window prevalence
    lands within ``prevalence_tolerance`` (relative) of the target. Failing
    that after ``max_attempts`` raises ``SynthError`` with the prevalence
    reached.
    """
    if cfg.decline_hazard is not None:
        h = cfg.decline_hazard
        spont = h * cfg.initiation_prob * cfg.spontaneous_fraction / max(1e-12, 1 - cfg.spontaneous_fraction)
        out = _simulate(cfg, h, spont)
        out.attempts = 1
        return out
    if cfg.target_prevalence == 0:
        out = _simulate(cfg, 0.0, 0.0)
        out.attempts = 1
        return out

    # one onset per 15 min window at rate p -> 4p onsets per hour
    onset_rate = 4.0 * cfg.target_prevalence
    scale = 1.0
    out = None
    for attempt in range(1, cfg.max_attempts + 1):
        h = scale * onset_rate * (1 - cfg.spontaneous_fraction) / max(cfg.initiation_prob, 1e-12)
        spont = scale * onset_rate * cfg.spontaneous_fraction
        out = _simulate(cfg, h, spont)
        out.attempts = attempt
        if out.n_windows == 0:
            raise SynthError("cohort produced no windows")
        rel = out.prevalence / cfg.target_prevalence - 1.0
        if abs(rel) <= cfg.prevalence_tolerance:
            return out
        if out.prevalence == 0:
            scale *= 4.0
        else:
            scale *= cfg.target_prevalence / out.prevalence
    raise SynthError(
        f"prevalence target {cfg.target_prevalence:.4g} not reached after {cfg.max_attempts} attempts "
        f"(achieved {out.prevalence:.4g})"
    )


def write_cohort(directory: str | Path, cohort: SynthCohort, fmt: str = "csv") -> dict[str, Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    ext = "csv" if fmt == "csv" else "jsonl"
    tables = {
        "patients": cohort.patients,
        "stays": cohort.stays,
        "map_readings": sorted(cohort.map_readings, key=lambda r: (r.stay_id, r.time, r.source)),
        "vasoactive_admins": sorted(cohort.admins, key=lambda a: (a.stay_id, a.start, a.drug, a.end)),
        "concomitant_meds": sorted(cohort.meds, key=lambda m: (m.stay_id, m.time, m.medication_label)),
    }
    paths = {}
    for name, records in tables.items():
        p = d / f"{name}.{ext}"
        write_table(p, name, records, fmt)
        paths[name] = p
    return paths
