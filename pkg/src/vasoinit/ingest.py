"""Raw event tables: parsing, validation and MAP source fusion.

Five tables make up a cohort directory (``patients``, ``stays``,
``map_readings``, ``vasoactive_admins``, ``concomitant_meds``), each as CSV
with a header row or as JSONL with one object per line. Rows that fail
validation are never silently dropped; they land in a rejection log of
``{line_no, reason}`` entries.

Timestamps are integer seconds since 1970-01-01 (naive, treated as UTC).
"""
from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import IO, Iterable, Iterator

import numpy as np

MAP_MIN = 30.0
MAP_MAX = 200.0

GENDERS = ("male", "female")
ETHNICITIES = ("white", "black", "hispanic", "asian", "other")
COMORBIDITIES = (
    "obesity",
    "hypertension",
    "diabetes",
    "kidney_disease",
    "lung_disease",
    "heart_disease",
    "drug_abuse",
    "depression",
)
DRUGS = (
    "phenylephrine",
    "norepinephrine",
    "epinephrine",
    "vasopressin",
    "dopamine",
    "dobutamine",
    "milrinone",
)
MAP_SOURCES = ("invasive_a", "invasive_b", "noninvasive")
INVASIVE_SOURCES = frozenset({"invasive_a", "invasive_b"})
FUSION_MODES = ("mix", "invasive_only", "noninvasive_only")

TABLES = {
    "patients": ("patient_id", "gender", "age", "ethnicity", "height_cm", "weight_kg") + COMORBIDITIES,
    "stays": ("stay_id", "patient_id", "admit", "discharge"),
    "map_readings": ("stay_id", "time", "value_mmhg", "source"),
    "vasoactive_admins": ("stay_id", "drug", "start", "end", "rate"),
    "concomitant_meds": ("stay_id", "time", "medication_label"),
}

_EPOCH = datetime(1970, 1, 1)


class IngestError(Exception):
    """Fatal ingestion failure (bad encoding, malformed header, unknown table)."""


class RowError(ValueError):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def parse_time(text: str) -> int:
    """ISO-8601 timestamp to whole seconds; sub-second parts are truncated."""
    dt = datetime.fromisoformat(text.strip())
    if dt.tzinfo is not None:
        dt = dt.astimezone(timezone.utc).replace(tzinfo=None)
    delta = dt - _EPOCH
    return delta.days * 86400 + delta.seconds


def format_time(seconds: int) -> str:
    days, rem = divmod(int(seconds), 86400)
    return (_EPOCH + timedelta(days=days, seconds=rem)).isoformat(timespec="seconds")


@dataclass(frozen=True)
class PatientStatic:
    patient_id: str
    gender: str
    age: int
    ethnicity: str
    height: float | None = None
    weight: float | None = None
    comorbidities: frozenset[str] = frozenset()

    @property
    def bmi(self) -> float | None:
        if self.height is None or self.weight is None:
            return None
        return self.weight / (self.height / 100.0) ** 2


@dataclass(frozen=True)
class Stay:
    stay_id: str
    patient_id: str
    admit: int
    discharge: int


@dataclass(frozen=True)
class MapReading:
    stay_id: str
    time: int
    value: float
    source: str


@dataclass(frozen=True)
class AdministrationRecord:
    stay_id: str
    drug: str
    start: int
    end: int
    rate: float | None = None


@dataclass(frozen=True)
class ConcomitantEvent:
    stay_id: str
    time: int
    medication_label: str


@dataclass(frozen=True)
class Rejection:
    line_no: int
    reason: str


@dataclass
class ParseResult:
    table: str
    records: list = field(default_factory=list)
    rejections: list[Rejection] = field(default_factory=list)
    warnings: Counter = field(default_factory=Counter)
    n_rows: int = 0


@dataclass
class CohortEvents:
    patients: list[PatientStatic]
    stays: list[Stay]
    map_readings: list[MapReading]
    admins: list[AdministrationRecord]
    meds: list[ConcomitantEvent]
    rejections: dict[str, list[Rejection]] = field(default_factory=dict)
    warnings: dict[str, Counter] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# row converters


def _req(row: dict, key: str) -> str:
    value = row.get(key)
    if value is None:
        raise RowError("missing_field")
    value = str(value).strip()
    if value == "":
        raise RowError("missing_field")
    return value


def _opt_float(row: dict, key: str) -> float | None:
    value = row.get(key)
    if value is None or str(value).strip() in ("", "nan", "NaN", "NA"):
        return None
    try:
        out = float(value)
    except ValueError:
        raise RowError("unparseable") from None
    if not math.isfinite(out):
        raise RowError("unparseable")
    return out


def _float(row: dict, key: str) -> float:
    out = _opt_float(row, key)
    if out is None:
        raise RowError("missing_field")
    return out


def _time(row: dict, key: str) -> int:
    try:
        return parse_time(_req(row, key))
    except ValueError:
        raise RowError("unparseable") from None


def _flag(row: dict, key: str) -> bool:
    value = str(row.get(key, "")).strip().lower()
    if value in ("1", "true", "yes"):
        return True
    if value in ("0", "false", "no", ""):
        return False
    raise RowError("invalid_value")


def _patient(row: dict, warnings: Counter) -> PatientStatic:
    gender = _req(row, "gender").lower()
    ethnicity = _req(row, "ethnicity").lower()
    if gender not in GENDERS or ethnicity not in ETHNICITIES:
        raise RowError("invalid_value")
    age_f = _float(row, "age")
    if age_f <= 0:
        raise RowError("out_of_range")
    height = _opt_float(row, "height_cm")
    weight = _opt_float(row, "weight_kg")
    # implausible biometrics become missing rather than costing the patient
    if height is not None and not 50.0 < height < 250.0:
        warnings["height_out_of_range"] += 1
        height = None
    if weight is not None and not 20.0 < weight < 400.0:
        warnings["weight_out_of_range"] += 1
        weight = None
    comorbid = frozenset(c for c in COMORBIDITIES if _flag(row, c))
    return PatientStatic(
        patient_id=_req(row, "patient_id"),
        gender=gender,
        age=int(age_f),
        ethnicity=ethnicity,
        height=height,
        weight=weight,
        comorbidities=comorbid,
    )


def _stay(row: dict, warnings: Counter) -> Stay:
    admit, discharge = _time(row, "admit"), _time(row, "discharge")
    if discharge <= admit:
        raise RowError("invalid_interval")
    return Stay(_req(row, "stay_id"), _req(row, "patient_id"), admit, discharge)


def _map_reading(row: dict, warnings: Counter) -> MapReading:
    source = _req(row, "source").lower()
    if source not in MAP_SOURCES:
        raise RowError("invalid_value")
    value = _float(row, "value_mmhg")
    if not MAP_MIN <= value <= MAP_MAX:
        raise RowError("out_of_range")
    return MapReading(_req(row, "stay_id"), _time(row, "time"), value, source)


def _admin(row: dict, warnings: Counter) -> AdministrationRecord:
    drug = _req(row, "drug").lower()
    if drug not in DRUGS:
        raise RowError("invalid_value")
    start, end = _time(row, "start"), _time(row, "end")
    if end <= start:
        raise RowError("invalid_interval")
    return AdministrationRecord(_req(row, "stay_id"), drug, start, end, _opt_float(row, "rate"))


def _med(row: dict, warnings: Counter) -> ConcomitantEvent:
    return ConcomitantEvent(_req(row, "stay_id"), _time(row, "time"), _req(row, "medication_label"))


_CONVERTERS = {
    "patients": _patient,
    "stays": _stay,
    "map_readings": _map_reading,
    "vasoactive_admins": _admin,
    "concomitant_meds": _med,
}


# ---------------------------------------------------------------------------
# parsing


def _decode(stream: IO[bytes] | bytes | str) -> str:
    if isinstance(stream, str):
        return stream
    raw = stream if isinstance(stream, bytes) else stream.read()
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise IngestError(f"input is not valid UTF-8: {exc}") from None


def _csv_rows(text: str, columns: tuple[str, ...]) -> Iterator[tuple[int, dict | None]]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError("missing header row") from None
    header = [h.strip() for h in header]
    if sorted(header) != sorted(columns):
        raise IngestError(f"malformed header: expected {list(columns)}, got {header}")
    for values in reader:
        if not values or all(not v.strip() for v in values):
            continue
        if len(values) != len(header):
            yield reader.line_num, None
            continue
        yield reader.line_num, dict(zip(header, values))


def _jsonl_rows(text: str) -> Iterator[tuple[int, dict | None]]:
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            yield line_no, None
            continue
        yield line_no, obj if isinstance(obj, dict) else None


def parse_events(stream: IO[bytes] | bytes | str, fmt: str, table: str) -> ParseResult:
    """Parse one event table from a CSV or JSONL byte stream.

    Every data row ends up either as exactly one record or as one rejection,
    so ``len(records) + len(rejections) == n_rows``. Duplicate MAP rows on
    ``(stay_id, time, source)`` keep the first occurrence.
    """
    if table not in TABLES:
        raise IngestError(f"unknown table {table!r}")
    if fmt not in ("csv", "jsonl"):
        raise IngestError(f"unknown format {fmt!r}")
    text = _decode(stream)
    columns = TABLES[table]
    convert = _CONVERTERS[table]
    result = ParseResult(table=table)
    rows = _csv_rows(text, columns) if fmt == "csv" else _jsonl_rows(text)
    seen: set[tuple] = set()
    for line_no, row in rows:
        result.n_rows += 1
        if row is None:
            result.rejections.append(Rejection(line_no, "unparseable"))
            continue
        try:
            record = convert(row, result.warnings)
        except RowError as err:
            result.rejections.append(Rejection(line_no, err.reason))
            continue
        if table == "map_readings":
            key = (record.stay_id, record.time, record.source)
            if key in seen:
                result.rejections.append(Rejection(line_no, "duplicate"))
                continue
            seen.add(key)
        result.records.append(record)
    return result


def read_cohort(directory: str | Path, fmt: str = "csv") -> CohortEvents:
    """Load all five tables from ``directory`` (``<table>.csv`` or ``.jsonl``)."""
    directory = Path(directory)
    parsed = {}
    for table in TABLES:
        path = directory / f"{table}.{fmt}"
        if not path.exists():
            raise IngestError(f"missing table file {path}")
        with open(path, "rb") as fh:
            parsed[table] = parse_events(fh, fmt, table)
    return CohortEvents(
        patients=parsed["patients"].records,
        stays=parsed["stays"].records,
        map_readings=parsed["map_readings"].records,
        admins=parsed["vasoactive_admins"].records,
        meds=parsed["concomitant_meds"].records,
        rejections={t: p.rejections for t, p in parsed.items()},
        warnings={t: p.warnings for t, p in parsed.items()},
    )


def write_rejections(path: str | Path, rejections: dict[str, list[Rejection]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for table, rows in rejections.items():
            for rej in rows:
                fh.write(json.dumps({"table": table, "line_no": rej.line_no, "reason": rej.reason}) + "\n")


# ---------------------------------------------------------------------------
# writing (the inverse of parsing; used by the synthetic generator)


def _fmt_num(x: float | None) -> str:
    if x is None:
        return ""
    if float(x).is_integer():
        return str(int(x))
    return repr(float(x))


def _row_of(record) -> dict:
    if isinstance(record, PatientStatic):
        row = {
            "patient_id": record.patient_id,
            "gender": record.gender,
            "age": str(record.age),
            "ethnicity": record.ethnicity,
            "height_cm": _fmt_num(record.height),
            "weight_kg": _fmt_num(record.weight),
        }
        row.update({c: "1" if c in record.comorbidities else "0" for c in COMORBIDITIES})
        return row
    if isinstance(record, Stay):
        return {
            "stay_id": record.stay_id,
            "patient_id": record.patient_id,
            "admit": format_time(record.admit),
            "discharge": format_time(record.discharge),
        }
    if isinstance(record, MapReading):
        return {
            "stay_id": record.stay_id,
            "time": format_time(record.time),
            "value_mmhg": _fmt_num(record.value),
            "source": record.source,
        }
    if isinstance(record, AdministrationRecord):
        return {
            "stay_id": record.stay_id,
            "drug": record.drug,
            "start": format_time(record.start),
            "end": format_time(record.end),
            "rate": _fmt_num(record.rate),
        }
    if isinstance(record, ConcomitantEvent):
        return {"stay_id": record.stay_id, "time": format_time(record.time), "medication_label": record.medication_label}
    raise TypeError(f"not an event record: {type(record).__name__}")


def write_table(path: str | Path, table: str, records: Iterable, fmt: str = "csv") -> None:
    columns = TABLES[table]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if fmt == "csv":
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for rec in records:
                row = _row_of(rec)
                writer.writerow([row[c] for c in columns])
        elif fmt == "jsonl":
            for rec in records:
                row = _row_of(rec)
                fh.write(json.dumps({c: row[c] for c in columns}) + "\n")
        else:
            raise IngestError(f"unknown format {fmt!r}")


# ---------------------------------------------------------------------------
# MAP fusion


@dataclass
class MapSeries:
    """Fused MAP points of one stay; ``invasive`` marks provenance per point."""

    stay_id: str
    times: np.ndarray
    values: np.ndarray
    invasive: np.ndarray
    n_invasive_conflicts: int = 0

    def __len__(self) -> int:
        return len(self.times)


def fuse_map(readings: Iterable[MapReading], mode: str = "mix", stay_id: str | None = None) -> MapSeries:
    """Collapse raw readings to one value per timestamp.

    In ``mix`` mode invasive readings win: the mean of all invasive readings at
    a timestamp is used and simultaneous non-invasive readings are dropped;
    timestamps with only non-invasive readings use their mean.
    ``invasive_only`` and ``noninvasive_only`` filter by source first.
    """
    if mode not in FUSION_MODES:
        raise ValueError(f"unknown fusion mode {mode!r}")
    invasive_at: dict[int, list[float]] = defaultdict(list)
    noninvasive_at: dict[int, list[float]] = defaultdict(list)
    for r in readings:
        if stay_id is None:
            stay_id = r.stay_id
        if r.source in INVASIVE_SOURCES:
            if mode != "noninvasive_only":
                invasive_at[r.time].append(r.value)
        elif mode != "invasive_only":
            noninvasive_at[r.time].append(r.value)

    times = sorted(set(invasive_at) | set(noninvasive_at))
    values = np.empty(len(times))
    invasive = np.zeros(len(times), dtype=bool)
    conflicts = 0
    for i, t in enumerate(times):
        inv = invasive_at.get(t)
        if inv:
            if len(inv) > 1 and min(inv) != max(inv):
                conflicts += 1
            values[i] = math.fsum(inv) / len(inv)
            invasive[i] = True
        else:
            non = noninvasive_at[t]
            values[i] = math.fsum(non) / len(non)
    return MapSeries(
        stay_id=stay_id if stay_id is not None else "",
        times=np.asarray(times, dtype=np.int64),
        values=values,
        invasive=invasive,
        n_invasive_conflicts=conflicts,
    )


def group_by_stay(records: Iterable) -> dict[str, list]:
    out: dict[str, list] = defaultdict(list)
    for rec in records:
        out[rec.stay_id].append(rec)
    return dict(out)
