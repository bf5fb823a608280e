"""Multimodal patient data model, JSONL cohort files, and stratified splitting.

A cohort is an immutable list of patient admission records sharing one
feature schema. Records bundle four modalities (static tabular, hourly
vitals, timestamped note documents, optional image feature vector) plus
task labels. The on-disk format is line-delimited JSON with a single
header line; see `save_cohort` / `load_cohort`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

FORMAT_VERSION = 1

ANTIBIOTIC_CLASSES = ("VANC", "PIP_TAZO", "MEROPENEM", "CEFEPIME")

TASKS = ("detection", "mortality", "antibiotics")


class CohortError(ValueError):
    """Malformed cohort data: schema violation, bad file, bad invariant."""


@dataclass(frozen=True)
class CategoricalSpec:
    name: str
    cardinality: int

    def to_dict(self) -> dict:
        return {"name": self.name, "cardinality": self.cardinality}


@dataclass(frozen=True)
class CohortSchema:
    """Feature layout shared by every record in a cohort."""

    numeric_features: tuple[str, ...]
    categorical_features: tuple[CategoricalSpec, ...]
    vital_channels: tuple[str, ...]
    image_dim: int = 16

    def to_dict(self) -> dict:
        return {
            "numeric_features": list(self.numeric_features),
            "categorical_features": [c.to_dict() for c in self.categorical_features],
            "vital_channels": list(self.vital_channels),
            "image_dim": self.image_dim,
        }

    @staticmethod
    def from_dict(d: dict) -> "CohortSchema":
        return CohortSchema(
            numeric_features=tuple(d["numeric_features"]),
            categorical_features=tuple(
                CategoricalSpec(c["name"], int(c["cardinality"]))
                for c in d["categorical_features"]
            ),
            vital_channels=tuple(d["vital_channels"]),
            image_dim=int(d["image_dim"]),
        )


@dataclass
class StaticVector:
    numeric: np.ndarray  # float64, aligned with schema.numeric_features
    categorical: np.ndarray  # int64 codes, aligned with schema.categorical_features

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, StaticVector):
            return NotImplemented
        return np.array_equal(self.numeric, other.numeric) and np.array_equal(
            self.categorical, other.categorical
        )


@dataclass
class VitalsSeries:
    """Hourly-grid vitals: T steps x F channels with a presence mask.

    Masked-off entries hold NaN and must never be read by models. Step i
    corresponds to hour ``t0 + i``.
    """

    values: np.ndarray  # (T, F) float64, NaN where mask == 0
    mask: np.ndarray  # (T, F) uint8 presence indicators
    t0: float = 0.0

    @property
    def length(self) -> int:
        return self.values.shape[0]

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.length, dtype=np.float64)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VitalsSeries):
            return NotImplemented
        return (
            self.t0 == other.t0
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.values, other.values, equal_nan=True)
        )


@dataclass(frozen=True)
class NoteDoc:
    tokens: tuple[str, ...]
    timestamp: float  # hours since admission


@dataclass
class Labels:
    sepsis_onset: Optional[float] = None  # hour of onset, absent for controls
    mortality: Optional[int] = None
    antibiotic_class: Optional[str] = None
    antibiotic_hour: Optional[float] = None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Labels):
            return NotImplemented
        return (
            self.sepsis_onset == other.sepsis_onset
            and self.mortality == other.mortality
            and self.antibiotic_class == other.antibiotic_class
            and self.antibiotic_hour == other.antibiotic_hour
        )


@dataclass
class PatientRecord:
    id: str
    static: StaticVector
    vitals: VitalsSeries
    notes: tuple[NoteDoc, ...]
    image: Optional[np.ndarray] = None  # (image_dim,) float64 or None
    labels: Labels = field(default_factory=Labels)
    excluded: bool = False  # set by the observation-window guard

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PatientRecord):
            return NotImplemented
        if self.image is None or other.image is None:
            images_equal = self.image is None and other.image is None
        else:
            images_equal = np.array_equal(self.image, other.image)
        return (
            self.id == other.id
            and self.static == other.static
            and self.vitals == other.vitals
            and self.notes == other.notes
            and images_equal
            and self.labels == other.labels
            and self.excluded == other.excluded
        )


@dataclass
class Cohort:
    schema: CohortSchema
    records: list[PatientRecord]
    provenance: str = ""
    seed: int = 0

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Cohort):
            return NotImplemented
        return (
            self.schema == other.schema
            and self.provenance == other.provenance
            and self.seed == other.seed
            and self.records == other.records
        )

    def subset(self, records: Sequence[PatientRecord]) -> "Cohort":
        return Cohort(self.schema, list(records), self.provenance, self.seed)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def validate_record(record: PatientRecord, schema: CohortSchema) -> None:
    """Raise CohortError (naming the record) on any schema/invariant violation."""
    rid = record.id
    s = record.static
    if s.numeric.shape != (len(schema.numeric_features),):
        raise CohortError(f"record {rid}: static numeric length "
                          f"{s.numeric.shape} != schema {len(schema.numeric_features)}")
    if not np.all(np.isfinite(s.numeric)):
        raise CohortError(f"record {rid}: non-finite static numeric value")
    if s.categorical.shape != (len(schema.categorical_features),):
        raise CohortError(f"record {rid}: static categorical length mismatch")
    for j, spec in enumerate(schema.categorical_features):
        code = int(s.categorical[j])
        if not 0 <= code < spec.cardinality:
            raise CohortError(
                f"record {rid}: categorical {spec.name} code {code} outside "
                f"cardinality {spec.cardinality}"
            )
    v = record.vitals
    T = v.values.shape[0]
    F = len(schema.vital_channels)
    if T < 1:
        raise CohortError(f"record {rid}: empty vitals series")
    if v.values.shape != (T, F) or v.mask.shape != (T, F):
        raise CohortError(f"record {rid}: vitals shape mismatch with schema")
    if not math.isfinite(v.t0):
        raise CohortError(f"record {rid}: non-finite vitals t0")
    present = v.mask.astype(bool)
    bad = present & ~np.isfinite(v.values)
    if bad.any():
        t_idx, f_idx = np.argwhere(bad)[0]
        raise CohortError(
            f"record {rid}: non-finite present vital at step {t_idx}, "
            f"channel {schema.vital_channels[f_idx]}"
        )
    for note in record.notes:
        if not math.isfinite(note.timestamp):
            raise CohortError(f"record {rid}: non-finite note timestamp")
    if record.image is not None:
        if record.image.shape != (schema.image_dim,):
            raise CohortError(
                f"record {rid}: image length {record.image.shape[0]} != "
                f"schema image_dim {schema.image_dim}"
            )
        if not np.all(np.isfinite(record.image)):
            raise CohortError(f"record {rid}: non-finite image feature")
    lab = record.labels
    if lab.sepsis_onset is not None and not (
        math.isfinite(lab.sepsis_onset) and lab.sepsis_onset >= 0
    ):
        raise CohortError(f"record {rid}: invalid sepsis_onset {lab.sepsis_onset}")
    if lab.mortality is not None and lab.mortality not in (0, 1):
        raise CohortError(f"record {rid}: mortality must be 0/1")
    if (lab.antibiotic_class is None) != (lab.antibiotic_hour is None):
        raise CohortError(
            f"record {rid}: antibiotic_class and antibiotic_hour must be "
            f"present together"
        )
    if lab.antibiotic_class is not None and lab.antibiotic_class not in ANTIBIOTIC_CLASSES:
        raise CohortError(f"record {rid}: unknown antibiotic_class {lab.antibiotic_class}")


def validate_cohort(cohort: Cohort) -> None:
    seen: set[str] = set()
    for record in cohort.records:
        if record.id in seen:
            raise CohortError(f"duplicate record id {record.id}")
        seen.add(record.id)
        validate_record(record, cohort.schema)


# ---------------------------------------------------------------------------
# task labels
# ---------------------------------------------------------------------------


def task_class_names(task: str) -> tuple[str, ...]:
    if task == "detection":
        return ("non_sepsis", "sepsis")
    if task == "mortality":
        return ("survivor", "mortality")
    if task == "antibiotics":
        return ANTIBIOTIC_CLASSES
    raise CohortError(f"unknown task {task!r}; expected one of {TASKS}")


def task_label(record: PatientRecord, task: str) -> Optional[int]:
    """Integer class for `record` under `task`, or None when unlabeled.

    Detection is labeled on every record: presence of an onset hour is the
    positive class.
    """
    if task == "detection":
        return int(record.labels.sepsis_onset is not None)
    if task == "mortality":
        return record.labels.mortality
    if task == "antibiotics":
        if record.labels.antibiotic_class is None:
            return None
        return ANTIBIOTIC_CLASSES.index(record.labels.antibiotic_class)
    raise CohortError(f"unknown task {task!r}; expected one of {TASKS}")


def task_labels(cohort: Cohort, task: str) -> np.ndarray:
    """Labels for all records; raises if any record is unlabeled."""
    out = np.empty(len(cohort), dtype=np.int64)
    for i, record in enumerate(cohort.records):
        y = task_label(record, task)
        if y is None:
            raise CohortError(f"record {record.id} has no {task} label")
        out[i] = y
    return out


# ---------------------------------------------------------------------------
# JSONL wire format
# ---------------------------------------------------------------------------


def _vitals_to_wire(v: VitalsSeries) -> dict:
    values = []
    for t in range(v.values.shape[0]):
        row = []
        for f in range(v.values.shape[1]):
            row.append(float(v.values[t, f]) if v.mask[t, f] else None)
        values.append(row)
    return {"t0": float(v.t0), "values": values, "mask": v.mask.astype(int).tolist()}


def _vitals_from_wire(d: dict, rid: str, channels: Sequence[str]) -> VitalsSeries:
    mask = np.asarray(d["mask"], dtype=np.uint8)
    raw = d["values"]
    if mask.ndim != 2 or len(raw) != mask.shape[0]:
        raise CohortError(f"record {rid}: vitals mask/values shape mismatch")
    values = np.full(mask.shape, np.nan, dtype=np.float64)
    for t, row in enumerate(raw):
        if len(row) != mask.shape[1]:
            raise CohortError(f"record {rid}: ragged vitals row at step {t}")
        for f, cell in enumerate(row):
            if mask[t, f]:
                if cell is None or not math.isfinite(float(cell)):
                    name = channels[f] if f < len(channels) else str(f)
                    raise CohortError(
                        f"record {rid}: non-finite present vital at step {t}, "
                        f"channel {name}"
                    )
                values[t, f] = float(cell)
            elif cell is not None:
                raise CohortError(
                    f"record {rid}: masked-off vital carries a value at step {t}"
                )
    return VitalsSeries(values=values, mask=mask, t0=float(d["t0"]))


def record_to_wire(record: PatientRecord) -> dict:
    d: dict = {
        "id": record.id,
        "static": {
            "numeric": [float(x) for x in record.static.numeric],
            "categorical": [int(x) for x in record.static.categorical],
        },
        "vitals": _vitals_to_wire(record.vitals),
        "notes": [
            {"timestamp": float(n.timestamp), "tokens": list(n.tokens)}
            for n in record.notes
        ],
    }
    if record.image is not None:
        d["image"] = [float(x) for x in record.image]
    labels: dict = {}
    lab = record.labels
    if lab.sepsis_onset is not None:
        labels["sepsis_onset"] = float(lab.sepsis_onset)
    if lab.mortality is not None:
        labels["mortality"] = int(lab.mortality)
    if lab.antibiotic_class is not None:
        labels["antibiotic_class"] = lab.antibiotic_class
        labels["antibiotic_hour"] = float(lab.antibiotic_hour)
    d["labels"] = labels
    if record.excluded:
        d["excluded"] = True
    return d


def record_from_wire(d: dict, schema: CohortSchema) -> PatientRecord:
    rid = str(d["id"])
    static = StaticVector(
        numeric=np.asarray(d["static"]["numeric"], dtype=np.float64),
        categorical=np.asarray(d["static"]["categorical"], dtype=np.int64),
    )
    vitals = _vitals_from_wire(d["vitals"], rid, schema.vital_channels)
    notes = tuple(
        NoteDoc(tokens=tuple(n["tokens"]), timestamp=float(n["timestamp"]))
        for n in d.get("notes", [])
    )
    image = None
    if "image" in d:
        image = np.asarray(d["image"], dtype=np.float64)
    lab = d.get("labels", {})
    labels = Labels(
        sepsis_onset=float(lab["sepsis_onset"]) if "sepsis_onset" in lab else None,
        mortality=int(lab["mortality"]) if "mortality" in lab else None,
        antibiotic_class=lab.get("antibiotic_class"),
        antibiotic_hour=float(lab["antibiotic_hour"]) if "antibiotic_hour" in lab else None,
    )
    return PatientRecord(
        id=rid,
        static=static,
        vitals=vitals,
        notes=notes,
        image=image,
        labels=labels,
        excluded=bool(d.get("excluded", False)),
    )


def save_cohort(cohort: Cohort, path) -> None:
    """Write a cohort as UTF-8 JSONL: one header line, one record per line."""
    validate_cohort(cohort)
    header = {
        "format_version": FORMAT_VERSION,
        "schema": cohort.schema.to_dict(),
        "provenance": cohort.provenance,
        "seed": cohort.seed,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for record in cohort.records:
            fh.write(json.dumps(record_to_wire(record), separators=(",", ":")) + "\n")


def load_cohort(path) -> Cohort:
    """Read a cohort file, validating every record invariant."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise CohortError(f"{path}: empty file, expected a header line")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CohortError(f"{path}:1: malformed header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CohortError(f"{path}: unsupported format_version {header.get('format_version')}")
    schema = CohortSchema.from_dict(header["schema"])
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            record = record_from_wire(d, schema)
        except CohortError:
            raise
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise CohortError(f"{path}:{lineno}: malformed record line: {exc}") from exc
        records.append(record)
    cohort = Cohort(
        schema=schema,
        records=records,
        provenance=header.get("provenance", ""),
        seed=int(header.get("seed", 0)),
    )
    validate_cohort(cohort)
    return cohort


# ---------------------------------------------------------------------------
# stratified splitting
# ---------------------------------------------------------------------------


def _largest_remainder(count: int, fractions: Sequence[float]) -> list[int]:
    """Apportion `count` items to fractions; each part differs from its exact
    quota by strictly less than one item (Hamilton method)."""
    quotas = [count * f for f in fractions]
    alloc = [int(math.floor(q)) for q in quotas]
    short = count - sum(alloc)
    remainders = sorted(
        range(len(fractions)), key=lambda i: (-(quotas[i] - alloc[i]), i)
    )
    for i in remainders[:short]:
        alloc[i] += 1
    return alloc


def split_cohort(
    cohort: Cohort,
    fractions: tuple[float, float, float],
    stratify_on: str,
    seed: int,
) -> tuple[Cohort, Cohort, Cohort]:
    """Deterministic stratified partition into (train, val, test).

    Per-class counts in each part differ from exact proportionality by
    strictly less than one record.
    """
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise CohortError(f"fractions must be three positive numbers, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise CohortError(f"fractions must sum to 1, got sum {sum(fractions)!r}")
    y = task_labels(cohort, stratify_on)

    rng = np.random.default_rng(seed)
    parts: list[list[int]] = [[], [], []]
    for cls in sorted(set(int(c) for c in y)):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        alloc = _largest_remainder(len(idx), fractions)
        start = 0
        for s, k in enumerate(alloc):
            parts[s].extend(int(i) for i in idx[start : start + k])
            start += k
    out = []
    for s in range(3):
        members = sorted(parts[s])
        out.append(cohort.subset([cohort.records[i] for i in members]))
    return out[0], out[1], out[2]
