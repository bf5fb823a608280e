"""Anti-leakage pipeline: temporal firewall, lexical masking, and the
pre-onset observation window.

All guards are pure per-record transforms. Boundary handling is
safety-biased: a note timestamped exactly at the cutoff is purged, so no
same-timestamp content can leak. Masking is whole-token and case-folded,
with no stemming, so every redaction is auditable.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Iterable, Optional

import numpy as np

from .cohort import Cohort, NoteDoc, PatientRecord, VitalsSeries

DRUG_MASK_TOKEN = "<DRUG>"


class GuardError(ValueError):
    pass


@dataclass(frozen=True)
class Lexicon:
    name: str
    terms: frozenset[str]

    def __post_init__(self):
        if not self.terms:
            object.__setattr__(self, "terms", frozenset())
        for t in self.terms:
            if not t:
                raise GuardError(f"lexicon {self.name}: empty term")
            if t != t.casefold():
                raise GuardError(f"lexicon {self.name}: term {t!r} is not lowercase")

    @staticmethod
    def from_terms(name: str, terms: Iterable[str]) -> "Lexicon":
        return Lexicon(name=name, terms=frozenset(terms))

    @staticmethod
    def from_file(path, name: Optional[str] = None) -> "Lexicon":
        """One term per line, UTF-8; '#' starts a comment."""
        terms = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                term = line.split("#", 1)[0].strip()
                if term:
                    terms.append(term.casefold())
        return Lexicon(name=name or str(path), terms=frozenset(terms))


def check_lexicons_disjoint(drug: Lexicon, pathogen: Lexicon) -> None:
    """Ambiguous lexicons are rejected up front, not per document."""
    overlap = drug.terms & pathogen.terms
    if overlap:
        raise GuardError(
            f"ambiguous lexicons: terms {sorted(overlap)} appear in both "
            f"{drug.name} and {pathogen.name}"
        )


@dataclass
class GuardAudit:
    notes_purged: int = 0
    tokens_masked: int = 0
    records_touched: int = 0

    def __add__(self, other: "GuardAudit") -> "GuardAudit":
        return GuardAudit(
            notes_purged=self.notes_purged + other.notes_purged,
            tokens_masked=self.tokens_masked + other.tokens_masked,
            records_touched=self.records_touched + other.records_touched,
        )

    def to_dict(self) -> dict:
        return {
            "notes_purged": self.notes_purged,
            "tokens_masked": self.tokens_masked,
            "records_touched": self.records_touched,
        }


# ---------------------------------------------------------------------------
# temporal firewall
# ---------------------------------------------------------------------------


def apply_temporal_firewall(
    record: PatientRecord, cutoff_hour: float
) -> tuple[PatientRecord, GuardAudit]:
    """Drop every note with timestamp >= cutoff_hour (boundary purged)."""
    if not np.isfinite(cutoff_hour):
        raise GuardError("cutoff_hour must be finite")
    kept = tuple(n for n in record.notes if n.timestamp < cutoff_hour)
    purged = len(record.notes) - len(kept)
    if purged == 0:
        return record, GuardAudit()
    return replace(record, notes=kept), GuardAudit(
        notes_purged=purged, records_touched=1
    )


# ---------------------------------------------------------------------------
# lexical masking
# ---------------------------------------------------------------------------


def apply_lexical_mask(
    doc: NoteDoc, drug_lexicon: Lexicon, pathogen_lexicon: Lexicon
) -> tuple[NoteDoc, GuardAudit]:
    """Replace drug-lexicon tokens with the literal <DRUG> marker.

    Pathogen-lexicon tokens pass through verbatim; token count is
    unchanged.
    """
    check_lexicons_disjoint(drug_lexicon, pathogen_lexicon)
    out = []
    masked = 0
    for tok in doc.tokens:
        if tok.casefold() in drug_lexicon.terms:
            out.append(DRUG_MASK_TOKEN)
            masked += 1
        else:
            out.append(tok)
    if masked == 0:
        return doc, GuardAudit()
    return NoteDoc(tokens=tuple(out), timestamp=doc.timestamp), GuardAudit(
        tokens_masked=masked, records_touched=1
    )


def mask_record(
    record: PatientRecord, drug_lexicon: Lexicon, pathogen_lexicon: Lexicon
) -> tuple[PatientRecord, GuardAudit]:
    check_lexicons_disjoint(drug_lexicon, pathogen_lexicon)
    audit = GuardAudit()
    notes = []
    for doc in record.notes:
        masked_doc, a = apply_lexical_mask(doc, drug_lexicon, pathogen_lexicon)
        notes.append(masked_doc)
        audit.tokens_masked += a.tokens_masked
    if audit.tokens_masked:
        audit.records_touched = 1
        return replace(record, notes=tuple(notes)), audit
    return record, audit


# ---------------------------------------------------------------------------
# observation window
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ControlWindowPolicy:
    """Reference-time range for records without their own event time.

    Drawn uniformly from [lo, hi) using a hash of (record id, seed), so the
    control cut-time distribution can be matched to the case distribution
    and the draw is reproducible per record.
    """

    lo: float = 32.0
    hi: float = 44.0
    seed: int = 0

    def reference_time(self, record_id: str) -> float:
        digest = hashlib.blake2b(
            f"{self.seed}:{record_id}".encode("utf-8"), digest_size=8
        ).digest()
        u = int.from_bytes(digest, "little") / 2.0**64
        return self.lo + (self.hi - self.lo) * u


def _truncate_vitals(vitals: VitalsSeries, cutoff: float) -> VitalsSeries:
    keep = int(np.sum(vitals.times() < cutoff))
    if keep == vitals.length:
        return vitals
    return VitalsSeries(
        values=vitals.values[:keep].copy(),
        mask=vitals.mask[:keep].copy(),
        t0=vitals.t0,
    )


def window_cutoff(
    record: PatientRecord,
    buffer_hours: float,
    task: str,
    control_policy: ControlWindowPolicy,
) -> float:
    """Observation cutoff for one record under the given task."""
    lab = record.labels
    if task == "antibiotics":
        if lab.antibiotic_hour is None:
            raise GuardError(
                f"record {record.id}: antibiotic task window needs an administration hour"
            )
        return lab.antibiotic_hour - buffer_hours
    if task == "detection" and lab.sepsis_onset is not None:
        return lab.sepsis_onset - buffer_hours
    if task == "detection":
        return control_policy.reference_time(record.id)
    if task == "mortality":
        # No event anchor: a matched reference time for every record avoids
        # any window-length proxy.
        return control_policy.reference_time(record.id)
    raise GuardError(f"unknown task {task!r}")


def enforce_observation_window(
    record: PatientRecord,
    buffer_hours: float,
    task: str,
    control_policy: Optional[ControlWindowPolicy] = None,
) -> PatientRecord:
    """Truncate vitals and notes to times strictly before the task cutoff.

    Records whose vitals would become empty are returned untouched with
    `excluded=True` so callers can drop them.
    """
    if buffer_hours < 0:
        raise GuardError("buffer_hours must be >= 0")
    if task == "detection" and record.labels.sepsis_onset is None and control_policy is None:
        raise GuardError("control records need a ControlWindowPolicy")
    policy = control_policy or ControlWindowPolicy()
    cutoff = window_cutoff(record, buffer_hours, task, policy)
    keep_steps = int(np.sum(record.vitals.times() < cutoff))
    if keep_steps == 0:
        return replace(record, excluded=True)
    vitals = _truncate_vitals(record.vitals, cutoff)
    notes = tuple(n for n in record.notes if n.timestamp < cutoff)
    if vitals is record.vitals and len(notes) == len(record.notes):
        return record
    return replace(record, vitals=vitals, notes=notes)


# ---------------------------------------------------------------------------
# cohort-level pipeline
# ---------------------------------------------------------------------------


@dataclass
class GuardSettings:
    buffer_hours: float = 4.0
    drug_lexicon: Optional[Lexicon] = None
    pathogen_lexicon: Optional[Lexicon] = None
    control_window: ControlWindowPolicy = ControlWindowPolicy()


def firewall_cutoff(record: PatientRecord, task: str) -> Optional[float]:
    """Treatment-time firewall cutoff, or None when the record has no anchor.

    Detection and mortality firewall on onset; the antibiotic task firewalls
    on the administration hour.
    """
    if task == "antibiotics":
        return record.labels.antibiotic_hour
    return record.labels.sepsis_onset


def guard_record(
    record: PatientRecord, task: str, settings: GuardSettings
) -> tuple[PatientRecord, GuardAudit]:
    """Firewall, then lexical mask, then observation window."""
    audit = GuardAudit()
    cutoff = firewall_cutoff(record, task)
    if cutoff is not None:
        record, a = apply_temporal_firewall(record, cutoff)
        audit = audit + a
    if settings.drug_lexicon is not None and settings.pathogen_lexicon is not None:
        record, a = mask_record(record, settings.drug_lexicon, settings.pathogen_lexicon)
        audit = audit + a
    record = enforce_observation_window(
        record, settings.buffer_hours, task, settings.control_window
    )
    return record, audit


def guard_cohort(
    cohort: Cohort, task: str, settings: GuardSettings
) -> tuple[Cohort, GuardAudit, int]:
    """Apply the full pipeline; excluded records are dropped.

    Returns (guarded cohort, merged audit, number excluded).
    """
    audit = GuardAudit()
    out = []
    excluded = 0
    for record in cohort.records:
        guarded, a = guard_record(record, task, settings)
        audit = audit + a
        if guarded.excluded:
            excluded += 1
            continue
        out.append(guarded)
    return cohort.subset(out), audit, excluded
