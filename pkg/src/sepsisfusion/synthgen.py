"""Synthetic multimodal cohort generation with a computable Bayes oracle.

The generative process has two latents per admission: a scalar severity
z ~ N(0,1) and a pathogen category p (GRAM_POS / GRAM_NEG / RESISTANT /
NONE). Every modality is a known parametric function of (z, p) plus
independent noise, so the exact posterior over any task label given a
guarded record reduces to a 1-D integral over z and a 4-way sum over p.
The quadrature oracle uses a fixed 2,001-point trapezoid grid on [-8, 8].

The detection label couples modalities: the margin is

    z + kappa * s_v(record) * s_n(record) + shift_p + noise

where s_v is a squashed vitals-trend score and s_n a squashed note-severity
score, both deterministic functions of observations inside the scoring
prefix [0, score_window). A deep-fusion model can represent that product;
per-modality experts cannot, which is what makes the stacking-vs-fusion
comparison meaningful.

Record draws consume their RNG substream in a fixed order that never
branches on the detection threshold, so thresholds can be tuned from margin
samples without perturbing the rest of the record, and generation is
bit-deterministic per (spec, n, seed) with per-record substreams.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .cohort import (
    ANTIBIOTIC_CLASSES,
    CategoricalSpec,
    Cohort,
    CohortSchema,
    Labels,
    NoteDoc,
    PatientRecord,
    StaticVector,
    VitalsSeries,
)

PATHOGENS = ("GRAM_POS", "GRAM_NEG", "RESISTANT", "NONE")

ORACLE_GRID_POINTS = 2001
ORACLE_GRID_RANGE = 8.0


class GenSpecError(ValueError):
    pass


# ---------------------------------------------------------------------------
# spec dataclasses
# ---------------------------------------------------------------------------


@dataclass
class NumericFeatureSpec:
    name: str
    mean: float
    z_loading: float
    noise_sd: float


@dataclass
class VocabToken:
    token: str
    base: float  # log-weight
    z_loading: float  # severity loading; also the note-score contribution
    pathogen_boost: tuple[float, float, float, float]


@dataclass
class GenSpec:
    name: str
    series_length: int
    score_window: int
    # static
    static_numeric: list[NumericFeatureSpec]
    unit_names: tuple[str, ...]
    unit_logits_by_pathogen: np.ndarray  # (4, U)
    # vitals
    vital_channels: tuple[str, ...]
    vital_baseline: np.ndarray  # (F,)
    vital_noise_sd: np.ndarray  # (F,)
    vital_trend_loading: np.ndarray  # (F,) full-window sweep per unit z
    vital_pathogen_offset: np.ndarray  # (4, F)
    vital_missing_rate: float
    # notes
    note_count_min: int
    note_count_poisson: float
    note_count_max: int
    note_length_min: int
    note_length_poisson: float
    note_length_max: int
    vocab: list[VocabToken]
    # image
    image_dim: int
    image_present_rate: float
    image_redundant_loading: np.ndarray  # (D,) loading on z at rho = 1
    image_z_loading: np.ndarray  # (D,) independent-signal z loading
    image_pathogen_pattern: np.ndarray  # (4, D)
    image_noise_sd: float
    image_redundancy_rho: float
    # pathogen
    pathogen_prior: np.ndarray  # (4,)
    # detection label
    interaction_strength: float  # kappa
    pathogen_shift: np.ndarray  # (4,)
    detection_noise_sd: float
    detection_threshold: float
    detection_target_prevalence: float
    trend_score_weights: np.ndarray  # (F,)
    trend_score_scale: float
    note_score_scale: float
    onset_min: float
    onset_max: float
    # mortality label
    mortality_z_loading: float
    mortality_intercept: float
    mortality_target_prevalence: float
    # antibiotics label
    imitation_noise: float
    deviation_class_weights: np.ndarray  # (4,) deviation-target weights
    admin_min: float
    admin_max: float
    # contaminants
    drug_token_rate: float
    late_note_rate: float
    late_note_length: int
    drug_tokens: tuple[str, str, str, str]  # aligned with ANTIBIOTIC_CLASSES
    leak_tokens: tuple[str, ...]

    # ---- derived helpers -------------------------------------------------

    def time_ramp(self, times: np.ndarray) -> np.ndarray:
        T = self.series_length
        return (times - (T - 1) / 2.0) / (T - 1)

    def schema(self) -> CohortSchema:
        return CohortSchema(
            numeric_features=tuple(f.name for f in self.static_numeric),
            categorical_features=(CategoricalSpec("admission_unit", len(self.unit_names)),),
            vital_channels=self.vital_channels,
            image_dim=self.image_dim,
        )

    def vocab_index(self) -> dict[str, int]:
        return {t.token: i for i, t in enumerate(self.vocab)}

    def image_effective_sd(self) -> float:
        rho = self.image_redundancy_rho
        return self.image_noise_sd * float(np.sqrt(max(0.0, 1.0 - rho * rho)))

    def validate(self) -> None:
        if self.series_length < 2 or not 1 <= self.score_window <= self.series_length:
            raise GenSpecError("series_length/score_window out of range")
        pri = self.pathogen_prior
        if pri.shape != (4,) or np.any(pri < 0) or abs(pri.sum() - 1.0) > 1e-9:
            raise GenSpecError("pathogen prior must be a 4-simplex vector")
        if not 0.0 <= self.image_redundancy_rho <= 1.0:
            raise GenSpecError("image redundancy rho must lie in [0, 1]")
        for arr, nm in (
            (self.vital_noise_sd, "vital_noise_sd"),
            (np.array([self.image_noise_sd]), "image_noise_sd"),
            (np.array([self.detection_noise_sd]), "detection_noise_sd"),
        ):
            if np.any(np.asarray(arr) <= 0):
                raise GenSpecError(f"{nm} must be positive")
        for f in self.static_numeric:
            if f.noise_sd <= 0:
                raise GenSpecError(f"static feature {f.name}: noise_sd must be positive")
        for tgt, nm in (
            (self.detection_target_prevalence, "detection"),
            (self.mortality_target_prevalence, "mortality"),
        ):
            if not 0.0 < tgt < 1.0:
                raise GenSpecError(f"{nm} target prevalence must lie in (0, 1)")
        if not 0.0 <= self.vital_missing_rate < 1.0:
            raise GenSpecError("vital_missing_rate must lie in [0, 1)")
        if not 0.0 <= self.imitation_noise <= 1.0:
            raise GenSpecError("imitation_noise must lie in [0, 1]")
        toks = [t.token for t in self.vocab]
        if len(set(toks)) != len(toks):
            raise GenSpecError("vocabulary tokens must be unique")
        if set(self.drug_tokens) & set(toks):
            raise GenSpecError("drug tokens must not appear in the base vocabulary")
        if not (self.onset_min >= self.score_window and self.onset_max > self.onset_min):
            raise GenSpecError("onset window must sit at or above the scoring prefix")

    # ---- (de)serialization ------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "name": self.name,
            "series_length": self.series_length,
            "score_window": self.score_window,
            "static_numeric": [
                {"name": f.name, "mean": f.mean, "z_loading": f.z_loading, "noise_sd": f.noise_sd}
                for f in self.static_numeric
            ],
            "unit_names": list(self.unit_names),
            "unit_logits_by_pathogen": self.unit_logits_by_pathogen.tolist(),
            "vital_channels": list(self.vital_channels),
            "vital_baseline": self.vital_baseline.tolist(),
            "vital_noise_sd": self.vital_noise_sd.tolist(),
            "vital_trend_loading": self.vital_trend_loading.tolist(),
            "vital_pathogen_offset": self.vital_pathogen_offset.tolist(),
            "vital_missing_rate": self.vital_missing_rate,
            "note_count_min": self.note_count_min,
            "note_count_poisson": self.note_count_poisson,
            "note_count_max": self.note_count_max,
            "note_length_min": self.note_length_min,
            "note_length_poisson": self.note_length_poisson,
            "note_length_max": self.note_length_max,
            "vocab": [
                {
                    "token": t.token,
                    "base": t.base,
                    "z_loading": t.z_loading,
                    "pathogen_boost": list(t.pathogen_boost),
                }
                for t in self.vocab
            ],
            "image_dim": self.image_dim,
            "image_present_rate": self.image_present_rate,
            "image_redundant_loading": self.image_redundant_loading.tolist(),
            "image_z_loading": self.image_z_loading.tolist(),
            "image_pathogen_pattern": self.image_pathogen_pattern.tolist(),
            "image_noise_sd": self.image_noise_sd,
            "image_redundancy_rho": self.image_redundancy_rho,
            "pathogen_prior": self.pathogen_prior.tolist(),
            "interaction_strength": self.interaction_strength,
            "pathogen_shift": self.pathogen_shift.tolist(),
            "detection_noise_sd": self.detection_noise_sd,
            "detection_threshold": self.detection_threshold,
            "detection_target_prevalence": self.detection_target_prevalence,
            "trend_score_weights": self.trend_score_weights.tolist(),
            "trend_score_scale": self.trend_score_scale,
            "note_score_scale": self.note_score_scale,
            "onset_min": self.onset_min,
            "onset_max": self.onset_max,
            "mortality_z_loading": self.mortality_z_loading,
            "mortality_intercept": self.mortality_intercept,
            "mortality_target_prevalence": self.mortality_target_prevalence,
            "imitation_noise": self.imitation_noise,
            "deviation_class_weights": self.deviation_class_weights.tolist(),
            "admin_min": self.admin_min,
            "admin_max": self.admin_max,
            "drug_token_rate": self.drug_token_rate,
            "late_note_rate": self.late_note_rate,
            "late_note_length": self.late_note_length,
            "drug_tokens": list(self.drug_tokens),
            "leak_tokens": list(self.leak_tokens),
        }

    @staticmethod
    def from_dict(d: dict) -> "GenSpec":
        if d.get("format_version") != 1:
            raise GenSpecError(f"unsupported genspec format_version {d.get('format_version')}")
        return GenSpec(
            name=d["name"],
            series_length=int(d["series_length"]),
            score_window=int(d["score_window"]),
            static_numeric=[
                NumericFeatureSpec(f["name"], f["mean"], f["z_loading"], f["noise_sd"])
                for f in d["static_numeric"]
            ],
            unit_names=tuple(d["unit_names"]),
            unit_logits_by_pathogen=np.asarray(d["unit_logits_by_pathogen"], dtype=np.float64),
            vital_channels=tuple(d["vital_channels"]),
            vital_baseline=np.asarray(d["vital_baseline"], dtype=np.float64),
            vital_noise_sd=np.asarray(d["vital_noise_sd"], dtype=np.float64),
            vital_trend_loading=np.asarray(d["vital_trend_loading"], dtype=np.float64),
            vital_pathogen_offset=np.asarray(d["vital_pathogen_offset"], dtype=np.float64),
            vital_missing_rate=float(d["vital_missing_rate"]),
            note_count_min=int(d["note_count_min"]),
            note_count_poisson=float(d["note_count_poisson"]),
            note_count_max=int(d["note_count_max"]),
            note_length_min=int(d["note_length_min"]),
            note_length_poisson=float(d["note_length_poisson"]),
            note_length_max=int(d["note_length_max"]),
            vocab=[
                VocabToken(t["token"], t["base"], t["z_loading"], tuple(t["pathogen_boost"]))
                for t in d["vocab"]
            ],
            image_dim=int(d["image_dim"]),
            image_present_rate=float(d["image_present_rate"]),
            image_redundant_loading=np.asarray(d["image_redundant_loading"], dtype=np.float64),
            image_z_loading=np.asarray(d["image_z_loading"], dtype=np.float64),
            image_pathogen_pattern=np.asarray(d["image_pathogen_pattern"], dtype=np.float64),
            image_noise_sd=float(d["image_noise_sd"]),
            image_redundancy_rho=float(d["image_redundancy_rho"]),
            pathogen_prior=np.asarray(d["pathogen_prior"], dtype=np.float64),
            interaction_strength=float(d["interaction_strength"]),
            pathogen_shift=np.asarray(d["pathogen_shift"], dtype=np.float64),
            detection_noise_sd=float(d["detection_noise_sd"]),
            detection_threshold=float(d["detection_threshold"]),
            detection_target_prevalence=float(d["detection_target_prevalence"]),
            trend_score_weights=np.asarray(d["trend_score_weights"], dtype=np.float64),
            trend_score_scale=float(d["trend_score_scale"]),
            note_score_scale=float(d["note_score_scale"]),
            onset_min=float(d["onset_min"]),
            onset_max=float(d["onset_max"]),
            mortality_z_loading=float(d["mortality_z_loading"]),
            mortality_intercept=float(d["mortality_intercept"]),
            mortality_target_prevalence=float(d["mortality_target_prevalence"]),
            imitation_noise=float(d["imitation_noise"]),
            deviation_class_weights=np.asarray(d["deviation_class_weights"], dtype=np.float64),
            admin_min=float(d["admin_min"]),
            admin_max=float(d["admin_max"]),
            drug_token_rate=float(d["drug_token_rate"]),
            late_note_rate=float(d["late_note_rate"]),
            late_note_length=int(d["late_note_length"]),
            drug_tokens=tuple(d["drug_tokens"]),
            leak_tokens=tuple(d["leak_tokens"]),
        )

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def content_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def provenance(self) -> str:
        return f"genspec:{self.name}:{self.content_hash()[:16]}"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def load(path) -> "GenSpec":
        with open(path, "r", encoding="utf-8") as fh:
            return GenSpec.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# observation scores shared by generation and the oracle
# ---------------------------------------------------------------------------


def vitals_trend_score(values: np.ndarray, mask: np.ndarray, t0: float, spec: GenSpec) -> float:
    """Weighted sum of per-channel OLS slopes over the scoring prefix, squashed.

    Uses only present entries at hours < score_window; channels with fewer
    than two distinct present times contribute slope 0.
    """
    times = t0 + np.arange(values.shape[0], dtype=np.float64)
    prefix = times < spec.score_window
    raw = 0.0
    for f in range(values.shape[1]):
        sel = prefix & mask[:, f].astype(bool)
        t = times[sel]
        if len(t) < 2:
            continue
        v = values[sel, f]
        t_c = t - t.mean()
        ss = float(np.sum(t_c * t_c))
        if ss == 0.0:
            continue
        slope = float(np.sum(t_c * (v - v.mean()))) / ss
        raw += spec.trend_score_weights[f] * slope
    return float(np.tanh(raw / spec.trend_score_scale))


def note_severity_score(notes: Sequence[NoteDoc], spec: GenSpec) -> float:
    """Sum of vocabulary severity loadings over prefix-note tokens, squashed.

    Tokens outside the vocabulary (including the <DRUG> mask marker)
    contribute zero, which keeps the score invariant under lexical masking.
    """
    index = spec.vocab_index()
    total = 0.0
    for note in notes:
        if note.timestamp >= spec.score_window:
            continue
        for tok in note.tokens:
            i = index.get(tok)
            if i is not None:
                total += spec.vocab[i].z_loading
    return float(np.tanh(total / spec.note_score_scale))


def detection_margin(z: float, pathogen: int, s_v: float, s_n: float, spec: GenSpec) -> float:
    return (
        z
        + spec.interaction_strength * s_v * s_n
        + float(spec.pathogen_shift[pathogen])
    )


# ---------------------------------------------------------------------------
# record drawing (fixed RNG consumption order)
# ---------------------------------------------------------------------------


@dataclass
class _RecordDraw:
    z: float
    pathogen: int
    static_numeric: np.ndarray
    unit: int
    vit_values: np.ndarray  # clean values (T, F) before masking sentinel
    vit_mask: np.ndarray  # (T, F) uint8
    notes: list[tuple[float, list[int]]]  # (timestamp, vocab token indices)
    image_present: bool
    image: Optional[np.ndarray]
    eps_det: float
    onset_u: float
    mortality_u: float
    admin_u: float
    abx_dev_u: float
    abx_pick_u: float
    drug_note_us: np.ndarray  # per clean note: injection uniform
    drug_pick_us: np.ndarray  # per clean note: name pick uniform
    late_count: int
    late_ts_us: np.ndarray
    late_token_us: np.ndarray  # (late_count, late_note_length)
    s_v: float = 0.0
    s_n: float = 0.0


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _categorical_from_u(cdf: np.ndarray, u: float) -> int:
    return int(np.searchsorted(cdf, u, side="right"))


def _draw_record(spec: GenSpec, rng: np.random.Generator) -> _RecordDraw:
    T = spec.series_length
    F = len(spec.vital_channels)
    z = float(rng.standard_normal())
    p = _categorical_from_u(np.cumsum(spec.pathogen_prior)[:-1], float(rng.random()))
    p = min(p, 3)

    static = np.array(
        [f.mean + f.z_loading * z for f in spec.static_numeric], dtype=np.float64
    ) + np.array([f.noise_sd for f in spec.static_numeric]) * rng.standard_normal(
        len(spec.static_numeric)
    )
    unit_probs = _softmax_rows(spec.unit_logits_by_pathogen[p])
    unit = _categorical_from_u(np.cumsum(unit_probs)[:-1], float(rng.random()))
    unit = min(unit, len(spec.unit_names) - 1)

    times = np.arange(T, dtype=np.float64)
    ramp = spec.time_ramp(times)
    mean = (
        spec.vital_baseline[None, :]
        + spec.vital_trend_loading[None, :] * z * ramp[:, None]
        + spec.vital_pathogen_offset[p][None, :]
    )
    values = mean + spec.vital_noise_sd[None, :] * rng.standard_normal((T, F))
    mask = (rng.random((T, F)) >= spec.vital_missing_rate).astype(np.uint8)

    n_notes = min(
        spec.note_count_min + int(rng.poisson(spec.note_count_poisson)),
        spec.note_count_max,
    )
    # token distribution for this record, one categorical per pathogen-fixed z
    base = np.array([t.base for t in spec.vocab])
    beta = np.array([t.z_loading for t in spec.vocab])
    gamma = np.array([t.pathogen_boost[p] for t in spec.vocab])
    probs = _softmax_rows(base + beta * z + gamma)
    cdf = np.cumsum(probs)[:-1]
    notes = []
    for _ in range(n_notes):
        ts = float(rng.random() * T)
        length = min(
            spec.note_length_min + int(rng.poisson(spec.note_length_poisson)),
            spec.note_length_max,
        )
        token_ids = [
            min(_categorical_from_u(cdf, float(u)), len(spec.vocab) - 1)
            for u in rng.random(length)
        ]
        notes.append((ts, token_ids))

    image_present = bool(rng.random() < spec.image_present_rate)
    rho = spec.image_redundancy_rho
    image_eps = rng.standard_normal(spec.image_dim)
    image_mean = (
        rho * spec.image_redundant_loading * z
        + (1.0 - rho) * (spec.image_z_loading * z + spec.image_pathogen_pattern[p])
    )
    image = image_mean + spec.image_effective_sd() * image_eps if image_present else None

    eps_det = float(rng.standard_normal())
    onset_u = float(rng.random())
    mortality_u = float(rng.random())
    admin_u = float(rng.random())
    abx_dev_u = float(rng.random())
    abx_pick_u = float(rng.random())
    drug_note_us = rng.random(n_notes)
    drug_pick_us = rng.random(n_notes)
    late_count = int(rng.poisson(spec.late_note_rate))
    late_ts_us = rng.random(late_count)
    late_token_us = rng.random((late_count, spec.late_note_length))

    draw = _RecordDraw(
        z=z,
        pathogen=p,
        static_numeric=static,
        unit=unit,
        vit_values=values,
        vit_mask=mask,
        notes=notes,
        image_present=image_present,
        image=image,
        eps_det=eps_det,
        onset_u=onset_u,
        mortality_u=mortality_u,
        admin_u=admin_u,
        abx_dev_u=abx_dev_u,
        abx_pick_u=abx_pick_u,
        drug_note_us=drug_note_us,
        drug_pick_us=drug_pick_us,
        late_count=late_count,
        late_ts_us=late_ts_us,
        late_token_us=late_token_us,
    )
    # scores over the clean prefix, before contaminant injection
    masked_values = np.where(mask.astype(bool), values, np.nan)
    draw.s_v = vitals_trend_score(masked_values, mask, 0.0, spec)
    clean_notes = [
        NoteDoc(tokens=tuple(spec.vocab[i].token for i in ids), timestamp=ts)
        for ts, ids in notes
    ]
    draw.s_n = note_severity_score(clean_notes, spec)
    return draw


def _abx_class(draw: _RecordDraw, spec: GenSpec) -> Optional[int]:
    """Imitation policy: match the pathogen, or deviate with rate eps toward
    the other classes weighted by their matching-pathogen priors."""
    p = draw.pathogen
    if p == 3:  # NONE: untreated
        return None
    match = p  # identity map pathogen index -> class index
    if draw.abx_dev_u >= spec.imitation_noise:
        return match
    weights = np.array(
        [spec.deviation_class_weights[c] if c != match else 0.0 for c in range(4)]
    )
    weights = weights / weights.sum()
    return _categorical_from_u(np.cumsum(weights)[:-1], draw.abx_pick_u)


def _record_from_draw(
    draw: _RecordDraw, spec: GenSpec, index: int
) -> PatientRecord:
    T = spec.series_length
    margin = detection_margin(draw.z, draw.pathogen, draw.s_v, draw.s_n, spec)
    is_case = margin + spec.detection_noise_sd * draw.eps_det > spec.detection_threshold
    onset = (
        spec.onset_min + (spec.onset_max - spec.onset_min) * draw.onset_u
        if is_case
        else None
    )
    p_mort = 1.0 / (1.0 + np.exp(-(spec.mortality_z_loading * draw.z + spec.mortality_intercept)))
    mortality = int(draw.mortality_u < p_mort)
    abx = _abx_class(draw, spec)
    admin = (
        spec.admin_min + (spec.admin_max - spec.admin_min) * draw.admin_u
        if abx is not None
        else None
    )

    notes = []
    for j, (ts, ids) in enumerate(draw.notes):
        tokens = [spec.vocab[i].token for i in ids]
        if draw.drug_note_us[j] < spec.drug_token_rate:
            if abx is not None:
                tokens.append(spec.drug_tokens[abx])
            else:
                tokens.append(spec.drug_tokens[min(int(draw.drug_pick_us[j] * 4), 3)])
        notes.append(NoteDoc(tokens=tuple(tokens), timestamp=ts))

    # treatment-time contaminants: only septic + treated records, timestamped
    # at/after both onset and administration so every guard path purges them
    if is_case and abx is not None:
        pool = [spec.drug_tokens[abx]] + list(spec.leak_tokens)
        marker = _strongest_marker(spec, draw.pathogen)
        if marker is not None:
            pool.append(marker)
        t_anchor = max(admin, onset)
        for k in range(draw.late_count):
            ts = t_anchor + 8.0 * draw.late_ts_us[k]
            toks = tuple(
                pool[min(int(u * len(pool)), len(pool) - 1)]
                for u in draw.late_token_us[k]
            )
            notes.append(NoteDoc(tokens=toks, timestamp=ts))

    values = np.where(draw.vit_mask.astype(bool), draw.vit_values, np.nan)
    labels = Labels(
        sepsis_onset=onset,
        mortality=mortality,
        antibiotic_class=ANTIBIOTIC_CLASSES[abx] if abx is not None else None,
        antibiotic_hour=admin,
    )
    return PatientRecord(
        id=f"r{index:06d}",
        static=StaticVector(
            numeric=draw.static_numeric,
            categorical=np.array([draw.unit], dtype=np.int64),
        ),
        vitals=VitalsSeries(values=values, mask=draw.vit_mask, t0=0.0),
        notes=tuple(notes),
        image=draw.image,
        labels=labels,
    )


def _strongest_marker(spec: GenSpec, pathogen: int) -> Optional[str]:
    best = None
    best_boost = 0.0
    for t in spec.vocab:
        if t.pathogen_boost[pathogen] > best_boost:
            best_boost = t.pathogen_boost[pathogen]
            best = t.token
    return best


def generate_cohort(spec: GenSpec, n: int, seed: int) -> Cohort:
    """n i.i.d. records; bit-deterministic via per-record substreams (seed, i)."""
    spec.validate()
    if n < 0:
        raise GenSpecError("n must be >= 0")
    records = []
    for i in range(n):
        rng = np.random.default_rng((seed, i))
        draw = _draw_record(spec, rng)
        records.append(_record_from_draw(draw, spec, i))
    return Cohort(
        schema=spec.schema(),
        records=records,
        provenance=spec.provenance(),
        seed=seed,
    )


def generate_cohort_with_latents(
    spec: GenSpec, n: int, seed: int
) -> tuple[Cohort, dict[str, np.ndarray]]:
    """Generation plus the hidden (z, pathogen) per record, for diagnostics."""
    spec.validate()
    records = []
    zs = np.empty(n)
    ps = np.empty(n, dtype=np.int64)
    for i in range(n):
        rng = np.random.default_rng((seed, i))
        draw = _draw_record(spec, rng)
        zs[i] = draw.z
        ps[i] = draw.pathogen
        records.append(_record_from_draw(draw, spec, i))
    cohort = Cohort(spec.schema(), records, spec.provenance(), seed)
    return cohort, {"z": zs, "pathogen": ps}


def detection_margin_samples(spec: GenSpec, n: int, seed: int) -> np.ndarray:
    """Noisy detection margins for threshold tuning (same draws as generation)."""
    out = np.empty(n)
    for i in range(n):
        rng = np.random.default_rng((seed, i))
        draw = _draw_record(spec, rng)
        out[i] = (
            detection_margin(draw.z, draw.pathogen, draw.s_v, draw.s_n, spec)
            + spec.detection_noise_sd * draw.eps_det
        )
    return out


def tune_detection_threshold(spec: GenSpec, n: int = 60000, seed: int = 123456) -> float:
    """Empirical (1 - target)-quantile of the noisy margin distribution."""
    margins = detection_margin_samples(spec, n, seed)
    return float(np.quantile(margins, 1.0 - spec.detection_target_prevalence))


def tune_mortality_intercept(z_loading: float, target: float) -> float:
    """Solve E_z[logistic(a z + b)] = target by bisection on a trapezoid grid."""
    grid = np.linspace(-ORACLE_GRID_RANGE, ORACLE_GRID_RANGE, ORACLE_GRID_POINTS)
    w = _trapezoid_weights(grid) * _std_normal_pdf(grid)

    def prevalence(b: float) -> float:
        return float(np.sum(w / (1.0 + np.exp(-(z_loading * grid + b)))))

    lo, hi = -30.0, 30.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if prevalence(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def meropenem_prevalence(spec: GenSpec) -> float:
    """Exact carbapenem share among treated records under the imitation policy."""
    pri = spec.pathogen_prior
    eps = spec.imitation_noise
    dev = spec.deviation_class_weights
    treated = pri[:3].sum()
    total = 0.0
    for p in range(3):
        direct = (1.0 - eps) if p == 2 else 0.0
        weights = np.array([dev[c] if c != p else 0.0 for c in range(4)])
        weights = weights / weights.sum()
        total += pri[p] * (direct + eps * weights[2])
    return float(total / treated)


# ---------------------------------------------------------------------------
# Bayes oracle
# ---------------------------------------------------------------------------


def _std_normal_pdf(z: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)


def _trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    h = grid[1] - grid[0]
    w = np.full(len(grid), h)
    w[0] = w[-1] = h / 2.0
    return w


class OracleContext:
    """Precomputed, record-independent pieces of the posterior integrand."""

    def __init__(self, spec: GenSpec, grid: Optional[np.ndarray] = None):
        spec.validate()
        self.spec = spec
        self.grid = (
            grid
            if grid is not None
            else np.linspace(-ORACLE_GRID_RANGE, ORACLE_GRID_RANGE, ORACLE_GRID_POINTS)
        )
        self.weights = _trapezoid_weights(self.grid)
        self.log_prior_z = -0.5 * self.grid**2  # constants cancel in the ratio
        self.base = np.array([t.base for t in spec.vocab])
        self.beta = np.array([t.z_loading for t in spec.vocab])
        self.gamma = np.array([[t.pathogen_boost[p] for t in spec.vocab] for p in range(4)])
        # token-model normalizer logZ(z, p), shape (G, 4)
        logits = (
            self.base[None, None, :]
            + self.beta[None, None, :] * self.grid[:, None, None]
            + self.gamma[None, :, :]
        )
        m = logits.max(axis=2)
        self.log_z_token = m + np.log(np.exp(logits - m[:, :, None]).sum(axis=2))
        self.log_unit = np.log(_softmax_rows(spec.unit_logits_by_pathogen))  # (4, U)
        self.log_pathogen_prior = np.log(np.maximum(spec.pathogen_prior, 1e-300))
        self.vocab_index = spec.vocab_index()
        self.ramp = spec.time_ramp(np.arange(spec.series_length, dtype=np.float64))

    # -- likelihood over the grid for one record, shape (G, 4) --------------

    def log_likelihood(self, record: PatientRecord) -> np.ndarray:
        spec = self.spec
        g = self.grid
        ll = np.tile(self.log_prior_z[:, None], (1, 4))
        ll += self.log_pathogen_prior[None, :]

        # static numerics: quadratic in z, identical across pathogens
        a = np.array([f.z_loading for f in spec.static_numeric])
        sd = np.array([f.noise_sd for f in spec.static_numeric])
        r = record.static.numeric - np.array([f.mean for f in spec.static_numeric])
        A = -0.5 * np.sum(r * r / sd**2)
        B = np.sum(r * a / sd**2)
        C = -0.5 * np.sum(a * a / sd**2)
        ll += (A + B * g + C * g * g)[:, None]

        # admission unit: pathogen-dependent constant
        ll += self.log_unit[:, int(record.static.categorical[0])][None, :]

        # vitals: per-channel sufficient statistics, expanded per pathogen
        values, mask = record.vitals.values, record.vitals.mask.astype(bool)
        T = values.shape[0]
        if record.vitals.t0 != 0.0:
            raise GenSpecError("oracle expects t0 = 0 (admission-aligned series)")
        ramp = self.ramp[:T]
        for f in range(values.shape[1]):
            sel = mask[:, f]
            if not sel.any():
                continue
            v = values[sel, f]
            gr = spec.vital_trend_loading[f] * ramp[sel]
            r0 = v - spec.vital_baseline[f]
            s2 = spec.vital_noise_sd[f] ** 2
            n_f = len(v)
            sum_r0 = float(r0.sum())
            sum_r0sq = float(np.sum(r0 * r0))
            sum_g = float(gr.sum())
            sum_gsq = float(np.sum(gr * gr))
            sum_r0g = float(np.sum(r0 * gr))
            d = spec.vital_pathogen_offset[:, f]  # (4,)
            # sum over entries of -(r0 - d - g z)^2 / (2 s2)
            A_p = -0.5 * (sum_r0sq - 2 * d * sum_r0 + n_f * d * d) / s2
            B_p = (sum_r0g - d * sum_g) / s2
            C_f = -0.5 * sum_gsq / s2
            ll += A_p[None, :] + B_p[None, :] * g[:, None] + C_f * (g * g)[:, None]

        # notes: in-vocabulary token counts; unknown tokens (e.g. <DRUG>) are
        # uninformative by construction and skipped
        counts = np.zeros(len(spec.vocab))
        for note in record.notes:
            for tok in note.tokens:
                i = self.vocab_index.get(tok)
                if i is not None:
                    counts[i] += 1.0
        n_tok = counts.sum()
        if n_tok > 0:
            cb = float(np.dot(counts, self.base))
            cbeta = float(np.dot(counts, self.beta))
            cgam = self.gamma @ counts  # (4,)
            ll += (cb + cbeta * g)[:, None] + cgam[None, :] - n_tok * self.log_z_token

        # image: Gaussian with pathogen- and z-dependent mean
        if record.image is not None:
            sd_eff = spec.image_effective_sd()
            if sd_eff < 1e-6:
                raise GenSpecError(
                    "oracle undefined for near-deterministic image features "
                    f"(redundancy rho {spec.image_redundancy_rho} leaves "
                    f"effective noise {sd_eff})"
                )
            rho = spec.image_redundancy_rho
            m1 = rho * spec.image_redundant_loading + (1 - rho) * spec.image_z_loading
            for p in range(4):
                m0 = (1 - rho) * spec.image_pathogen_pattern[p]
                r_img = record.image - m0
                s2 = sd_eff**2
                A_i = -0.5 * float(np.sum(r_img * r_img)) / s2
                B_i = float(np.sum(r_img * m1)) / s2
                C_i = -0.5 * float(np.sum(m1 * m1)) / s2
                ll[:, p] += A_i + B_i * g + C_i * g * g
        return ll

    # -- task-conditional label probabilities, shape (G, 4, K) --------------

    def label_probs(self, record: PatientRecord, task: str) -> np.ndarray:
        spec = self.spec
        g = self.grid
        G = len(g)
        if task == "detection":
            s_v = vitals_trend_score(
                record.vitals.values, record.vitals.mask, record.vitals.t0, spec
            )
            s_n = note_severity_score(record.notes, spec)
            out = np.zeros((G, 4, 2))
            for p in range(4):
                margin = (
                    g
                    + spec.interaction_strength * s_v * s_n
                    + spec.pathogen_shift[p]
                )
                p1 = ndtr((margin - spec.detection_threshold) / spec.detection_noise_sd)
                out[:, p, 1] = p1
                out[:, p, 0] = 1.0 - p1
            return out
        if task == "mortality":
            p1 = 1.0 / (1.0 + np.exp(-(spec.mortality_z_loading * g + spec.mortality_intercept)))
            out = np.zeros((G, 4, 2))
            out[:, :, 1] = p1[:, None]
            out[:, :, 0] = 1.0 - p1[:, None]
            return out
        if task == "antibiotics":
            eps = spec.imitation_noise
            dev = spec.deviation_class_weights
            table = np.zeros((4, 4))  # pathogen x class
            for p in range(3):
                table[p, p] = 1.0 - eps
                weights = np.array([dev[c] if c != p else 0.0 for c in range(4)])
                weights = weights / weights.sum()
                table[p] += eps * weights
            # untreated pathogen NONE carries no class; normalized out below
            out = np.tile(table[None, :, :], (G, 1, 1))
            return out
        raise GenSpecError(f"unknown task {task!r}")

    def posterior(self, record: PatientRecord, task: str) -> np.ndarray:
        if record.vitals.length < self.spec.score_window:
            raise GenSpecError(
                f"record {record.id}: vitals truncated below the scoring prefix; "
                "the oracle needs the full scoring window"
            )
        ll = self.log_likelihood(record)  # (G, 4)
        probs = self.label_probs(record, task)  # (G, 4, K)
        if task == "antibiotics":
            # condition on being treated (pathogen != NONE)
            ll = ll[:, :3]
            probs = probs[:, :3, :]
        m = ll.max()
        lik = np.exp(ll - m) * self.weights[:, None]
        denom = float(lik.sum())
        numer = np.einsum("gp,gpk->k", lik, probs)
        post = numer / denom
        post = np.maximum(post, 0.0)
        return post / post.sum()


_ORACLE_CACHE: dict[str, OracleContext] = {}


def oracle_posterior(record: PatientRecord, spec: GenSpec, task: str) -> np.ndarray:
    """Exact task posterior for one guarded record (grid quadrature over z,
    summation over pathogen categories); output on the simplex."""
    key = spec.content_hash()
    ctx = _ORACLE_CACHE.get(key)
    if ctx is None:
        ctx = OracleContext(spec)
        if len(_ORACLE_CACHE) > 8:
            _ORACLE_CACHE.clear()
        _ORACLE_CACHE[key] = ctx
    return ctx.posterior(record, task)


def oracle_posteriors(cohort: Cohort, spec: GenSpec, task: str) -> np.ndarray:
    ctx = OracleContext(spec)
    return np.array([ctx.posterior(r, task) for r in cohort.records])
