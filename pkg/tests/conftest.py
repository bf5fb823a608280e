import numpy as np
import pytest

from sepsisfusion import guards, presets, synthgen
from sepsisfusion.cohort import (
    CategoricalSpec,
    Cohort,
    CohortSchema,
    Labels,
    NoteDoc,
    PatientRecord,
    StaticVector,
    VitalsSeries,
)


@pytest.fixture(scope="session")
def detection_spec():
    return presets.build_detection_default()


@pytest.fixture(scope="session")
def abx_spec():
    return presets.build_abx_default()


@pytest.fixture(scope="session")
def guard_settings_detection(detection_spec):
    return guards.GuardSettings(
        buffer_hours=4.0,
        drug_lexicon=presets.default_drug_lexicon(),
        pathogen_lexicon=presets.default_pathogen_lexicon(),
        control_window=guards.ControlWindowPolicy(
            lo=detection_spec.onset_min - 4.0,
            hi=detection_spec.onset_max - 4.0,
            seed=0,
        ),
    )


@pytest.fixture(scope="session")
def small_guarded_detection(detection_spec, guard_settings_detection):
    cohort = synthgen.generate_cohort(detection_spec, 300, 17)
    guarded, _, _ = guards.guard_cohort(cohort, "detection", guard_settings_detection)
    return guarded


def tiny_schema(image_dim: int = 4) -> CohortSchema:
    return CohortSchema(
        numeric_features=("age", "severity"),
        categorical_features=(CategoricalSpec("unit", 3),),
        vital_channels=("hr", "map"),
        image_dim=image_dim,
    )


def make_record(
    rid="r0",
    onset=None,
    mortality=0,
    abx=None,
    abx_hour=None,
    notes=(),
    T=6,
    image=None,
    schema=None,
) -> PatientRecord:
    schema = schema or tiny_schema()
    F = len(schema.vital_channels)
    rng = np.random.default_rng(abs(hash(rid)) % 2**32)
    values = rng.standard_normal((T, F))
    mask = np.ones((T, F), dtype=np.uint8)
    return PatientRecord(
        id=rid,
        static=StaticVector(
            numeric=np.array([60.0, 4.0]), categorical=np.array([1], dtype=np.int64)
        ),
        vitals=VitalsSeries(values=values, mask=mask, t0=0.0),
        notes=tuple(notes),
        image=image,
        labels=Labels(
            sepsis_onset=onset,
            mortality=mortality,
            antibiotic_class=abx,
            antibiotic_hour=abx_hour,
        ),
    )


def make_cohort(records, schema=None) -> Cohort:
    return Cohort(schema=schema or tiny_schema(), records=list(records), provenance="test", seed=0)
