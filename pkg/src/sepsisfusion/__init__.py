"""Multimodal fusion benchmarks for synthetic sepsis cohorts.

Compares context-aware expert stacking (a GBDT gate over unimodal expert
probabilities) against end-to-end gated-attention deep fusion, on
synthetic EHR-like cohorts whose exact Bayes posterior is computable.
"""

__version__ = "0.1.0"

from .cohort import (  # noqa: F401
    ANTIBIOTIC_CLASSES,
    Cohort,
    CohortError,
    CohortSchema,
    Labels,
    NoteDoc,
    PatientRecord,
    StaticVector,
    VitalsSeries,
    load_cohort,
    save_cohort,
    split_cohort,
)
from .synthgen import (  # noqa: F401
    GenSpec,
    GenSpecError,
    generate_cohort,
    oracle_posterior,
    oracle_posteriors,
)
from .guards import (  # noqa: F401
    GuardAudit,
    GuardError,
    GuardSettings,
    Lexicon,
    apply_lexical_mask,
    apply_temporal_firewall,
    enforce_observation_window,
    guard_cohort,
)
from .gbdt import (  # noqa: F401
    GBDTModel,
    GBDTParams,
    exact_best_split,
    fit_gbdt,
    gbdt_gain_importance,
    gbdt_predict,
)
from .metrics import (  # noqa: F401
    auprc,
    calibrate_threshold,
    classification_report,
    macro_ovr_auc,
    roc_auc,
    roc_points,
)
from .experts import (  # noqa: F401
    ExpertModel,
    TemporalExpertParams,
    TextExpertParams,
    VisionExpertParams,
    expert_predict,
    fit_historian,
    fit_temporal,
    fit_text,
    fit_vision,
)
from .fusionformer import (  # noqa: F401
    FusionFormerModel,
    FusionFormerParams,
    fusionformer_forward,
    train_fusionformer,
)
from .ensemble import (  # noqa: F401
    EnsembleConfig,
    EnsembleModel,
    MetaLayout,
    build_meta_features,
    ensemble_predict,
    fit_gate,
    late_concat_baseline,
    oof_stack,
)
