"""Context-aware expert stacking: out-of-fold meta features, a GBDT gate
conditioned on the static context vector, and graceful degradation under
missing modalities.

Meta-feature layout, in order: one probability block (K values) per
expert, one missing flag (0/1) per expert, then the context features.
A missing expert's block is filled with the uniform distribution and its
flag set, so the gate can learn to route around absence. Meta-training
rows are produced strictly out-of-fold: the experts scoring a record never
saw it during training.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .cohort import Cohort, PatientRecord, task_labels
from .experts import (
    ExpertError,
    ExpertModel,
    TemporalExpertParams,
    TextExpertParams,
    VisionExpertParams,
    expert_predict,
    expert_predict_cohort,
    fit_historian,
    fit_temporal,
    fit_text,
    fit_vision,
    static_feature_schema,
    static_features,
)
from .gbdt import GBDTFeature, GBDTModel, GBDTParams, fit_gbdt
from .nnet import softmax

EXPERT_ORDER = ("HISTORIAN", "MONITOR", "READER", "VISIONARY")


class EnsembleError(ValueError):
    pass


@dataclass(frozen=True)
class MetaLayout:
    experts: tuple[str, ...]
    n_classes: int
    context_names: tuple[str, ...]

    @property
    def width(self) -> int:
        E = len(self.experts)
        return E * self.n_classes + E + len(self.context_names)

    def feature_names(self) -> list[str]:
        names = []
        for e in self.experts:
            names += [f"{e.lower()}_p{k}" for k in range(self.n_classes)]
        names += [f"{e.lower()}_missing" for e in self.experts]
        names += list(self.context_names)
        return names

    def to_dict(self) -> dict:
        return {
            "experts": list(self.experts),
            "n_classes": self.n_classes,
            "context_names": list(self.context_names),
        }

    @staticmethod
    def from_dict(d: dict) -> "MetaLayout":
        return MetaLayout(
            experts=tuple(d["experts"]),
            n_classes=int(d["n_classes"]),
            context_names=tuple(d["context_names"]),
        )


def build_meta_features(
    expert_probs: dict[str, Optional[np.ndarray]],
    context: np.ndarray,
    layout: MetaLayout,
) -> np.ndarray:
    """One meta row: expert blocks in layout order, missing flags, context."""
    K = layout.n_classes
    blocks = []
    flags = []
    for name in layout.experts:
        p = expert_probs.get(name)
        if p is None:
            blocks.append(np.full(K, 1.0 / K))
            flags.append(1.0)
        else:
            p = np.asarray(p, dtype=np.float64)
            if p.shape != (K,):
                raise EnsembleError(f"expert {name}: probability block of wrong shape")
            if abs(p.sum() - 1.0) > 1e-6 or np.any(p < -1e-9):
                raise EnsembleError(f"expert {name}: block off the simplex")
            blocks.append(p)
            flags.append(0.0)
    context = np.asarray(context, dtype=np.float64)
    if context.shape != (len(layout.context_names),):
        raise EnsembleError("context width does not match layout")
    return np.concatenate(blocks + [np.asarray(flags), context])


def gate_feature_schema(layout: MetaLayout, cohort_schema) -> tuple[GBDTFeature, ...]:
    feats = []
    for e in layout.experts:
        feats += [GBDTFeature(f"{e.lower()}_p{k}") for k in range(layout.n_classes)]
    feats += [GBDTFeature(f"{e.lower()}_missing") for e in layout.experts]
    cat_by_name = {c.name: c.cardinality for c in cohort_schema.categorical_features}
    for name in layout.context_names:
        if name in cat_by_name:
            feats.append(GBDTFeature(name, "categorical", cat_by_name[name]))
        else:
            feats.append(GBDTFeature(name))
    return tuple(feats)


# ---------------------------------------------------------------------------
# expert configuration / training dispatch
# ---------------------------------------------------------------------------


@dataclass
class EnsembleConfig:
    experts: tuple[str, ...] = ("HISTORIAN", "MONITOR", "READER")
    historian: GBDTParams = field(default_factory=lambda: GBDTParams(rounds=120, max_depth=3))
    monitor: TemporalExpertParams = field(default_factory=TemporalExpertParams)
    reader: TextExpertParams = field(default_factory=TextExpertParams)
    visionary: VisionExpertParams = field(default_factory=VisionExpertParams)
    gate: GBDTParams = field(default_factory=lambda: GBDTParams(rounds=150, max_depth=3))
    folds: int = 5
    seed: int = 0

    def validate(self):
        if self.folds < 2:
            raise EnsembleError("folds must be >= 2")
        unknown = set(self.experts) - set(EXPERT_ORDER)
        if unknown:
            raise EnsembleError(f"unknown experts {sorted(unknown)}")
        if not self.experts:
            raise EnsembleError("at least one expert required")


def expert_available(name: str, record: PatientRecord) -> bool:
    if name == "VISIONARY":
        return record.image is not None
    if name == "READER":
        return len(record.notes) > 0
    return True


def _with_seed(params, seed: int):
    return replace(params, seed=seed)


def _fit_one_expert(
    name: str, cohort: Cohort, y: np.ndarray, config: EnsembleConfig, K: int, seed: int
) -> ExpertModel:
    if name == "HISTORIAN":
        X = np.stack([static_features(r) for r in cohort.records])
        feats = static_feature_schema(cohort.schema)
        return fit_historian(X, y, _with_seed(config.historian, seed), feats, n_classes=K)
    if name == "MONITOR":
        return fit_temporal(
            [r.vitals for r in cohort.records], y, _with_seed(config.monitor, seed), n_classes=K
        )
    if name == "READER":
        return fit_text(
            [r.notes for r in cohort.records], y, _with_seed(config.reader, seed), n_classes=K
        )
    if name == "VISIONARY":
        keep = [i for i, r in enumerate(cohort.records) if r.image is not None]
        if not keep:
            raise ExpertError("no records with image features to train the Visionary")
        feats = np.stack([cohort.records[i].image for i in keep])
        return fit_vision(feats, y[keep], _with_seed(config.visionary, seed), n_classes=K)
    raise EnsembleError(f"unknown expert {name!r}")


def _expert_probs_for_cohort(
    model: ExpertModel, cohort: Cohort
) -> np.ndarray:
    """(n, K) probabilities with NaN rows where the modality is absent."""
    n = len(cohort)
    out = np.full((n, model.n_classes), np.nan)
    avail = [expert_available(model.kind, r) for r in cohort.records]
    idx = [i for i, a in enumerate(avail) if a]
    if not idx:
        return out
    sub = cohort.subset([cohort.records[i] for i in idx])
    probs = expert_predict_cohort(model, sub)
    for row, i in enumerate(idx):
        out[i] = probs[row]
    return out


# ---------------------------------------------------------------------------
# out-of-fold stacking
# ---------------------------------------------------------------------------


@dataclass
class MetaDataset:
    X: np.ndarray  # (n, width)
    y: np.ndarray  # (n,)
    fold_of: np.ndarray  # (n,)
    layout: MetaLayout
    oof_probs: dict[str, np.ndarray]  # per expert, (n, K) with NaN where missing
    record_ids: list[str]


def stratified_folds(y: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Deterministic stratified fold ids in [0, k)."""
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(y), dtype=np.int64)
    cursor = 0
    for cls in sorted(set(int(c) for c in y)):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        for j, i in enumerate(idx):
            fold_of[i] = (cursor + j) % k
        cursor += len(idx)
    return fold_of


def _context_matrix(cohort: Cohort, layout: MetaLayout) -> np.ndarray:
    return np.stack([static_features(r) for r in cohort.records])


def _meta_rows(
    cohort: Cohort,
    probs_by_expert: dict[str, np.ndarray],
    layout: MetaLayout,
) -> np.ndarray:
    ctx = _context_matrix(cohort, layout)
    X = np.empty((len(cohort), layout.width))
    for i in range(len(cohort)):
        per = {}
        for name in layout.experts:
            row = probs_by_expert[name][i]
            per[name] = None if np.isnan(row).any() else row
        X[i] = build_meta_features(per, ctx[i], layout)
    return X


def default_layout(cohort: Cohort, experts: Sequence[str], K: int) -> MetaLayout:
    context_names = tuple(cohort.schema.numeric_features) + tuple(
        c.name for c in cohort.schema.categorical_features
    )
    return MetaLayout(experts=tuple(experts), n_classes=K, context_names=context_names)


def oof_stack(
    cohort: Cohort,
    config: EnsembleConfig,
    task: str,
    n_classes: Optional[int] = None,
) -> tuple[MetaDataset, dict[str, ExpertModel]]:
    """k-fold out-of-fold expert probabilities plus deployment experts
    retrained on all the data."""
    config.validate()
    y = task_labels(cohort, task)
    K = n_classes if n_classes is not None else int(y.max()) + 1
    fold_of = stratified_folds(y, config.folds, config.seed)
    for f in range(config.folds):
        train_classes = set(int(c) for c in y[fold_of != f])
        if len(train_classes) < 2:
            raise EnsembleError(
                f"fold {f}: training portion has a single class; reduce folds"
            )
    layout = default_layout(cohort, config.experts, K)
    oof: dict[str, np.ndarray] = {
        name: np.full((len(cohort), K), np.nan) for name in config.experts
    }
    for f in range(config.folds):
        train_idx = np.flatnonzero(fold_of != f)
        test_idx = np.flatnonzero(fold_of == f)
        sub_train = cohort.subset([cohort.records[i] for i in train_idx])
        sub_test = cohort.subset([cohort.records[i] for i in test_idx])
        for name in config.experts:
            model = _fit_one_expert(
                name, sub_train, y[train_idx], config, K, seed=config.seed * 1000 + f
            )
            probs = _expert_probs_for_cohort(model, sub_test)
            oof[name][test_idx] = probs
    final = {
        name: _fit_one_expert(name, cohort, y, config, K, seed=config.seed * 1000 + 999)
        for name in config.experts
    }
    X = _meta_rows(cohort, oof, layout)
    meta = MetaDataset(
        X=X,
        y=y,
        fold_of=fold_of,
        layout=layout,
        oof_probs=oof,
        record_ids=[r.id for r in cohort.records],
    )
    return meta, final


def fit_gate(meta: MetaDataset, params: GBDTParams, cohort_schema) -> GBDTModel:
    feats = gate_feature_schema(meta.layout, cohort_schema)
    return fit_gbdt(meta.X, meta.y, params, features=feats, n_classes=meta.layout.n_classes)


# ---------------------------------------------------------------------------
# the deployed ensemble
# ---------------------------------------------------------------------------


@dataclass
class EnsembleModel:
    experts: dict[str, ExpertModel]
    gate: GBDTModel
    layout: MetaLayout
    folds: int
    class_prior: np.ndarray

    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        for name, model in self.experts.items():
            model.save(os.path.join(directory, f"expert_{name.lower()}.json"))
        self.gate.save(os.path.join(directory, "gate.json"))
        manifest = {
            "format_version": 1,
            "layout": self.layout.to_dict(),
            "folds": self.folds,
            "class_prior": self.class_prior.tolist(),
            "experts": sorted(self.experts),
        }
        with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)

    @staticmethod
    def load(directory) -> "EnsembleModel":
        with open(os.path.join(directory, "manifest.json"), "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        experts = {
            name: ExpertModel.load(os.path.join(directory, f"expert_{name.lower()}.json"))
            for name in manifest["experts"]
        }
        return EnsembleModel(
            experts=experts,
            gate=GBDTModel.load(os.path.join(directory, "gate.json")),
            layout=MetaLayout.from_dict(manifest["layout"]),
            folds=int(manifest["folds"]),
            class_prior=np.asarray(manifest["class_prior"], dtype=np.float64),
        )


def train_ensemble(
    cohort: Cohort,
    config: EnsembleConfig,
    task: str,
    n_classes: Optional[int] = None,
) -> tuple[EnsembleModel, MetaDataset]:
    meta, final = oof_stack(cohort, config, task, n_classes)
    gate = fit_gate(meta, config.gate, cohort.schema)
    y = meta.y
    K = meta.layout.n_classes
    prior = np.array([(y == c).mean() for c in range(K)])
    model = EnsembleModel(
        experts=final, gate=gate, layout=meta.layout, folds=config.folds, class_prior=prior
    )
    return model, meta


def ensemble_predict(
    model: EnsembleModel, record: PatientRecord, force_missing: Sequence[str] = ()
) -> np.ndarray:
    """Run available experts, assemble meta features, apply the gate.

    With every expert missing the stored class prior is returned.
    `force_missing` masks experts regardless of modality presence (used by
    the degradation harness).
    """
    per: dict[str, Optional[np.ndarray]] = {}
    any_present = False
    for name in model.layout.experts:
        if name in force_missing or not expert_available(name, record):
            per[name] = None
        else:
            per[name] = expert_predict(model.experts[name], record)
            any_present = True
    if not any_present:
        return model.class_prior.copy()
    ctx = static_features(record)
    row = build_meta_features(per, ctx, model.layout)
    return model.gate.predict_proba(row[None, :])[0]


def ensemble_predict_cohort(
    model: EnsembleModel, cohort: Cohort, force_missing: Sequence[str] = ()
) -> np.ndarray:
    probs_by_expert = {}
    for name in model.layout.experts:
        if name in force_missing:
            probs_by_expert[name] = np.full((len(cohort), model.layout.n_classes), np.nan)
        else:
            probs_by_expert[name] = _expert_probs_for_cohort(model.experts[name], cohort)
    X = _meta_rows(cohort, probs_by_expert, model.layout)
    out = model.gate.predict_proba(X)
    all_missing = np.ones(len(cohort), dtype=bool)
    for name in model.layout.experts:
        all_missing &= np.isnan(probs_by_expert[name]).any(axis=1)
    out[all_missing] = model.class_prior
    return out


# ---------------------------------------------------------------------------
# late-concat baseline
# ---------------------------------------------------------------------------


@dataclass
class LateConcatModel:
    experts: dict[str, ExpertModel]
    W: np.ndarray
    b: np.ndarray
    layout: MetaLayout  # uses expert order and K; context/flags unused


def _concat_blocks(probs_by_expert: dict[str, np.ndarray], layout: MetaLayout) -> np.ndarray:
    K = layout.n_classes
    cols = []
    for name in layout.experts:
        P = probs_by_expert[name].copy()
        nanrows = np.isnan(P).any(axis=1)
        P[nanrows] = 1.0 / K
        cols.append(P)
    return np.concatenate(cols, axis=1)


def late_concat_baseline(
    cohort: Cohort,
    config: EnsembleConfig,
    task: str,
    n_classes: Optional[int] = None,
    meta: Optional[MetaDataset] = None,
    final: Optional[dict[str, ExpertModel]] = None,
    epochs: int = 400,
    step_size: float = 0.5,
    l2: float = 1e-4,
) -> LateConcatModel:
    """Multinomial logistic fusion of the concatenated OOF expert blocks,
    with no context vector and no missing flags (uniform fill only)."""
    from .experts import _logistic_loss_and_grads

    if meta is None or final is None:
        meta, final = oof_stack(cohort, config, task, n_classes)
    X = _concat_blocks(meta.oof_probs, meta.layout)
    y = meta.y
    K = meta.layout.n_classes
    n = len(y)
    Y = np.zeros((n, K))
    Y[np.arange(n), y] = 1.0
    W = np.zeros((X.shape[1], K))
    b = np.zeros(K)
    for _ in range(epochs):
        loss, gW, gb = _logistic_loss_and_grads(X, Y, W, b, l2)
        gnorm = float(np.sqrt(np.sum(gW * gW) + np.sum(gb * gb)))
        if gnorm < 1e-8:
            break
        W -= step_size * gW
        b -= step_size * gb
    return LateConcatModel(experts=final, W=W, b=b, layout=meta.layout)


def late_concat_predict_cohort(model: LateConcatModel, cohort: Cohort) -> np.ndarray:
    probs_by_expert = {
        name: _expert_probs_for_cohort(model.experts[name], cohort)
        for name in model.layout.experts
    }
    X = _concat_blocks(probs_by_expert, model.layout)
    return softmax(X @ model.W + model.b, axis=1)
