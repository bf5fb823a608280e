"""Experiment harness: ablations over fusion variants, sample-size sweeps,
and the threshold-calibration study, with deterministic file emission.

Within one seed every variant consumes the same guarded splits, and the
expert pool (out-of-fold stack plus deployment experts) is trained once
and shared by every stacking variant, so comparisons are paired. All
randomness flows from per-seed derived seeds; the --threads setting only
controls how many seeds run concurrently and never affects results.

Wall-clock timings are inherently nondeterministic and are therefore
written to a separate `timings.txt`, never into report files: a config
plus the tool version pins every other output byte.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import svgplot
from .cohort import Cohort, load_cohort, split_cohort, task_class_names, task_labels
from .ensemble import (
    EnsembleConfig,
    EnsembleModel,
    MetaDataset,
    MetaLayout,
    _concat_blocks,
    _meta_rows,
    default_layout,
    ensemble_predict_cohort,
    fit_gate,
    late_concat_baseline,
    late_concat_predict_cohort,
    oof_stack,
)
from .experts import (
    TemporalExpertParams,
    TextExpertParams,
    VisionExpertParams,
    expert_predict_cohort,
)
from .fusionformer import FusionFormerParams, predict_cohort as ff_predict, train_fusionformer
from .gbdt import GBDTParams
from .guards import ControlWindowPolicy, GuardSettings, Lexicon, guard_cohort
from .metrics import (
    auprc,
    calibrate_threshold,
    classification_report,
    confusion_matrix,
    macro_ovr_auc,
    macro_ovr_auprc,
    roc_auc,
    roc_points,
    sens_spec_at,
)
from .presets import default_drug_lexicon, default_pathogen_lexicon, load_genspec
from .synthgen import GenSpec, generate_cohort

VARIANTS = (
    "STATIC_ONLY",
    "TEMPORAL_ONLY",
    "NLP_ONLY",
    "LATE_CONCAT",
    "MOE_TRIMODAL",
    "MOE_QUADMODAL",
    "FUSIONFORMER",
)

_UNIMODAL_EXPERT = {
    "STATIC_ONLY": "HISTORIAN",
    "TEMPORAL_ONLY": "MONITOR",
    "NLP_ONLY": "READER",
}

DEFAULT_BUFFER_HOURS = {"detection": 4.0, "mortality": 0.0, "antibiotics": 0.0}


class ConfigError(ValueError):
    pass


class HarnessError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _desk_scale_defaults() -> dict:
    """Model parameter presets sized for laptop runs (documented defaults)."""
    return {
        "historian": GBDTParams(rounds=120, learning_rate=0.1, max_depth=3,
                                min_samples_leaf=10),
        "monitor": TemporalExpertParams(conv_filters=8, hidden=8, cell="gru",
                                        step_size=0.5, batch_size=512, epochs=30,
                                        patience=6),
        "reader": TextExpertParams(hash_dim=2**15, epochs=200, step_size=0.5),
        "visionary": VisionExpertParams(hidden=16, epochs=150, patience=10,
                                        step_size=0.2),
        "gate": GBDTParams(rounds=150, learning_rate=0.08, max_depth=3,
                           min_samples_leaf=20),
        "fusionformer": FusionFormerParams(gru_hidden=16, note_embed_dim=16,
                                           attn_dim=16, hash_dim=2**15,
                                           step_size=0.3, batch_size=128,
                                           epochs=60, patience=10),
    }


@dataclass
class ExperimentConfig:
    task: str
    variants: tuple[str, ...]
    genspec: Optional[str] = None  # preset name or path
    cohort_path: Optional[str] = None
    n: int = 2000
    split_fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    buffer_hours: Optional[float] = None  # default per task
    drug_lexicon_path: Optional[str] = None
    pathogen_lexicon_path: Optional[str] = None
    genspec_overrides: dict = field(default_factory=dict)
    model_overrides: dict = field(default_factory=dict)
    outdir: str = "out"
    threads: int = 1

    def validate(self) -> None:
        if self.task not in ("detection", "mortality", "antibiotics"):
            raise ConfigError(f"unknown task {self.task!r}")
        if not self.variants:
            raise ConfigError("at least one variant required")
        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigError(f"unknown variant {v!r}; expected one of {VARIANTS}")
        if not self.seeds:
            raise ConfigError("at least one seed required")
        if self.genspec is None and self.cohort_path is None:
            raise ConfigError("config needs either a genspec or a cohort path")
        if len(self.split_fractions) != 3 or any(f <= 0 for f in self.split_fractions):
            raise ConfigError("split_fractions must be three positive numbers")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ConfigError("split_fractions must sum to 1")
        if self.n < 0:
            raise ConfigError("n must be >= 0")

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(ExperimentConfig)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        cfg = ExperimentConfig(
            task=d.get("task", ""),
            variants=tuple(d.get("variants", ())),
            genspec=d.get("genspec"),
            cohort_path=d.get("cohort_path"),
            n=int(d.get("n", 2000)),
            split_fractions=tuple(d.get("split_fractions", (0.7, 0.15, 0.15))),
            seeds=tuple(int(s) for s in d.get("seeds", (1, 2, 3, 4, 5))),
            buffer_hours=d.get("buffer_hours"),
            drug_lexicon_path=d.get("drug_lexicon_path"),
            pathogen_lexicon_path=d.get("pathogen_lexicon_path"),
            genspec_overrides=d.get("genspec_overrides", {}),
            model_overrides=d.get("model_overrides", {}),
            outdir=d.get("outdir", "out"),
            threads=int(d.get("threads", 1)),
        )
        cfg.validate()
        return cfg

    @staticmethod
    def from_json_file(path) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return ExperimentConfig.from_dict(d)

    def buffer(self) -> float:
        if self.buffer_hours is not None:
            return float(self.buffer_hours)
        return DEFAULT_BUFFER_HOURS[self.task]


def _apply_genspec_overrides(spec: GenSpec, overrides: dict) -> GenSpec:
    if not overrides:
        return spec
    d = spec.to_dict()
    for key, value in overrides.items():
        if key not in d:
            raise ConfigError(f"genspec override targets unknown field {key!r}")
        d[key] = value
    spec2 = GenSpec.from_dict(d)
    spec2.validate()
    return spec2


def _model_params(config: ExperimentConfig) -> dict:
    params = _desk_scale_defaults()
    for name, override in config.model_overrides.items():
        if name not in params:
            raise ConfigError(f"model override targets unknown model {name!r}")
        try:
            params[name] = replace(params[name], **override)
        except TypeError as exc:
            raise ConfigError(f"bad override for {name}: {exc}") from exc
    return params


def resolve_genspec(config: ExperimentConfig) -> Optional[GenSpec]:
    if config.genspec is None:
        return None
    spec = load_genspec(config.genspec)
    return _apply_genspec_overrides(spec, config.genspec_overrides)


def guard_settings_for(
    config: ExperimentConfig, spec: Optional[GenSpec], seed: int
) -> GuardSettings:
    drug = (
        Lexicon.from_file(config.drug_lexicon_path, "drug")
        if config.drug_lexicon_path
        else default_drug_lexicon()
    )
    pathogen = (
        Lexicon.from_file(config.pathogen_lexicon_path, "pathogen")
        if config.pathogen_lexicon_path
        else default_pathogen_lexicon()
    )
    buffer = config.buffer()
    if spec is not None:
        lo = spec.onset_min - buffer
        hi = spec.onset_max - buffer
    else:
        lo, hi = 32.0 - buffer, 44.0 - buffer
    return GuardSettings(
        buffer_hours=buffer,
        drug_lexicon=drug,
        pathogen_lexicon=pathogen,
        control_window=ControlWindowPolicy(lo=lo, hi=hi, seed=seed),
    )


# ---------------------------------------------------------------------------
# per-seed evaluation
# ---------------------------------------------------------------------------


@dataclass
class CellResult:
    variant: str
    seed: int
    train_auc: float
    val_auc: float
    test_auc: float
    test_macro_ovr_auc: float
    test_auprc: float
    overfit_gap: float
    n_train: int
    n_val: int
    n_test: int
    wall_time_s: float
    error: str = ""
    # plot payloads (not serialized into the deterministic report)
    test_scores: Optional[np.ndarray] = None
    test_labels: Optional[np.ndarray] = None
    curves_csv: Optional[str] = None


def _auc_metrics(probs: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """(primary auc, macro-OVR auc, auprc) for binary or multi-class."""
    K = probs.shape[1]
    if K == 2:
        a = roc_auc(probs[:, 1], (y == 1).astype(float))
        return a, a, auprc(probs[:, 1], (y == 1).astype(float))
    m = macro_ovr_auc(probs, y)
    return m, m, macro_ovr_auprc(probs, y)


def _needed_experts(variants: Sequence[str]) -> tuple[str, ...]:
    names: list[str] = []
    for v in variants:
        if v in _UNIMODAL_EXPERT:
            names.append(_UNIMODAL_EXPERT[v])
        elif v in ("LATE_CONCAT", "MOE_TRIMODAL"):
            names += ["HISTORIAN", "MONITOR", "READER"]
        elif v == "MOE_QUADMODAL":
            names += ["HISTORIAN", "MONITOR", "READER", "VISIONARY"]
    ordered = [e for e in ("HISTORIAN", "MONITOR", "READER", "VISIONARY") if e in names]
    return tuple(ordered)


@dataclass
class _SeedContext:
    seed: int
    train: Cohort
    val: Cohort
    test: Cohort
    y_train: np.ndarray
    y_val: np.ndarray
    y_test: np.ndarray
    n_classes: int
    meta: Optional[MetaDataset] = None
    final_experts: Optional[dict] = None
    ens_cfg: Optional[EnsembleConfig] = None


def _prepare_seed(
    config: ExperimentConfig, spec: Optional[GenSpec], seed: int
) -> _SeedContext:
    if spec is not None:
        cohort = generate_cohort(spec, config.n, seed)
    else:
        cohort = load_cohort(config.cohort_path)
    # the task cohort is the labeled subpopulation; records outside it have
    # no guard anchor (e.g. untreated admissions lack an administration hour)
    if config.task == "antibiotics":
        cohort = cohort.subset(
            [r for r in cohort.records if r.labels.antibiotic_class is not None]
        )
    elif config.task == "mortality":
        cohort = cohort.subset(
            [r for r in cohort.records if r.labels.mortality is not None]
        )
    settings = guard_settings_for(config, spec, seed)
    guarded, _, _ = guard_cohort(cohort, config.task, settings)
    train, val, test = split_cohort(guarded, config.split_fractions, config.task, seed)
    K = len(task_class_names(config.task))
    return _SeedContext(
        seed=seed,
        train=train,
        val=val,
        test=test,
        y_train=task_labels(train, config.task),
        y_val=task_labels(val, config.task),
        y_test=task_labels(test, config.task),
        n_classes=K,
    )


def _ensure_pool(ctx: _SeedContext, config: ExperimentConfig, params: dict) -> None:
    """Train the shared OOF stack + deployment experts once per seed."""
    if ctx.meta is not None:
        return
    experts = _needed_experts(config.variants)
    stack_experts = tuple(e for e in experts if e in ("HISTORIAN", "MONITOR", "READER", "VISIONARY"))
    ens_cfg = EnsembleConfig(
        experts=stack_experts,
        historian=params["historian"],
        monitor=params["monitor"],
        reader=params["reader"],
        visionary=params["visionary"],
        gate=params["gate"],
        folds=5,
        seed=ctx.seed,
    )
    ctx.meta, ctx.final_experts = oof_stack(
        ctx.train, ens_cfg, config.task, n_classes=ctx.n_classes
    )
    ctx.ens_cfg = ens_cfg


def _moe_cell(
    ctx: _SeedContext, config: ExperimentConfig, params: dict, expert_set: tuple[str, ...]
):
    layout = default_layout(ctx.train, expert_set, ctx.n_classes)
    probs_sub = {e: ctx.meta.oof_probs[e] for e in expert_set}
    X = _meta_rows(ctx.train, probs_sub, layout)
    gate = fit_gate(
        dataclasses.replace(ctx.meta, X=X, layout=layout), params["gate"], ctx.train.schema
    )
    prior = np.array([(ctx.y_train == c).mean() for c in range(ctx.n_classes)])
    model = EnsembleModel(
        experts={e: ctx.final_experts[e] for e in expert_set},
        gate=gate,
        layout=layout,
        folds=5,
        class_prior=prior,
    )
    train_probs = gate.predict_proba(X)  # OOF expert blocks, honest train view
    val_probs = ensemble_predict_cohort(model, ctx.val)
    test_probs = ensemble_predict_cohort(model, ctx.test)
    return model, train_probs, val_probs, test_probs


def _run_cell(
    ctx: _SeedContext, config: ExperimentConfig, params: dict, variant: str
) -> CellResult:
    t0 = time.time()
    curves_csv = None
    if variant in _UNIMODAL_EXPERT:
        _ensure_pool(ctx, config, params)
        name = _UNIMODAL_EXPERT[variant]
        model = ctx.final_experts[name]
        train_probs = _subset_probs(model, ctx.train, ctx.n_classes)
        val_probs = _subset_probs(model, ctx.val, ctx.n_classes)
        test_probs = _subset_probs(model, ctx.test, ctx.n_classes)
    elif variant in ("MOE_TRIMODAL", "MOE_QUADMODAL"):
        _ensure_pool(ctx, config, params)
        expert_set = (
            ("HISTORIAN", "MONITOR", "READER")
            if variant == "MOE_TRIMODAL"
            else ("HISTORIAN", "MONITOR", "READER", "VISIONARY")
        )
        missing = [e for e in expert_set if e not in ctx.meta.oof_probs]
        if missing:
            raise HarnessError(f"expert pool lacks {missing} for {variant}")
        _, train_probs, val_probs, test_probs = _moe_cell(ctx, config, params, expert_set)
    elif variant == "LATE_CONCAT":
        _ensure_pool(ctx, config, params)
        lc = late_concat_baseline(
            ctx.train, ctx.ens_cfg, config.task, n_classes=ctx.n_classes,
            meta=_tri_meta(ctx), final={e: ctx.final_experts[e] for e in ("HISTORIAN", "MONITOR", "READER")},
        )
        from .nnet import softmax as _softmax

        Xtr = _concat_blocks(_tri_meta(ctx).oof_probs, lc.layout)
        train_probs = _softmax(Xtr @ lc.W + lc.b, axis=1)
        val_probs = late_concat_predict_cohort(lc, ctx.val)
        test_probs = late_concat_predict_cohort(lc, ctx.test)
    elif variant == "FUSIONFORMER":
        ff_params = replace(params["fusionformer"], seed=ctx.seed)
        model, curves = train_fusionformer(
            ctx.train, ff_params, config.task, val_cohort=ctx.val, n_classes=ctx.n_classes
        )
        train_probs = ff_predict(model, ctx.train)
        val_probs = ff_predict(model, ctx.val)
        test_probs = ff_predict(model, ctx.test)
        curves_csv = curves.to_csv()
    else:
        raise HarnessError(f"unknown variant {variant}")

    train_auc, _, _ = _auc_metrics(train_probs, ctx.y_train)
    val_auc, _, _ = _auc_metrics(val_probs, ctx.y_val)
    test_auc, test_movr, test_ap = _auc_metrics(test_probs, ctx.y_test)
    scores = test_probs[:, 1] if ctx.n_classes == 2 else None
    return CellResult(
        variant=variant,
        seed=ctx.seed,
        train_auc=train_auc,
        val_auc=val_auc,
        test_auc=test_auc,
        test_macro_ovr_auc=test_movr,
        test_auprc=test_ap,
        overfit_gap=train_auc - val_auc,
        n_train=len(ctx.train),
        n_val=len(ctx.val),
        n_test=len(ctx.test),
        wall_time_s=time.time() - t0,
        test_scores=scores,
        test_labels=ctx.y_test if ctx.n_classes == 2 else None,
        curves_csv=curves_csv,
    )


def _tri_meta(ctx: _SeedContext) -> MetaDataset:
    tri = ("HISTORIAN", "MONITOR", "READER")
    layout = MetaLayout(tri, ctx.meta.layout.n_classes, ctx.meta.layout.context_names)
    probs = {e: ctx.meta.oof_probs[e] for e in tri}
    return dataclasses.replace(ctx.meta, layout=layout, oof_probs=probs)


def _subset_probs(model, cohort: Cohort, K: int) -> np.ndarray:
    from .ensemble import _expert_probs_for_cohort

    probs = _expert_probs_for_cohort(model, cohort)
    nanrows = np.isnan(probs).any(axis=1)
    probs[nanrows] = model.class_prior
    return probs


# ---------------------------------------------------------------------------
# ablation driver
# ---------------------------------------------------------------------------


@dataclass
class AblationReport:
    config: ExperimentConfig
    rows: list[CellResult]

    def aggregates(self) -> list[dict]:
        out = []
        for variant in self.config.variants:
            cells = [r for r in self.rows if r.variant == variant and not r.error]
            if not cells:
                out.append({"variant": variant, "n_seeds": 0})
                continue
            agg = {"variant": variant, "n_seeds": len(cells)}
            for metric in (
                "train_auc", "val_auc", "test_auc", "test_macro_ovr_auc",
                "test_auprc", "overfit_gap",
            ):
                vals = np.array([getattr(r, metric) for r in cells])
                agg[f"{metric}_mean"] = float(vals.mean())
                agg[f"{metric}_std"] = float(vals.std(ddof=0))
            out.append(agg)
        return out

    def to_dict(self) -> dict:
        def clean(x: float):
            return None if isinstance(x, float) and np.isnan(x) else x

        return {
            "task": self.config.task,
            "variants": list(self.config.variants),
            "seeds": list(self.config.seeds),
            "rows": [
                {
                    "variant": r.variant,
                    "seed": r.seed,
                    "train_auc": clean(r.train_auc),
                    "val_auc": clean(r.val_auc),
                    "test_auc": clean(r.test_auc),
                    "test_macro_ovr_auc": clean(r.test_macro_ovr_auc),
                    "test_auprc": clean(r.test_auprc),
                    "overfit_gap": clean(r.overfit_gap),
                    "n_train": r.n_train,
                    "n_val": r.n_val,
                    "n_test": r.n_test,
                    "error": r.error,
                }
                for r in self.rows
            ],
            "aggregates": self.aggregates(),
        }


def run_ablation(config: ExperimentConfig) -> AblationReport:
    """Generate/load -> guard -> split -> train -> evaluate, per variant and
    seed; cell errors are recorded and remaining cells still run."""
    config.validate()
    spec = resolve_genspec(config)
    params = _model_params(config)

    def error_cell(variant: str, seed: int, exc: Exception) -> CellResult:
        return CellResult(
            variant=variant, seed=seed, train_auc=np.nan, val_auc=np.nan,
            test_auc=np.nan, test_macro_ovr_auc=np.nan, test_auprc=np.nan,
            overfit_gap=np.nan, n_train=0, n_val=0, n_test=0,
            wall_time_s=0.0, error=f"{type(exc).__name__}: {exc}",
        )

    def run_seed(seed: int) -> list[CellResult]:
        try:
            ctx = _prepare_seed(config, spec, seed)
        except Exception as exc:  # noqa: BLE001 - seed-stage isolation
            return [error_cell(v, seed, exc) for v in config.variants]
        results = []
        for variant in config.variants:
            try:
                results.append(_run_cell(ctx, config, params, variant))
            except Exception as exc:  # noqa: BLE001 - cell isolation by design
                results.append(error_cell(variant, seed, exc))
        return results

    rows: list[CellResult] = []
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            futures = [pool.submit(run_seed, s) for s in config.seeds]
            for fut in futures:  # submission order == seed order
                rows.extend(fut.result())
    else:
        for seed in config.seeds:
            rows.extend(run_seed(seed))
    order = {v: i for i, v in enumerate(config.variants)}
    rows.sort(key=lambda r: (order[r.variant], r.seed))
    return AblationReport(config=config, rows=rows)


# ---------------------------------------------------------------------------
# sample-size sweep
# ---------------------------------------------------------------------------


def sample_size_sweep(config: ExperimentConfig, sizes: Sequence[int]) -> dict:
    """Paired MoE vs FusionFormer test AUC and overfit gaps per cohort size."""
    if list(sizes) != sorted(sizes):
        raise ConfigError("sizes must be ascending")
    sweep_rows = []
    for size in sizes:
        sub = replace(config, n=int(size), variants=("MOE_TRIMODAL", "FUSIONFORMER"))
        report = run_ablation(sub)
        for agg in report.aggregates():
            sweep_rows.append(
                {
                    "n": int(size),
                    "variant": agg["variant"],
                    "test_auc_mean": agg.get("test_auc_mean", float("nan")),
                    "test_auc_std": agg.get("test_auc_std", float("nan")),
                    "overfit_gap_mean": agg.get("overfit_gap_mean", float("nan")),
                }
            )
        for r in report.rows:
            sweep_rows.append(
                {
                    "n": int(size),
                    "variant": f"{r.variant}@seed{r.seed}",
                    "test_auc_mean": r.test_auc,
                    "test_auc_std": 0.0,
                    "overfit_gap_mean": r.overfit_gap,
                }
            )
    return {"task": config.task, "sizes": [int(s) for s in sizes], "rows": sweep_rows}


# ---------------------------------------------------------------------------
# calibration study
# ---------------------------------------------------------------------------

FN_REFERENCE_LINE = (
    "reference benchmark (published MIMIC-IV early-warning pipeline): "
    "missed cases 1025 -> 536 at the sensitivity-weighted operating point "
    "(48% reduction; threshold 0.26)"
)


def run_calibration_study(config: ExperimentConfig, target_sensitivity: float) -> dict:
    """Train the MoE, pick tau on validation, report both operating points."""
    config.validate()
    if config.task not in ("detection", "mortality"):
        raise ConfigError("calibration study needs a binary task")
    spec = resolve_genspec(config)
    params = _model_params(config)
    seed = config.seeds[0]
    ctx = _prepare_seed(config, spec, seed)
    _ensure_pool(ctx, replace(config, variants=("MOE_TRIMODAL",)), params)
    model, _, val_probs, test_probs = _moe_cell(
        ctx, config, params, ("HISTORIAN", "MONITOR", "READER")
    )
    policy = calibrate_threshold(
        val_probs[:, 1], ctx.y_val.astype(float), target_sensitivity
    )
    tau = policy.threshold
    scores = test_probs[:, 1]
    y = ctx.y_test.astype(float)
    sens_t, spec_t, fn_t = sens_spec_at(scores, y, tau)
    sens_d, spec_d, fn_d = sens_spec_at(scores, y, 0.5)
    names = task_class_names(config.task)
    cm_default = confusion_matrix((scores >= 0.5).astype(int), ctx.y_test, names)
    cm_tuned = confusion_matrix((scores >= tau).astype(int), ctx.y_test, names)
    fn_reduction = 100.0 * (fn_d - fn_t) / fn_d if fn_d else 0.0
    report = {
        "task": config.task,
        "seed": seed,
        "target_sensitivity": target_sensitivity,
        "validation_policy": policy.to_dict(),
        "test": {
            "threshold": tau,
            "sensitivity_at_threshold": sens_t,
            "specificity_at_threshold": spec_t,
            "fn_at_threshold": fn_t,
            "sensitivity_at_default": sens_d,
            "specificity_at_default": spec_d,
            "fn_at_default": fn_d,
            "fn_reduction_pct": fn_reduction,
            "confusion_default": cm_default.to_dict(),
            "confusion_tuned": cm_tuned.to_dict(),
            "auc": roc_auc(scores, y),
        },
        "reference": FN_REFERENCE_LINE,
        "_scores": scores,
        "_labels": y,
    }
    return report


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------


def _write(path: str, content: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(content)


def _json_dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def emit_ablation(
    report: AblationReport, outdir: str, formats: Sequence[str] = ("json", "csv", "svg")
) -> list[str]:
    """Write report files with stable names; returns the paths written.

    Wall times go to timings.txt only (excluded from determinism checks).
    """
    os.makedirs(outdir, exist_ok=True)
    written = []
    payload = report.to_dict()
    # attach ROC polylines (first seed per variant) so `report` re-emission
    # and SVG plots are reproducible from the JSON alone
    plots = {}
    for variant in report.config.variants:
        cell = next(
            (r for r in report.rows
             if r.variant == variant and not r.error and r.test_scores is not None),
            None,
        )
        if cell is not None:
            pts = roc_points(cell.test_scores, cell.test_labels.astype(float))
            plots[variant] = {
                "seed": cell.seed,
                "auc": cell.test_auc,
                "roc": [[float(a), float(b)] for a, b in pts],
            }
    payload["plots"] = plots
    if "json" in formats:
        path = os.path.join(outdir, "ablation_report.json")
        _write(path, _json_dumps(payload))
        written.append(path)
    if "csv" in formats:
        path = os.path.join(outdir, "ablation_report.csv")
        lines = [
            "# columns: variant,seed,train_auc,val_auc,test_auc,"
            "test_macro_ovr_auc,test_auprc,overfit_gap,n_train,n_val,n_test,error",
        ]
        for r in report.rows:
            lines.append(
                f"{r.variant},{r.seed},{r.train_auc:.10g},{r.val_auc:.10g},"
                f"{r.test_auc:.10g},{r.test_macro_ovr_auc:.10g},{r.test_auprc:.10g},"
                f"{r.overfit_gap:.10g},{r.n_train},{r.n_val},{r.n_test},{r.error}"
            )
        lines.append("# aggregates: variant,metric,mean,std")
        for agg in report.aggregates():
            for metric in ("train_auc", "val_auc", "test_auc", "test_macro_ovr_auc",
                           "test_auprc", "overfit_gap"):
                if f"{metric}_mean" in agg:
                    lines.append(
                        f"{agg['variant']},{metric},{agg[f'{metric}_mean']:.10g},"
                        f"{agg[f'{metric}_std']:.10g}"
                    )
        _write(path, "\n".join(lines) + "\n")
        written.append(path)
    if "csv" in formats:
        for r in report.rows:
            if r.curves_csv:
                path = os.path.join(outdir, f"ablation_{r.variant}_curves_seed{r.seed}.csv")
                _write(path, "# columns: epoch,train_auc,val_auc,train_loss,val_loss\n"
                       + r.curves_csv)
                written.append(path)
    if "svg" in formats:
        for variant, plot in plots.items():
            path = os.path.join(outdir, f"ablation_{variant}_roc.svg")
            _write(
                path,
                svgplot.roc_chart(
                    [tuple(p) for p in plot["roc"]],
                    plot["auc"],
                    f"ROC - {variant} (test, seed {plot['seed']})",
                ),
            )
            written.append(path)
    timing_path = os.path.join(outdir, "timings.txt")
    with open(timing_path, "w", encoding="utf-8") as fh:
        fh.write("# wall-clock seconds per cell; nondeterministic, excluded from\n")
        fh.write("# byte-determinism guarantees\n")
        for r in report.rows:
            fh.write(f"{r.variant},{r.seed},{r.wall_time_s:.3f}\n")
    return written


def emit_sweep(sweep: dict, outdir: str) -> list[str]:
    os.makedirs(outdir, exist_ok=True)
    written = []
    path = os.path.join(outdir, "sweep_report.csv")
    lines = ["# columns: n,variant,test_auc_mean,test_auc_std,overfit_gap_mean"]
    for r in sweep["rows"]:
        lines.append(
            f"{r['n']},{r['variant']},{r['test_auc_mean']:.10g},"
            f"{r['test_auc_std']:.10g},{r['overfit_gap_mean']:.10g}"
        )
    _write(path, "\n".join(lines) + "\n")
    written.append(path)
    path = os.path.join(outdir, "sweep_report.json")
    _write(path, _json_dumps(sweep))
    written.append(path)
    series = []
    for variant in ("MOE_TRIMODAL", "FUSIONFORMER"):
        pts = [
            (r["n"], r["test_auc_mean"])
            for r in sweep["rows"]
            if r["variant"] == variant
        ]
        if pts:
            series.append((variant, [p[0] for p in pts], [p[1] for p in pts]))
    gap_series = []
    for variant in ("MOE_TRIMODAL", "FUSIONFORMER"):
        pts = [
            (r["n"], r["overfit_gap_mean"])
            for r in sweep["rows"]
            if r["variant"] == variant
        ]
        if pts:
            gap_series.append((f"{variant} gap", [p[0] for p in pts], [p[1] for p in pts]))
    path = os.path.join(outdir, "sweep_auc.svg")
    _write(path, svgplot.line_chart(series, "Test AUC vs cohort size", "n", "test AUC"))
    written.append(path)
    path = os.path.join(outdir, "sweep_overfit_gap.svg")
    _write(
        path,
        svgplot.line_chart(gap_series, "Overfit gap vs cohort size", "n", "train - val AUC"),
    )
    written.append(path)
    return written


def emit_calibration(report: dict, outdir: str) -> list[str]:
    os.makedirs(outdir, exist_ok=True)
    written = []
    scores = report.pop("_scores")
    labels = report.pop("_labels")
    path = os.path.join(outdir, "calibration_report.json")
    _write(path, _json_dumps(report))
    written.append(path)
    pts = roc_points(scores, labels)
    t = report["test"]
    marked = [
        (1 - t["specificity_at_default"], t["sensitivity_at_default"], "tau = 0.50"),
        (
            1 - t["specificity_at_threshold"],
            t["sensitivity_at_threshold"],
            f"tau = {t['threshold']:.2f}",
        ),
    ]
    path = os.path.join(outdir, "calibration_roc.svg")
    _write(
        path,
        svgplot.roc_chart(pts, t["auc"], "ROC with calibrated operating point", marked),
    )
    written.append(path)
    lines = [
        f"target sensitivity: {report['target_sensitivity']:.2f}",
        f"validation threshold tau: {t['threshold']:.6f}",
        f"test sensitivity: {t['sensitivity_at_default']:.4f} (tau=0.5) -> "
        f"{t['sensitivity_at_threshold']:.4f} (tau)",
        f"test specificity: {t['specificity_at_default']:.4f} (tau=0.5) -> "
        f"{t['specificity_at_threshold']:.4f} (tau)",
        f"test missed cases: {t['fn_at_default']} (tau=0.5) -> "
        f"{t['fn_at_threshold']} (tau), reduction {t['fn_reduction_pct']:.1f}%",
        report["reference"],
    ]
    path = os.path.join(outdir, "calibration_summary.txt")
    _write(path, "\n".join(lines) + "\n")
    written.append(path)
    return written


def reemit_from_json(report_json_path: str, outdir: str, formats: Sequence[str]) -> list[str]:
    """Rebuild CSV/SVG outputs from a stored ablation_report.json."""
    with open(report_json_path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    os.makedirs(outdir, exist_ok=True)
    written = []
    if "csv" in formats:
        path = os.path.join(outdir, "ablation_report.csv")
        lines = [
            "# columns: variant,seed,train_auc,val_auc,test_auc,"
            "test_macro_ovr_auc,test_auprc,overfit_gap,n_train,n_val,n_test,error",
        ]
        def g(v):
            return "nan" if v is None else f"{v:.10g}"

        for r in payload["rows"]:
            lines.append(
                f"{r['variant']},{r['seed']},{g(r['train_auc'])},{g(r['val_auc'])},"
                f"{g(r['test_auc'])},{g(r['test_macro_ovr_auc'])},{g(r['test_auprc'])},"
                f"{g(r['overfit_gap'])},{r['n_train']},{r['n_val']},{r['n_test']},{r['error']}"
            )
        _write(path, "\n".join(lines) + "\n")
        written.append(path)
    if "svg" in formats:
        for variant, plot in payload.get("plots", {}).items():
            path = os.path.join(outdir, f"ablation_{variant}_roc.svg")
            _write(
                path,
                svgplot.roc_chart(
                    [tuple(p) for p in plot["roc"]],
                    plot["auc"],
                    f"ROC - {variant} (test, seed {plot['seed']})",
                ),
            )
            written.append(path)
    return written
