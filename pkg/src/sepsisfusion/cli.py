"""Command-line interface.

Subcommands: synth (genspec -> cohort file), guard (apply the leakage
pipeline), train (single variant), ablate, sweep, calibrate, and report
(re-emit files from stored results). Exit codes: 0 success, 1 config
error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from .cohort import CohortError, load_cohort, save_cohort
from .guards import GuardError, guard_cohort
from .harness import (
    ConfigError,
    ExperimentConfig,
    emit_ablation,
    emit_calibration,
    emit_sweep,
    guard_settings_for,
    reemit_from_json,
    resolve_genspec,
    run_ablation,
    run_calibration_study,
    sample_size_sweep,
)
from .presets import load_genspec
from .synthgen import GenSpecError, generate_cohort


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config file")
    p.add_argument("--seed", type=int, help="override: single seed")
    p.add_argument("--out", help="override: output directory")
    p.add_argument(
        "--threads",
        type=int,
        default=None,
        help="parallelism width across seeds; never affects results",
    )


def _load_config(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config is required for this subcommand")
    cfg = ExperimentConfig.from_json_file(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    if args.out:
        cfg = replace(cfg, outdir=args.out)
    if args.threads is not None:
        cfg = replace(cfg, threads=args.threads)
    cfg.validate()
    return cfg


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="sepsisfusion",
        description="Multimodal fusion benchmarks on synthetic sepsis cohorts",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a cohort file from a genspec")
    p.add_argument("--genspec", required=True, help="preset name or genspec JSON path")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output cohort JSONL path")

    p = sub.add_parser("guard", help="apply firewall/mask/window to a cohort file")
    p.add_argument("--in", dest="inp", required=True, help="input cohort JSONL")
    p.add_argument("--out", required=True, help="output cohort JSONL")
    p.add_argument("--task", required=True, choices=("detection", "mortality", "antibiotics"))
    p.add_argument("--buffer-hours", type=float, default=None)
    p.add_argument("--drug-lexicon", default=None)
    p.add_argument("--pathogen-lexicon", default=None)
    p.add_argument("--genspec", default=None,
                   help="genspec (for the matched control window); optional")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train and evaluate a single variant")
    _add_common(p)
    p.add_argument("--variant", required=True)

    p = sub.add_parser("ablate", help="run the full variant x seed ablation")
    _add_common(p)

    p = sub.add_parser("sweep", help="sample-size sweep (MoE vs deep fusion)")
    _add_common(p)
    p.add_argument("--sizes", required=True, help="comma-separated ascending sizes")

    p = sub.add_parser("calibrate", help="threshold calibration study")
    _add_common(p)
    p.add_argument("--target-sensitivity", type=float, default=0.85)

    p = sub.add_parser("report", help="re-emit report files from stored results")
    p.add_argument("--results", required=True, help="ablation_report.json path")
    p.add_argument("--out", required=True)
    p.add_argument("--formats", default="csv,svg")
    return ap


def _cmd_synth(args) -> int:
    spec = load_genspec(args.genspec)
    cohort = generate_cohort(spec, args.n, args.seed)
    save_cohort(cohort, args.out)
    print(f"wrote {len(cohort)} records to {args.out}")
    return 0


def _cmd_guard(args) -> int:
    cohort = load_cohort(args.inp)
    cfg = ExperimentConfig(
        task=args.task,
        variants=("STATIC_ONLY",),
        cohort_path=args.inp,
        buffer_hours=args.buffer_hours,
        drug_lexicon_path=args.drug_lexicon,
        pathogen_lexicon_path=args.pathogen_lexicon,
    )
    spec = load_genspec(args.genspec) if args.genspec else None
    settings = guard_settings_for(cfg, spec, args.seed)
    guarded, audit, excluded = guard_cohort(cohort, args.task, settings)
    save_cohort(guarded, args.out)
    print(
        f"guarded {len(cohort)} records -> {len(guarded)} kept, {excluded} excluded; "
        f"purged {audit.notes_purged} notes, masked {audit.tokens_masked} tokens"
    )
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args)
    cfg = replace(cfg, variants=(args.variant,))
    cfg.validate()
    report = run_ablation(cfg)
    paths = emit_ablation(report, cfg.outdir)
    for row in report.rows:
        if row.error:
            print(f"{row.variant} seed {row.seed}: ERROR {row.error}")
        else:
            print(
                f"{row.variant} seed {row.seed}: test_auc={row.test_auc:.4f} "
                f"val_auc={row.val_auc:.4f} gap={row.overfit_gap:+.4f}"
            )
    print(f"wrote {len(paths)} files to {cfg.outdir}")
    return 0 if not any(r.error for r in report.rows) else 2


def _cmd_ablate(args) -> int:
    cfg = _load_config(args)
    report = run_ablation(cfg)
    paths = emit_ablation(report, cfg.outdir)
    for agg in report.aggregates():
        if agg.get("n_seeds", 0):
            print(
                f"{agg['variant']}: test_auc {agg['test_auc_mean']:.4f} "
                f"+/- {agg['test_auc_std']:.4f} (gap {agg['overfit_gap_mean']:+.4f})"
            )
        else:
            print(f"{agg['variant']}: no successful cells")
    print(f"wrote {len(paths)} files to {cfg.outdir}")
    return 0 if not any(r.error for r in report.rows) else 2


def _cmd_sweep(args) -> int:
    cfg = _load_config(args)
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    sweep = sample_size_sweep(cfg, sizes)
    paths = emit_sweep(sweep, cfg.outdir)
    print(f"wrote {len(paths)} files to {cfg.outdir}")
    return 0


def _cmd_calibrate(args) -> int:
    cfg = _load_config(args)
    report = run_calibration_study(cfg, args.target_sensitivity)
    paths = emit_calibration(report, cfg.outdir)
    t = report["test"]
    print(
        f"tau={t['threshold']:.4f}: test FN {t['fn_at_default']} -> {t['fn_at_threshold']} "
        f"({t['fn_reduction_pct']:.1f}% reduction)"
    )
    print(report["reference"])
    print(f"wrote {len(paths)} files to {cfg.outdir}")
    return 0


def _cmd_report(args) -> int:
    formats = tuple(f.strip() for f in args.formats.split(",") if f.strip())
    paths = reemit_from_json(args.results, args.out, formats)
    print(f"wrote {len(paths)} files to {args.out}")
    return 0


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    handlers = {
        "synth": _cmd_synth,
        "guard": _cmd_guard,
        "train": _cmd_train,
        "ablate": _cmd_ablate,
        "sweep": _cmd_sweep,
        "calibrate": _cmd_calibrate,
        "report": _cmd_report,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, CohortError, GenSpecError, GuardError, FileNotFoundError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
