"""Evaluation metrics and operating-point calibration.

All functions are pure and operate on numpy arrays. ROC AUC uses the
Mann-Whitney rank statistic with mid-rank tie handling, so it agrees
exactly with brute-force pair counting. Positive predictions at a
threshold tau are `score >= tau`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


class MetricError(ValueError):
    pass


def _as_1d(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise MetricError(f"{name} must be one-dimensional")
    return arr


def _check_binary(labels: np.ndarray) -> None:
    uniq = set(np.unique(labels).tolist())
    if not uniq <= {0.0, 1.0}:
        raise MetricError(f"labels must be binary 0/1, got {sorted(uniq)}")
    if len(uniq) < 2:
        raise MetricError("both classes must be present")


def _midranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n with tied values receiving the mean of their rank range."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def roc_auc(scores, labels) -> float:
    """P(score+ > score-) + 0.5 P(tie), via the rank method.

    Equals brute-force all-pairs counting exactly (mid-rank sums are
    multiples of 0.5, exact in float64 for any practical n).
    """
    s = _as_1d(scores, "scores")
    y = _as_1d(labels, "labels")
    if s.shape != y.shape:
        raise MetricError("scores and labels must have equal length")
    if len(s) == 0:
        raise MetricError("empty input")
    _check_binary(y)
    pos = y == 1.0
    n_pos = int(pos.sum())
    n_neg = len(y) - n_pos
    ranks = _midranks(s)
    rank_sum = float(ranks[pos].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def macro_ovr_auc(probs, labels) -> float:
    """Unweighted mean of one-vs-rest ROC AUC over classes present in labels."""
    P = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels)
    if P.ndim != 2 or P.shape[0] != len(y):
        raise MetricError("probs must be (n, K) aligned with labels")
    present = sorted(set(int(c) for c in y))
    if len(present) < 2:
        raise MetricError("need at least two classes present")
    aucs = [roc_auc(P[:, c], (y == c).astype(np.float64)) for c in present]
    return float(np.mean(aucs))


def auprc(scores, labels) -> float:
    """Average precision: sum of (R_i - R_{i-1}) * P_i over the descending-score
    sweep, with tied scores processed as one group (step interpolation)."""
    s = _as_1d(scores, "scores")
    y = _as_1d(labels, "labels")
    if s.shape != y.shape or len(s) == 0:
        raise MetricError("scores and labels must be equal-length and non-empty")
    n_pos = float((y == 1.0).sum())
    if n_pos == 0:
        raise MetricError("average precision needs at least one positive")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    ap = 0.0
    tp = 0.0
    n_seen = 0.0
    prev_recall = 0.0
    i = 0
    n = len(s)
    while i < n:
        j = i
        while j + 1 < n and s_sorted[j + 1] == s_sorted[i]:
            j += 1
        tp += float(y_sorted[i : j + 1].sum())
        n_seen += j - i + 1
        recall = tp / n_pos
        precision = tp / n_seen
        ap += (recall - prev_recall) * precision
        prev_recall = recall
        i = j + 1
    return ap


def macro_ovr_auprc(probs, labels) -> float:
    P = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels)
    present = sorted(set(int(c) for c in y))
    aps = [auprc(P[:, c], (y == c).astype(np.float64)) for c in present]
    return float(np.mean(aps))


def roc_points(scores, labels) -> list[tuple[float, float]]:
    """Monotone ROC staircase from (0,0) to (1,1); tied scores give one vertex
    per tie group, so the trapezoid integral equals `roc_auc`."""
    s = _as_1d(scores, "scores")
    y = _as_1d(labels, "labels")
    if s.shape != y.shape:
        raise MetricError("scores and labels must have equal length")
    _check_binary(y)
    n_pos = float((y == 1.0).sum())
    n_neg = float(len(y) - n_pos)
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    points = [(0.0, 0.0)]
    tp = 0.0
    fp = 0.0
    i = 0
    n = len(s)
    while i < n:
        j = i
        while j + 1 < n and s_sorted[j + 1] == s_sorted[i]:
            j += 1
        grp = y_sorted[i : j + 1]
        tp += float(grp.sum())
        fp += float(len(grp) - grp.sum())
        points.append((fp / n_neg, tp / n_pos))
        i = j + 1
    return points


def trapezoid_area(points: Sequence[tuple[float, float]]) -> float:
    area = 0.0
    for (x0, y0), (x1, y1) in zip(points[:-1], points[1:]):
        area += (x1 - x0) * 0.5 * (y0 + y1)
    return area


# ---------------------------------------------------------------------------
# confusion / classification report
# ---------------------------------------------------------------------------


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (K, K), rows = true class, cols = predicted
    class_names: tuple[str, ...]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_dict(self) -> dict:
        return {
            "class_names": list(self.class_names),
            "counts": self.counts.astype(int).tolist(),
            "total": self.total,
        }


def confusion_matrix(preds, labels, class_names: Sequence[str]) -> ConfusionMatrix:
    K = len(class_names)
    counts = np.zeros((K, K), dtype=np.int64)
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape or preds.ndim != 1 or len(preds) < 1:
        raise MetricError("preds and labels must be equal-length, non-empty 1-D")
    for t, p in zip(labels, preds):
        counts[t, p] += 1
    return ConfusionMatrix(counts=counts, class_names=tuple(class_names))


def round_half_up(x: float, decimals: int = 2) -> float:
    """Display rounding used in report tables (0.005 -> 0.01).

    A 1e-9 nudge absorbs binary-representation noise around the .xx5
    boundary before flooring.
    """
    scale = 10**decimals
    return float(np.floor(x * scale + 0.5 + 1e-9)) / scale


@dataclass
class ClassReportRow:
    name: str
    precision: float
    recall: float
    f1: float
    support: int
    zero_predictions: bool = False  # precision reported as 0 with no predicted positives


@dataclass
class ClassificationReport:
    rows: list[ClassReportRow]
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    total: int

    def rounded_cells(self, decimals: int = 2) -> dict:
        return {
            "per_class": {
                r.name: {
                    "precision": round_half_up(r.precision, decimals),
                    "recall": round_half_up(r.recall, decimals),
                    "f1": round_half_up(r.f1, decimals),
                    "support": r.support,
                }
                for r in self.rows
            },
            "accuracy": round_half_up(self.accuracy, decimals),
            "macro_precision": round_half_up(self.macro_precision, decimals),
            "macro_recall": round_half_up(self.macro_recall, decimals),
            "macro_f1": round_half_up(self.macro_f1, decimals),
            "total": self.total,
        }

    def to_dict(self) -> dict:
        return {
            "per_class": [
                {
                    "name": r.name,
                    "precision": r.precision,
                    "recall": r.recall,
                    "f1": r.f1,
                    "support": r.support,
                    "zero_predictions": r.zero_predictions,
                }
                for r in self.rows
            ],
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "total": self.total,
        }


def classification_report(
    preds, labels, class_names: Optional[Sequence[str]] = None
) -> ClassificationReport:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape or preds.ndim != 1 or len(preds) < 1:
        raise MetricError("preds and labels must be equal-length, non-empty 1-D")
    K = int(max(preds.max(), labels.max())) + 1
    if class_names is None:
        class_names = tuple(f"class_{k}" for k in range(K))
    if len(class_names) < K:
        raise MetricError("class_names shorter than the observed class range")
    cm = confusion_matrix(preds, labels, class_names)
    rows = []
    for k in range(len(class_names)):
        tp = float(cm.counts[k, k])
        predicted = float(cm.counts[:, k].sum())
        support = int(cm.counts[k, :].sum())
        zero_pred = predicted == 0
        precision = tp / predicted if predicted else 0.0
        recall = tp / support if support else 0.0
        f1 = 2 * precision * recall / (precision + recall) if (precision + recall) else 0.0
        rows.append(
            ClassReportRow(
                name=class_names[k],
                precision=precision,
                recall=recall,
                f1=f1,
                support=support,
                zero_predictions=zero_pred,
            )
        )
    accuracy = float(np.trace(cm.counts)) / cm.total
    return ClassificationReport(
        rows=rows,
        accuracy=accuracy,
        macro_precision=float(np.mean([r.precision for r in rows])),
        macro_recall=float(np.mean([r.recall for r in rows])),
        macro_f1=float(np.mean([r.f1 for r in rows])),
        total=cm.total,
    )


def binary_report_from_counts(
    tp: int, fn: int, fp: int, tn: int, class_names: tuple[str, str] = ("negative", "positive")
) -> ClassificationReport:
    """Classification report built directly from binary confusion counts
    (positive class second)."""
    preds = np.concatenate(
        [
            np.ones(tp, dtype=np.int64),
            np.zeros(fn, dtype=np.int64),
            np.ones(fp, dtype=np.int64),
            np.zeros(tn, dtype=np.int64),
        ]
    )
    labels = np.concatenate(
        [
            np.ones(tp + fn, dtype=np.int64),
            np.zeros(fp + tn, dtype=np.int64),
        ]
    )
    return classification_report(preds, labels, class_names)


# ---------------------------------------------------------------------------
# threshold calibration
# ---------------------------------------------------------------------------


@dataclass
class ThresholdPolicy:
    threshold: float
    target_sensitivity: float
    achieved_sensitivity: float
    achieved_specificity: float
    fn_at_threshold: int
    fn_at_default: int
    sensitivity_at_default: float
    specificity_at_default: float

    @property
    def fn_reduction_pct(self) -> float:
        if self.fn_at_default == 0:
            return 0.0
        return 100.0 * (self.fn_at_default - self.fn_at_threshold) / self.fn_at_default

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "target_sensitivity": self.target_sensitivity,
            "achieved_sensitivity": self.achieved_sensitivity,
            "achieved_specificity": self.achieved_specificity,
            "fn_at_threshold": self.fn_at_threshold,
            "fn_at_default": self.fn_at_default,
            "sensitivity_at_default": self.sensitivity_at_default,
            "specificity_at_default": self.specificity_at_default,
            "fn_reduction_pct": self.fn_reduction_pct,
        }


def sens_spec_at(scores: np.ndarray, labels: np.ndarray, tau: float) -> tuple[float, float, int]:
    """(sensitivity, specificity, false negatives) with positives = score >= tau."""
    pos = labels == 1.0
    pred_pos = scores >= tau
    n_pos = int(pos.sum())
    n_neg = int((~pos).sum())
    tp = int((pred_pos & pos).sum())
    tn = int((~pred_pos & ~pos).sum())
    sens = tp / n_pos if n_pos else 0.0
    spec = tn / n_neg if n_neg else 0.0
    return sens, spec, n_pos - tp


def calibrate_threshold(scores, labels, target_sensitivity: float) -> ThresholdPolicy:
    """Largest threshold whose sensitivity meets the target on the calibration
    data (maximizes specificity subject to the sensitivity constraint)."""
    s = _as_1d(scores, "scores")
    y = _as_1d(labels, "labels")
    if s.shape != y.shape:
        raise MetricError("scores and labels must have equal length")
    _check_binary(y)
    if not 0.0 <= target_sensitivity <= 1.0:
        raise MetricError("target sensitivity must lie in [0, 1]")
    # Candidate cuts: every distinct score plus a sentinel just above the max,
    # which yields sensitivity 0 (no positive predictions).
    candidates = np.unique(s)[::-1]
    above_max = float(np.nextafter(candidates[0], np.inf))
    best_tau = None
    for tau in [above_max] + [float(t) for t in candidates]:
        sens, _, _ = sens_spec_at(s, y, tau)
        if sens >= target_sensitivity:
            best_tau = tau
            break
    assert best_tau is not None  # sensitivity 1 is always reached at min positive score
    sens, spec, fn = sens_spec_at(s, y, best_tau)
    sens0, spec0, fn0 = sens_spec_at(s, y, 0.5)
    return ThresholdPolicy(
        threshold=best_tau,
        target_sensitivity=float(target_sensitivity),
        achieved_sensitivity=sens,
        achieved_specificity=spec,
        fn_at_threshold=fn,
        fn_at_default=fn0,
        sensitivity_at_default=sens0,
        specificity_at_default=spec0,
    )
