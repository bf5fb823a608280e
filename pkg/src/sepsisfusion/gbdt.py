"""Gradient-boosted decision trees, built from scratch.

Exact greedy split search with second-order (Newton) leaf values
-G/(H + lambda), one-vs-rest logistic boosting with a constant shrinkage
applied at accumulation time, missing values routed through a learned
default branch, and categorical splits by exhaustive subset search at low
cardinality. Models serialize to versioned JSON.

Split gain (no depth penalty term):

    gain = G_L^2/(H_L+lam) + G_R^2/(H_R+lam) - G^2/(H+lam)

computed over midpoints of consecutive distinct sorted feature values,
trying both default sides for missing rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

MODEL_FORMAT_VERSION = 1
BASE_SCORE_CLIP = 10.0
MAX_EXACT_CATEGORICAL_CARDINALITY = 8


class GBDTError(ValueError):
    pass


@dataclass(frozen=True)
class GBDTFeature:
    name: str
    kind: str = "numeric"  # "numeric" | "categorical"
    cardinality: int = 0  # categorical only

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "cardinality": self.cardinality}

    @staticmethod
    def from_dict(d: dict) -> "GBDTFeature":
        return GBDTFeature(d["name"], d["kind"], int(d["cardinality"]))


@dataclass
class GBDTParams:
    rounds: int = 100
    learning_rate: float = 0.1
    max_depth: int = 3
    min_samples_leaf: int = 5
    l2_leaf_reg: float = 1.0
    subsample: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.rounds < 1:
            raise GBDTError("rounds must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise GBDTError("learning_rate must be in (0, 1]")
        if self.max_depth < 1:
            raise GBDTError("max_depth must be >= 1")
        if self.min_samples_leaf < 1:
            raise GBDTError("min_samples_leaf must be >= 1")
        if self.l2_leaf_reg <= 0:
            raise GBDTError("l2_leaf_reg must be > 0")
        if not 0.0 < self.subsample <= 1.0:
            raise GBDTError("subsample must be in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "rounds": self.rounds,
            "learning_rate": self.learning_rate,
            "max_depth": self.max_depth,
            "min_samples_leaf": self.min_samples_leaf,
            "l2_leaf_reg": self.l2_leaf_reg,
            "subsample": self.subsample,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "GBDTParams":
        return GBDTParams(**d)


@dataclass
class Split:
    feature: int
    kind: str
    gain: float
    threshold: Optional[float] = None  # numeric
    categories: Optional[frozenset[int]] = None  # categorical codes routed left
    default_left: bool = True  # side taken by missing values


@dataclass
class TreeNode:
    # internal node fields
    split: Optional[Split] = None
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None
    # leaf field
    value: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.split is None

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"value": self.value}
        s = self.split
        d: dict = {
            "feature": s.feature,
            "kind": s.kind,
            "gain": s.gain,
            "default_left": s.default_left,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }
        if s.kind == "numeric":
            d["threshold"] = s.threshold
        else:
            d["categories"] = sorted(s.categories)
        return d

    @staticmethod
    def from_dict(d: dict) -> "TreeNode":
        if "value" in d and "feature" not in d:
            return TreeNode(value=float(d["value"]))
        split = Split(
            feature=int(d["feature"]),
            kind=d["kind"],
            gain=float(d["gain"]),
            threshold=float(d["threshold"]) if "threshold" in d else None,
            categories=frozenset(d["categories"]) if "categories" in d else None,
            default_left=bool(d["default_left"]),
        )
        return TreeNode(
            split=split,
            left=TreeNode.from_dict(d["left"]),
            right=TreeNode.from_dict(d["right"]),
        )


# ---------------------------------------------------------------------------
# split search
# ---------------------------------------------------------------------------


def _gain_terms(GL, HL, GR, HR, G, H, lam):
    return GL * GL / (HL + lam) + GR * GR / (HR + lam) - G * G / (H + lam)


def _best_numeric_split_sorted(
    sorted_values: np.ndarray,
    sorted_g: np.ndarray,
    sorted_h: np.ndarray,
    g_miss: float,
    h_miss: float,
    n_miss: int,
    params: GBDTParams,
) -> Optional[tuple[float, bool, float]]:
    """Best (threshold, default_left, gain) over midpoints of consecutive
    distinct sorted values, or None when no split has gain > 0."""
    n = len(sorted_values)
    if n < 2:
        return None
    lam = params.l2_leaf_reg
    min_leaf = params.min_samples_leaf
    G = float(sorted_g.sum()) + g_miss
    H = float(sorted_h.sum()) + h_miss
    csum_g = np.cumsum(sorted_g)
    csum_h = np.cumsum(sorted_h)
    # candidate boundaries: after position i when value[i] != value[i+1]
    distinct = sorted_values[:-1] != sorted_values[1:]
    if not distinct.any():
        return None
    left_n = np.arange(1, n)
    right_n = n - left_n
    GL = csum_g[:-1]
    HL = csum_h[:-1]
    best = None  # (gain, threshold, default_left)
    for default_left in (True, False):
        gl = GL + (g_miss if default_left else 0.0)
        hl = HL + (h_miss if default_left else 0.0)
        gr = G - gl
        hr = H - hl
        ln = left_n + (n_miss if default_left else 0)
        rn = right_n + (0 if default_left else n_miss)
        valid = distinct & (ln >= min_leaf) & (rn >= min_leaf)
        if not valid.any():
            continue
        gains = _gain_terms(gl, hl, gr, hr, G, H, lam)
        gains = np.where(valid, gains, -np.inf)
        i = int(np.argmax(gains))
        gain = float(gains[i])
        if gain > 0 and (best is None or gain > best[0]):
            thr = 0.5 * (sorted_values[i] + sorted_values[i + 1])
            best = (gain, float(thr), default_left)
    if best is None:
        return None
    return best[1], best[2], best[0]


def _categorical_stats(values, g, h, cardinality):
    codes = values.astype(np.int64)
    Gc = np.bincount(codes, weights=g, minlength=cardinality)
    Hc = np.bincount(codes, weights=h, minlength=cardinality)
    Nc = np.bincount(codes, minlength=cardinality)
    return Gc, Hc, Nc


def _best_categorical_split(
    values: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    g_miss: float,
    h_miss: float,
    n_miss: int,
    cardinality: int,
    params: GBDTParams,
) -> Optional[tuple[frozenset[int], bool, float]]:
    """Best (left-category set, default_left, gain).

    Exhaustive subset search for cardinality <= 8; otherwise categories are
    ordered by their gradient-to-hessian ratio and prefix subsets scanned.
    """
    lam = params.l2_leaf_reg
    min_leaf = params.min_samples_leaf
    Gc, Hc, Nc = _categorical_stats(values, g, h, cardinality)
    present = [c for c in range(cardinality) if Nc[c] > 0]
    if len(present) < 2:
        return None
    G = float(Gc.sum()) + g_miss
    H = float(Hc.sum()) + h_miss
    n_total = int(Nc.sum()) + n_miss

    def candidates():
        if len(present) <= MAX_EXACT_CATEGORICAL_CARDINALITY:
            m = len(present)
            for bits in range(1, 2**m - 1):
                yield frozenset(present[i] for i in range(m) if bits >> i & 1)
        else:
            order = sorted(present, key=lambda c: (Gc[c] / (Hc[c] + lam), c))
            for k in range(1, len(order)):
                yield frozenset(order[:k])

    best = None
    for subset in candidates():
        gl0 = float(sum(Gc[c] for c in subset))
        hl0 = float(sum(Hc[c] for c in subset))
        nl0 = int(sum(Nc[c] for c in subset))
        for default_left in (True, False):
            gl = gl0 + (g_miss if default_left else 0.0)
            hl = hl0 + (h_miss if default_left else 0.0)
            nl = nl0 + (n_miss if default_left else 0)
            nr = n_total - nl
            if nl < min_leaf or nr < min_leaf:
                continue
            gain = _gain_terms(gl, hl, G - gl, H - hl, G, H, lam)
            if gain > 0 and (best is None or gain > best[0]):
                best = (gain, subset, default_left)
    if best is None:
        return None
    return best[1], best[2], best[0]


def exact_best_split(
    feature_values,
    gradients,
    hessians,
    params: GBDTParams,
    kind: str = "numeric",
    cardinality: int = 0,
    feature: int = 0,
) -> Optional[Split]:
    """Best split of one feature column; NaN entries follow the default branch."""
    v = np.asarray(feature_values, dtype=np.float64)
    g = np.asarray(gradients, dtype=np.float64)
    h = np.asarray(hessians, dtype=np.float64)
    if not (v.shape == g.shape == h.shape) or v.ndim != 1 or len(v) < 1:
        raise GBDTError("feature/gradient/hessian columns must be equal-length 1-D")
    if np.any(h < 0):
        raise GBDTError("hessians must be non-negative")
    miss = np.isnan(v)
    g_miss = float(g[miss].sum())
    h_miss = float(h[miss].sum())
    n_miss = int(miss.sum())
    vv, gg, hh = v[~miss], g[~miss], h[~miss]
    if kind == "numeric":
        order = np.argsort(vv, kind="stable")
        res = _best_numeric_split_sorted(
            vv[order], gg[order], hh[order], g_miss, h_miss, n_miss, params
        )
        if res is None:
            return None
        thr, default_left, gain = res
        return Split(feature=feature, kind="numeric", gain=gain, threshold=thr,
                     default_left=default_left)
    if kind == "categorical":
        res = _best_categorical_split(
            vv, gg, hh, g_miss, h_miss, n_miss, cardinality, params
        )
        if res is None:
            return None
        subset, default_left, gain = res
        return Split(feature=feature, kind="categorical", gain=gain,
                     categories=subset, default_left=default_left)
    raise GBDTError(f"unknown feature kind {kind!r}")


# ---------------------------------------------------------------------------
# tree building
# ---------------------------------------------------------------------------


def _leaf_value(g_sum: float, h_sum: float, lam: float) -> float:
    return -g_sum / (h_sum + lam)


def _split_goes_left(split: Split, column: np.ndarray) -> np.ndarray:
    miss = np.isnan(column)
    if split.kind == "numeric":
        left = column < split.threshold
    else:
        cats = np.array(sorted(split.categories), dtype=np.float64)
        left = np.isin(column, cats)
    left = np.where(miss, split.default_left, left)
    return left.astype(bool)


def _build_tree(
    X: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    rows: np.ndarray,
    features: Sequence[GBDTFeature],
    params: GBDTParams,
    depth: int,
) -> TreeNode:
    g_sum = float(g[rows].sum())
    h_sum = float(h[rows].sum())
    if depth >= params.max_depth or len(rows) < 2 * params.min_samples_leaf:
        return TreeNode(value=_leaf_value(g_sum, h_sum, params.l2_leaf_reg))
    best: Optional[Split] = None
    for j, feat in enumerate(features):
        split = exact_best_split(
            X[rows, j], g[rows], h[rows], params,
            kind=feat.kind, cardinality=feat.cardinality, feature=j,
        )
        if split is not None and (best is None or split.gain > best.gain):
            best = split
    if best is None:
        return TreeNode(value=_leaf_value(g_sum, h_sum, params.l2_leaf_reg))
    goes_left = _split_goes_left(best, X[rows, best.feature])
    left_rows = rows[goes_left]
    right_rows = rows[~goes_left]
    return TreeNode(
        split=best,
        left=_build_tree(X, g, h, left_rows, features, params, depth + 1),
        right=_build_tree(X, g, h, right_rows, features, params, depth + 1),
    )


def apply_tree(node: TreeNode, X: np.ndarray) -> np.ndarray:
    """Leaf values for every row of X (vectorized index partitioning)."""
    out = np.empty(X.shape[0], dtype=np.float64)
    stack = [(node, np.arange(X.shape[0]))]
    while stack:
        nd, rows = stack.pop()
        if len(rows) == 0:
            continue
        if nd.is_leaf:
            out[rows] = nd.value
            continue
        goes_left = _split_goes_left(nd.split, X[rows, nd.split.feature])
        stack.append((nd.left, rows[goes_left]))
        stack.append((nd.right, rows[~goes_left]))
    return out


# ---------------------------------------------------------------------------
# boosting
# ---------------------------------------------------------------------------


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class GBDTModel:
    params: GBDTParams
    features: tuple[GBDTFeature, ...]
    n_classes: int
    base_scores: np.ndarray  # (K,) clipped empirical log-odds
    trees: list[list[TreeNode]]  # per class, one sequence of trees
    train_loss: list[float] = field(default_factory=list)  # per round

    @property
    def shrinkage(self) -> float:
        return self.params.learning_rate

    def decision_scores(self, X: np.ndarray) -> np.ndarray:
        """(n, K) margins: base + shrinkage * sum of tree outputs."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.features):
            raise GBDTError(
                f"feature matrix width {X.shape} does not match schema "
                f"({len(self.features)} features)"
            )
        n = X.shape[0]
        scores = np.tile(self.base_scores, (n, 1))
        for c in range(self.n_classes):
            if not self.trees[c]:
                continue
            acc = np.zeros(n, dtype=np.float64)
            for tree in self.trees[c]:
                acc += apply_tree(tree, X)
            scores[:, c] += self.shrinkage * acc
        return scores

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """(n, K) probabilities: per-class logistic then normalized."""
        margins = self.decision_scores(X)
        p = _sigmoid(margins)
        return p / p.sum(axis=1, keepdims=True)

    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": "gbdt",
            "params": self.params.to_dict(),
            "features": [f.to_dict() for f in self.features],
            "n_classes": self.n_classes,
            "base_scores": [float(b) for b in self.base_scores],
            "trees": [[t.to_dict() for t in seq] for seq in self.trees],
            "train_loss": list(self.train_loss),
        }

    @staticmethod
    def from_dict(d: dict) -> "GBDTModel":
        if d.get("format_version") != MODEL_FORMAT_VERSION:
            raise GBDTError(f"unsupported model format_version {d.get('format_version')}")
        return GBDTModel(
            params=GBDTParams.from_dict(d["params"]),
            features=tuple(GBDTFeature.from_dict(f) for f in d["features"]),
            n_classes=int(d["n_classes"]),
            base_scores=np.asarray(d["base_scores"], dtype=np.float64),
            trees=[[TreeNode.from_dict(t) for t in seq] for seq in d["trees"]],
            train_loss=[float(x) for x in d.get("train_loss", [])],
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, separators=(",", ":"))

    @staticmethod
    def load(path) -> "GBDTModel":
        with open(path, "r", encoding="utf-8") as fh:
            return GBDTModel.from_dict(json.load(fh))


def _clipped_log_odds(p: float) -> float:
    if p <= 0.0:
        return -BASE_SCORE_CLIP
    if p >= 1.0:
        return BASE_SCORE_CLIP
    return float(np.clip(np.log(p / (1.0 - p)), -BASE_SCORE_CLIP, BASE_SCORE_CLIP))


def fit_gbdt(
    X,
    y,
    params: GBDTParams,
    features: Optional[Sequence[GBDTFeature]] = None,
    n_classes: Optional[int] = None,
) -> GBDTModel:
    """One-vs-rest logistic boosting with Newton leaf values.

    Single-class data yields a prior-only model (base scores, no trees).
    The per-round one-vs-rest training loss is recorded in the model.
    """
    params.validate()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise GBDTError("X must be (n, d) aligned with y")
    if len(y) == 0:
        raise GBDTError("empty training data")
    if features is None:
        features = tuple(GBDTFeature(f"f{j}") for j in range(X.shape[1]))
    features = tuple(features)
    if len(features) != X.shape[1]:
        raise GBDTError("feature schema width does not match X")
    K = n_classes if n_classes is not None else int(y.max()) + 1
    if y.min() < 0 or y.max() >= K:
        raise GBDTError("labels outside [0, n_classes)")

    priors = np.array([(y == c).mean() for c in range(K)])
    base = np.array([_clipped_log_odds(p) for p in priors])
    model = GBDTModel(
        params=params,
        features=features,
        n_classes=K,
        base_scores=base,
        trees=[[] for _ in range(K)],
    )
    if len(np.unique(y)) < 2 or len(y) < 2:
        return model

    n = len(y)
    Y = np.zeros((n, K))
    Y[np.arange(n), y] = 1.0
    margins = np.tile(base, (n, 1))
    alpha = params.learning_rate
    for t in range(params.rounds):
        for c in range(K):
            p = _sigmoid(margins[:, c])
            g = p - Y[:, c]
            h = p * (1.0 - p)
            if params.subsample < 1.0:
                rng = np.random.default_rng((params.seed, c, t))
                m = max(1, int(round(params.subsample * n)))
                rows = np.sort(rng.choice(n, size=m, replace=False))
            else:
                rows = np.arange(n)
            tree = _build_tree(X, g, h, rows, features, params, depth=0)
            model.trees[c].append(tree)
            margins[:, c] += alpha * apply_tree(tree, X)
        probs = _sigmoid(margins)
        eps = 1e-12
        bce = -(Y * np.log(probs + eps) + (1 - Y) * np.log(1 - probs + eps))
        model.train_loss.append(float(bce.mean(axis=0).sum()))
    return model


def gbdt_predict(model: GBDTModel, x) -> np.ndarray:
    """Probability vector for a single feature row (missing values allowed)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise GBDTError("gbdt_predict takes a single feature row")
    return model.predict_proba(x[None, :])[0]


def gbdt_gain_importance(model: GBDTModel) -> dict[str, float]:
    """Total split gain per feature, normalized to sum 1.

    Prior-only models (no splits anywhere) return an empty mapping.
    """
    totals = np.zeros(len(model.features), dtype=np.float64)

    def walk(node: TreeNode):
        if node.is_leaf:
            return
        totals[node.split.feature] += node.split.gain
        walk(node.left)
        walk(node.right)

    for seq in model.trees:
        for tree in seq:
            walk(tree)
    s = totals.sum()
    if s <= 0:
        return {}
    return {
        model.features[j].name: float(totals[j] / s)
        for j in range(len(model.features))
        if totals[j] > 0
    }
