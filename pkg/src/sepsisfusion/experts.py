"""Unimodal experts: Historian (GBDT on statics), Monitor (conv + BiRNN +
attention pooling on vitals), Reader (hashed n-gram multinomial logistic on
notes), Visionary (one-hidden-layer MLP on image features).

Every expert emits a class-probability vector; degenerate (single-class)
training data yields a prior-only constant model rather than an error.
Training is plain mini-batch gradient descent in float64 and is
bit-deterministic for a given seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import sparse

from . import nnet
from .cohort import Cohort, NoteDoc, PatientRecord, VitalsSeries
from .gbdt import GBDTFeature, GBDTModel, GBDTParams, fit_gbdt

EXPERT_FORMAT_VERSION = 1

EXPERT_KINDS = ("HISTORIAN", "MONITOR", "READER", "VISIONARY")


class ExpertError(ValueError):
    pass


# ---------------------------------------------------------------------------
# parameter dataclasses
# ---------------------------------------------------------------------------


@dataclass
class TemporalExpertParams:
    conv_filters: int = 32
    conv_kernel: int = 3
    cell: str = "lstm"  # "gru" | "lstm"
    hidden: int = 128  # per direction
    step_size: float = 0.05
    batch_size: int = 128
    epochs: int = 80
    patience: int = 8
    l2: float = 0.0
    seed: int = 0

    def validate(self):
        if self.conv_filters < 1 or self.conv_kernel < 1 or self.hidden < 1:
            raise ExpertError("temporal expert sizes must be >= 1")
        if self.cell not in ("gru", "lstm"):
            raise ExpertError("cell must be 'gru' or 'lstm'")
        if self.step_size <= 0:
            raise ExpertError("step_size must be positive")


@dataclass
class TextExpertParams:
    ngram_orders: tuple[int, ...] = (1, 2)
    hash_dim: int = 2**15
    l2: float = 1e-4
    step_size: float = 0.5
    epochs: int = 300
    tol: float = 1e-6
    seed: int = 0

    def validate(self):
        if self.hash_dim < 2 or self.hash_dim & (self.hash_dim - 1):
            raise ExpertError("hash_dim must be a power of two")
        if self.l2 < 0:
            raise ExpertError("l2 must be >= 0")
        if self.step_size <= 0:
            raise ExpertError("step_size must be positive")


@dataclass
class VisionExpertParams:
    hidden: int = 32
    l2: float = 1e-4
    step_size: float = 0.1
    batch_size: int = 64
    epochs: int = 200
    patience: int = 10
    seed: int = 0

    def validate(self):
        if self.hidden < 1:
            raise ExpertError("hidden width must be >= 1")
        if self.step_size <= 0:
            raise ExpertError("step_size must be positive")


# ---------------------------------------------------------------------------
# the expert model container
# ---------------------------------------------------------------------------


@dataclass
class ExpertModel:
    kind: str
    n_classes: int
    class_prior: np.ndarray
    prior_only: bool = False
    # MONITOR / VISIONARY / READER payloads
    net: Optional[nnet.Params] = None
    config: dict = field(default_factory=dict)
    # HISTORIAN payload
    gbdt: Optional[GBDTModel] = None
    training_log: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = {
            "format_version": EXPERT_FORMAT_VERSION,
            "kind": self.kind,
            "n_classes": self.n_classes,
            "class_prior": self.class_prior.tolist(),
            "prior_only": self.prior_only,
            "config": _jsonify(self.config),
            "training_log": list(self.training_log),
        }
        if self.net is not None:
            d["net"] = {
                k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                for k, v in sorted(self.net.items())
            }
        if self.gbdt is not None:
            d["gbdt"] = self.gbdt.to_dict()
        return d

    @staticmethod
    def from_dict(d: dict) -> "ExpertModel":
        if d.get("format_version") != EXPERT_FORMAT_VERSION:
            raise ExpertError(f"unsupported expert format_version {d.get('format_version')}")
        net = None
        if "net" in d:
            net = {
                k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"])
                for k, v in d["net"].items()
            }
        return ExpertModel(
            kind=d["kind"],
            n_classes=int(d["n_classes"]),
            class_prior=np.asarray(d["class_prior"], dtype=np.float64),
            prior_only=bool(d["prior_only"]),
            net=net,
            config=d.get("config", {}),
            gbdt=GBDTModel.from_dict(d["gbdt"]) if "gbdt" in d else None,
            training_log=[float(x) for x in d.get("training_log", [])],
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, separators=(",", ":"))

    @staticmethod
    def load(path) -> "ExpertModel":
        with open(path, "r", encoding="utf-8") as fh:
            return ExpertModel.from_dict(json.load(fh))


def _jsonify(obj):
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def _class_prior(y: np.ndarray, K: int) -> np.ndarray:
    return np.array([(y == c).mean() for c in range(K)])


def _prior_only_model(kind: str, y: np.ndarray, K: int) -> ExpertModel:
    return ExpertModel(
        kind=kind, n_classes=K, class_prior=_class_prior(y, K), prior_only=True
    )


def _check_labels(y, n_classes: Optional[int]) -> tuple[np.ndarray, int]:
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ExpertError("empty training data")
    K = n_classes if n_classes is not None else int(y.max()) + 1
    if y.min() < 0 or y.max() >= K:
        raise ExpertError("labels outside [0, n_classes)")
    return y, K


# ---------------------------------------------------------------------------
# feature extraction
# ---------------------------------------------------------------------------


def static_feature_schema(cohort_schema) -> tuple[GBDTFeature, ...]:
    feats = [GBDTFeature(n, "numeric") for n in cohort_schema.numeric_features]
    feats += [
        GBDTFeature(c.name, "categorical", c.cardinality)
        for c in cohort_schema.categorical_features
    ]
    return tuple(feats)


def static_features(record: PatientRecord) -> np.ndarray:
    return np.concatenate(
        [record.static.numeric, record.static.categorical.astype(np.float64)]
    )


def impute_series(values: np.ndarray, mask: np.ndarray, channel_means: np.ndarray) -> np.ndarray:
    """Forward-fill along time per channel, then channel mean for leading gaps."""
    T, F = values.shape
    out = np.where(mask.astype(bool), values, np.nan)
    for f in range(F):
        col = out[:, f]
        last = np.nan
        for t in range(T):
            if np.isnan(col[t]):
                col[t] = last
            else:
                last = col[t]
        still = np.isnan(col)
        if still.any():
            present = col[~still]
            fill = present.mean() if len(present) else channel_means[f]
            col[still] = fill
    return out


def monitor_input(
    series: VitalsSeries, channel_means: np.ndarray, channel_sds: np.ndarray
) -> np.ndarray:
    x = impute_series(series.values, series.mask, channel_means)
    return (x - channel_means) / channel_sds


def reader_counts(
    notes: Sequence[NoteDoc], orders: Sequence[int], dim: int
) -> dict[int, float]:
    """Hashed n-gram counts over all notes (n-grams never cross notes)."""
    counts: dict[int, float] = {}
    for note in notes:
        for idx, c in nnet.hash_ngrams(note.tokens, orders, dim).items():
            counts[idx] = counts.get(idx, 0.0) + c
    return counts


def reader_matrix(
    docs: Sequence[Sequence[NoteDoc]], orders: Sequence[int], dim: int
) -> sparse.csr_matrix:
    data, indices, indptr = [], [], [0]
    for notes in docs:
        counts = reader_counts(notes, orders, dim)
        for idx in sorted(counts):
            indices.append(idx)
            data.append(counts[idx])
        indptr.append(len(indices))
    return sparse.csr_matrix(
        (np.asarray(data), np.asarray(indices, dtype=np.int64), np.asarray(indptr)),
        shape=(len(docs), dim),
    )


# ---------------------------------------------------------------------------
# Historian
# ---------------------------------------------------------------------------


def fit_historian(
    X_static: np.ndarray,
    y,
    params: GBDTParams,
    features: Sequence[GBDTFeature],
    n_classes: Optional[int] = None,
) -> ExpertModel:
    y, K = _check_labels(y, n_classes)
    model = fit_gbdt(X_static, y, params, features=features, n_classes=K)
    return ExpertModel(
        kind="HISTORIAN",
        n_classes=K,
        class_prior=_class_prior(y, K),
        prior_only=all(len(seq) == 0 for seq in model.trees),
        gbdt=model,
        training_log=list(model.train_loss),
    )


# ---------------------------------------------------------------------------
# Monitor
# ---------------------------------------------------------------------------


def _monitor_init(params: TemporalExpertParams, n_channels: int, K: int) -> nnet.Params:
    rng = np.random.default_rng(params.seed)
    C, H = params.conv_filters, params.hidden
    net: nnet.Params = {
        "conv_W": nnet.glorot(rng, (params.conv_kernel, n_channels, C)),
        "conv_b": nnet.zeros(C),
    }
    for k, shp in nnet.birnn_param_shapes(C, H, params.cell).items():
        net["rnn_" + k] = nnet.glorot(rng, shp) if len(shp) > 1 else nnet.zeros(shp)
    net["attn_Wa"] = nnet.glorot(rng, (2 * H, H))
    net["attn_ba"] = nnet.zeros(H)
    net["attn_va"] = nnet.glorot(rng, (H, 1))[:, 0]
    net["out_W"] = nnet.glorot(rng, (2 * H, K))
    net["out_b"] = nnet.zeros(K)
    return net


def _monitor_bucket_loss(
    net: nnet.Params,
    x: np.ndarray,
    y_onehot: np.ndarray,
    cell: str,
    want_grads: bool,
):
    """Summed CE over one equal-length bucket; gradients accumulated by caller."""
    yc, c_conv = nnet.conv1d_forward(x, net["conv_W"], net["conv_b"])
    a = np.tanh(yc)
    hs, c_rnn = nnet.birnn_forward(a, net, "rnn", cell)
    pooled, _, c_att = nnet.attn_pool_forward(hs, net["attn_Wa"], net["attn_ba"], net["attn_va"])
    logits, c_out = nnet.affine_forward(pooled, net["out_W"], net["out_b"])
    loss, dlogits = nnet.softmax_ce(logits, y_onehot)
    if not want_grads:
        return loss, logits, None
    grads = nnet.zeros_like_params(net)
    dpooled, grads["out_W"], grads["out_b"] = nnet.affine_backward(dlogits, c_out)
    dhs, grads["attn_Wa"], grads["attn_ba"], grads["attn_va"] = nnet.attn_pool_backward(
        dpooled, c_att
    )
    da = nnet.birnn_backward(dhs, c_rnn, grads, "rnn")
    dyc = da * (1.0 - a * a)
    _, grads["conv_W"], grads["conv_b"] = nnet.conv1d_backward(dyc, c_conv)
    return loss, logits, grads


def _buckets_by_length(arrays: Sequence[np.ndarray], idx: np.ndarray) -> list[np.ndarray]:
    by_len: dict[int, list[int]] = {}
    for i in idx:
        by_len.setdefault(arrays[i].shape[0], []).append(int(i))
    return [np.array(v) for _, v in sorted(by_len.items())]


def monitor_loss_and_grads(
    net: nnet.Params,
    arrays: Sequence[np.ndarray],
    y_onehot: np.ndarray,
    idx: np.ndarray,
    cell: str,
    l2: float = 0.0,
    want_grads: bool = True,
):
    """Mean CE (+ L2) and gradients over the records in `idx`."""
    total = 0.0
    grads = nnet.zeros_like_params(net) if want_grads else None
    for bucket in _buckets_by_length(arrays, idx):
        x = np.stack([arrays[i] for i in bucket])
        loss, _, g = _monitor_bucket_loss(net, x, y_onehot[bucket], cell, want_grads)
        total += loss
        if want_grads:
            nnet.add_scaled(grads, g, 1.0)
    n = len(idx)
    total /= n
    if want_grads:
        for k in grads:
            grads[k] /= n
    if l2 > 0:
        for k in net:
            total += 0.5 * l2 * float(np.sum(net[k] ** 2))
            if want_grads:
                grads[k] += l2 * net[k]
    return total, grads


def monitor_predict_proba(
    net: nnet.Params, arrays: Sequence[np.ndarray], cell: str
) -> np.ndarray:
    out = np.zeros((len(arrays), net["out_b"].shape[0]))
    idx = np.arange(len(arrays))
    for bucket in _buckets_by_length(arrays, idx):
        x = np.stack([arrays[i] for i in bucket])
        _, logits, _ = _monitor_bucket_loss(
            net, x, np.zeros((len(bucket), net["out_b"].shape[0])), cell, False
        )
        out[bucket] = nnet.softmax(logits, axis=1)
    return out


def fit_temporal(
    series: Sequence[VitalsSeries],
    y,
    params: TemporalExpertParams,
    n_classes: Optional[int] = None,
) -> ExpertModel:
    """conv1d (causal) -> bidirectional recurrence -> additive attention
    pooling -> linear softmax, trained by mini-batch gradient descent with
    early stopping on an internal 10% validation slice."""
    params.validate()
    y, K = _check_labels(y, n_classes)
    if len(series) != len(y):
        raise ExpertError("series and labels must align")
    if len(np.unique(y)) < 2:
        return _prior_only_model("MONITOR", y, K)

    # channel statistics over present entries of the training series
    F = series[0].values.shape[1]
    sums = np.zeros(F)
    sqs = np.zeros(F)
    counts = np.zeros(F)
    for s in series:
        pres = s.mask.astype(bool)
        vals = np.where(pres, s.values, 0.0)
        sums += vals.sum(axis=0)
        sqs += (vals * vals).sum(axis=0)
        counts += pres.sum(axis=0)
    counts = np.maximum(counts, 1.0)
    means = sums / counts
    sds = np.sqrt(np.maximum(sqs / counts - means**2, 1e-12))
    sds = np.where(sds < 1e-6, 1.0, sds)

    arrays = [monitor_input(s, means, sds) for s in series]
    n = len(arrays)
    Y = np.zeros((n, K))
    Y[np.arange(n), y] = 1.0

    rng = np.random.default_rng((params.seed, 1))
    perm = rng.permutation(n)
    n_val = max(1, n // 10) if n >= 10 else 0
    val_idx = perm[:n_val]
    train_idx = perm[n_val:]
    if len(train_idx) == 0:
        train_idx = perm
        val_idx = np.array([], dtype=np.int64)

    net = _monitor_init(params, F, K)
    best = {k: v.copy() for k, v in net.items()}
    best_val = np.inf
    bad = 0
    log = []
    # batches are drawn within equal-length groups so each gradient step is
    # one dense BPTT pass; group order is fixed, membership reshuffles per epoch
    groups = _buckets_by_length(arrays, train_idx)
    for epoch in range(params.epochs):
        for grp in groups:
            order = grp[rng.permutation(len(grp))]
            for start in range(0, len(order), params.batch_size):
                batch = order[start : start + params.batch_size]
                _, grads = monitor_loss_and_grads(net, arrays, Y, batch, params.cell, params.l2)
                for k in net:
                    net[k] -= params.step_size * grads[k]
        if len(val_idx):
            val_loss, _ = monitor_loss_and_grads(
                net, arrays, Y, val_idx, params.cell, params.l2, want_grads=False
            )
        else:
            val_loss, _ = monitor_loss_and_grads(
                net, arrays, Y, train_idx, params.cell, params.l2, want_grads=False
            )
        log.append(float(val_loss))
        if val_loss < best_val - 1e-12:
            best_val = val_loss
            best = {k: v.copy() for k, v in net.items()}
            bad = 0
        else:
            bad += 1
            if bad > params.patience:
                break

    return ExpertModel(
        kind="MONITOR",
        n_classes=K,
        class_prior=_class_prior(y, K),
        net=best,
        config={
            "cell": params.cell,
            "channel_means": means,
            "channel_sds": sds,
        },
        training_log=log,
    )


# ---------------------------------------------------------------------------
# Reader
# ---------------------------------------------------------------------------


def _logistic_loss_and_grads(
    X: sparse.csr_matrix, Y: np.ndarray, W: np.ndarray, b: np.ndarray, l2: float
):
    n = X.shape[0]
    logits = X @ W + b
    P = nnet.softmax(logits, axis=1)
    eps = 1e-15
    loss = -float(np.sum(Y * np.log(P + eps))) / n + 0.5 * l2 * float(np.sum(W * W))
    D = (P - Y) / n
    gW = (X.T @ D) + l2 * W
    gb = D.sum(axis=0)
    return loss, np.asarray(gW), gb


def fit_text(
    docs: Sequence[Sequence[NoteDoc]],
    y,
    params: TextExpertParams,
    n_classes: Optional[int] = None,
) -> ExpertModel:
    """Hashed n-gram counts -> multinomial logistic regression (convex),
    full-batch gradient descent to gradient-norm tolerance or epoch cap."""
    params.validate()
    y, K = _check_labels(y, n_classes)
    if len(docs) != len(y):
        raise ExpertError("docs and labels must align")
    if len(np.unique(y)) < 2:
        return _prior_only_model("READER", y, K)
    X = reader_matrix(docs, params.ngram_orders, params.hash_dim)
    n = X.shape[0]
    Y = np.zeros((n, K))
    Y[np.arange(n), y] = 1.0
    W = np.zeros((params.hash_dim, K))
    b = np.zeros(K)
    log = []
    for _ in range(params.epochs):
        loss, gW, gb = _logistic_loss_and_grads(X, Y, W, b, params.l2)
        log.append(float(loss))
        gnorm = float(np.sqrt(np.sum(gW * gW) + np.sum(gb * gb)))
        if gnorm < params.tol:
            break
        W -= params.step_size * gW
        b -= params.step_size * gb
    return ExpertModel(
        kind="READER",
        n_classes=K,
        class_prior=_class_prior(y, K),
        net={"W": W, "b": b},
        config={
            "ngram_orders": list(params.ngram_orders),
            "hash_dim": params.hash_dim,
        },
        training_log=log,
    )


# ---------------------------------------------------------------------------
# Visionary
# ---------------------------------------------------------------------------


def _vision_loss_and_grads(net, X, Y, l2, want_grads=True):
    h_pre, c1 = nnet.affine_forward(X, net["W1"], net["b1"])
    h = np.tanh(h_pre)
    logits, c2 = nnet.affine_forward(h, net["W2"], net["b2"])
    loss, dlogits = nnet.softmax_ce(logits, Y)
    n = X.shape[0]
    loss /= n
    if l2 > 0:
        loss += 0.5 * l2 * (float(np.sum(net["W1"] ** 2)) + float(np.sum(net["W2"] ** 2)))
    if not want_grads:
        return loss, logits, None
    dlogits = dlogits / n
    grads = nnet.zeros_like_params(net)
    dh, grads["W2"], grads["b2"] = nnet.affine_backward(dlogits, c2)
    dpre = dh * (1.0 - h * h)
    _, grads["W1"], grads["b1"] = nnet.affine_backward(dpre, c1)
    if l2 > 0:
        grads["W1"] += l2 * net["W1"]
        grads["W2"] += l2 * net["W2"]
    return loss, logits, grads


def fit_vision(
    feats,
    y,
    params: VisionExpertParams,
    n_classes: Optional[int] = None,
) -> ExpertModel:
    """One-hidden-layer tanh network on image feature vectors."""
    params.validate()
    y, K = _check_labels(y, n_classes)
    X = np.asarray(feats, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise ExpertError("feats must be (n, d) aligned with y")
    if len(np.unique(y)) < 2:
        return _prior_only_model("VISIONARY", y, K)
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd < 1e-6, 1.0, sd)
    Xs = (X - mean) / sd
    n = len(y)
    Y = np.zeros((n, K))
    Y[np.arange(n), y] = 1.0
    rng = np.random.default_rng(params.seed)
    net: nnet.Params = {
        "W1": nnet.glorot(rng, (X.shape[1], params.hidden)),
        "b1": nnet.zeros(params.hidden),
        "W2": nnet.glorot(rng, (params.hidden, K)),
        "b2": nnet.zeros(K),
    }
    log = []
    best = {k: v.copy() for k, v in net.items()}
    best_loss = np.inf
    bad = 0
    for epoch in range(params.epochs):
        order = rng.permutation(n)
        for start in range(0, n, params.batch_size):
            batch = order[start : start + params.batch_size]
            _, _, grads = _vision_loss_and_grads(net, Xs[batch], Y[batch], params.l2)
            for k in net:
                net[k] -= params.step_size * grads[k]
        loss, _, _ = _vision_loss_and_grads(net, Xs, Y, params.l2, want_grads=False)
        log.append(float(loss))
        if loss < best_loss - 1e-12:
            best_loss = loss
            best = {k: v.copy() for k, v in net.items()}
            bad = 0
        else:
            bad += 1
            if bad > params.patience:
                break
    return ExpertModel(
        kind="VISIONARY",
        n_classes=K,
        class_prior=_class_prior(y, K),
        net=best,
        config={"feat_mean": mean, "feat_sd": sd},
        training_log=log,
    )


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


def expert_predict(model: ExpertModel, record: PatientRecord) -> np.ndarray:
    """Probability vector for one record; raises if the record lacks the
    modality this expert consumes."""
    if model.prior_only:
        return model.class_prior.copy()
    if model.kind == "HISTORIAN":
        return model.gbdt.predict_proba(static_features(record)[None, :])[0]
    if model.kind == "MONITOR":
        means = np.asarray(model.config["channel_means"], dtype=np.float64)
        sds = np.asarray(model.config["channel_sds"], dtype=np.float64)
        x = monitor_input(record.vitals, means, sds)
        return monitor_predict_proba(model.net, [x], model.config["cell"])[0]
    if model.kind == "READER":
        X = reader_matrix(
            [record.notes], model.config["ngram_orders"], int(model.config["hash_dim"])
        )
        if X.nnz == 0:
            return model.class_prior.copy()  # no evidence: fall back to the prior
        logits = X @ model.net["W"] + model.net["b"]
        return nnet.softmax(np.asarray(logits), axis=1)[0]
    if model.kind == "VISIONARY":
        if record.image is None:
            raise ExpertError(f"record {record.id}: no image features for the Visionary")
        mean = np.asarray(model.config["feat_mean"], dtype=np.float64)
        sd = np.asarray(model.config["feat_sd"], dtype=np.float64)
        x = ((record.image - mean) / sd)[None, :]
        h = np.tanh(x @ model.net["W1"] + model.net["b1"])
        logits = h @ model.net["W2"] + model.net["b2"]
        return nnet.softmax(logits, axis=1)[0]
    raise ExpertError(f"unknown expert kind {model.kind!r}")


def expert_predict_cohort(model: ExpertModel, cohort: Cohort) -> np.ndarray:
    """Vectorized per-kind batch prediction (same outputs as expert_predict)."""
    n = len(cohort)
    if model.prior_only:
        return np.tile(model.class_prior, (n, 1))
    if model.kind == "HISTORIAN":
        X = np.stack([static_features(r) for r in cohort.records])
        return model.gbdt.predict_proba(X)
    if model.kind == "MONITOR":
        means = np.asarray(model.config["channel_means"], dtype=np.float64)
        sds = np.asarray(model.config["channel_sds"], dtype=np.float64)
        arrays = [monitor_input(r.vitals, means, sds) for r in cohort.records]
        return monitor_predict_proba(model.net, arrays, model.config["cell"])
    if model.kind == "READER":
        X = reader_matrix(
            [r.notes for r in cohort.records],
            model.config["ngram_orders"],
            int(model.config["hash_dim"]),
        )
        probs = nnet.softmax(np.asarray(X @ model.net["W"] + model.net["b"]), axis=1)
        empty = np.asarray(X.sum(axis=1)).ravel() == 0
        probs[empty] = model.class_prior
        return probs
    if model.kind == "VISIONARY":
        out = np.empty((n, model.n_classes))
        for i, r in enumerate(cohort.records):
            out[i] = expert_predict(model, r)
        return out
    raise ExpertError(f"unknown expert kind {model.kind!r}")
