"""End-to-end deep fusion: a bidirectional GRU over vitals whose pooled
state queries note embeddings through gated additive attention, combined
hierarchically with linear static and vision codes.

Fusion algebra (per record):

    e_j   = v . tanh(Wq h + Wk E_j)          scores over note embeddings
    alpha = softmax(e)                        attention weights
    c     = sum_j alpha_j E_j                 note context (0 with no notes)
    g     = logistic(Wg [h ; c] + bg)         elementwise gate
    fused = g * h + (1 - g) * (Wv c)

followed by concat([fused, static_code, vision_code]) -> linear -> softmax.
A record without image features contributes a learned missing-flag bias in
place of its vision code. The forward pass is invariant to note order:
notes are canonicalized by (timestamp, tokens) before batching.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import nnet
from .cohort import Cohort, PatientRecord, task_labels
from .metrics import macro_ovr_auc, roc_auc

FF_FORMAT_VERSION = 1


class FusionFormerError(ValueError):
    pass


@dataclass
class FusionFormerParams:
    gru_hidden: int = 64  # per direction
    note_embed_dim: int = 32
    attn_dim: int = 32
    hash_dim: int = 2**15
    static_code_dim: int = 8
    vision_code_dim: int = 8
    step_size: float = 0.05
    batch_size: int = 64
    epochs: int = 60
    patience: int = 10
    l2: float = 0.0
    seed: int = 0

    def validate(self):
        for v, nm in (
            (self.gru_hidden, "gru_hidden"),
            (self.note_embed_dim, "note_embed_dim"),
            (self.attn_dim, "attn_dim"),
            (self.static_code_dim, "static_code_dim"),
            (self.vision_code_dim, "vision_code_dim"),
        ):
            if v < 1:
                raise FusionFormerError(f"{nm} must be >= 1")
        if self.hash_dim < 2 or self.hash_dim & (self.hash_dim - 1):
            raise FusionFormerError("hash_dim must be a power of two")
        if self.step_size <= 0:
            raise FusionFormerError("step_size must be positive")


@dataclass
class FusionFormerModel:
    net: nnet.Params
    n_classes: int
    class_prior: np.ndarray
    config: dict
    prior_only: bool = False

    def to_dict(self) -> dict:
        return {
            "format_version": FF_FORMAT_VERSION,
            "kind": "fusionformer",
            "n_classes": self.n_classes,
            "class_prior": self.class_prior.tolist(),
            "prior_only": self.prior_only,
            "config": {
                k: (v.tolist() if isinstance(v, np.ndarray) else v)
                for k, v in self.config.items()
            },
            "net": {
                k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                for k, v in sorted(self.net.items())
            },
        }

    @staticmethod
    def from_dict(d: dict) -> "FusionFormerModel":
        if d.get("format_version") != FF_FORMAT_VERSION:
            raise FusionFormerError("unsupported fusionformer format_version")
        return FusionFormerModel(
            net={
                k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"])
                for k, v in d["net"].items()
            },
            n_classes=int(d["n_classes"]),
            class_prior=np.asarray(d["class_prior"], dtype=np.float64),
            config=d["config"],
            prior_only=bool(d["prior_only"]),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, separators=(",", ":"))

    @staticmethod
    def load(path) -> "FusionFormerModel":
        with open(path, "r", encoding="utf-8") as fh:
            return FusionFormerModel.from_dict(json.load(fh))


@dataclass
class TrainingCurves:
    train_auc: list[float] = field(default_factory=list)
    val_auc: list[float] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def to_csv(self) -> str:
        lines = ["epoch,train_auc,val_auc,train_loss,val_loss"]
        for i in range(len(self.train_auc)):
            lines.append(
                f"{i},{self.train_auc[i]:.10g},{self.val_auc[i]:.10g},"
                f"{self.train_loss[i]:.10g},{self.val_loss[i]:.10g}"
            )
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# dataset preparation
# ---------------------------------------------------------------------------


def _canonical_notes(record: PatientRecord):
    return sorted(record.notes, key=lambda n: (n.timestamp, n.tokens))


@dataclass
class _FFRecord:
    vitals: np.ndarray  # (T, F) standardized
    note_token_ids: list[np.ndarray]  # per note, hashed unigram ids
    static: np.ndarray
    image: Optional[np.ndarray]


class FFDataset:
    """Preprocessed tensors for a cohort under one preprocessing config."""

    def __init__(self, records: list[_FFRecord], y: Optional[np.ndarray], K: int):
        self.records = records
        self.y = y
        self.K = K

    def __len__(self):
        return len(self.records)


def _standardize_stats(cohort: Cohort):
    F = len(cohort.schema.vital_channels)
    sums = np.zeros(F)
    sqs = np.zeros(F)
    counts = np.zeros(F)
    for r in cohort.records:
        pres = r.vitals.mask.astype(bool)
        vals = np.where(pres, r.vitals.values, 0.0)
        sums += vals.sum(axis=0)
        sqs += (vals * vals).sum(axis=0)
        counts += pres.sum(axis=0)
    counts = np.maximum(counts, 1.0)
    means = sums / counts
    sds = np.sqrt(np.maximum(sqs / counts - means**2, 1e-12))
    sds = np.where(sds < 1e-6, 1.0, sds)

    S = np.stack([r.static.numeric for r in cohort.records])
    s_mean = S.mean(axis=0)
    s_sd = S.std(axis=0)
    s_sd = np.where(s_sd < 1e-6, 1.0, s_sd)
    return means, sds, s_mean, s_sd


def _static_vector(record: PatientRecord, config: dict) -> np.ndarray:
    s_mean = np.asarray(config["static_mean"], dtype=np.float64)
    s_sd = np.asarray(config["static_sd"], dtype=np.float64)
    num = (record.static.numeric - s_mean) / s_sd
    onehots = []
    for j, card in enumerate(config["cat_cardinalities"]):
        oh = np.zeros(card)
        oh[int(record.static.categorical[j])] = 1.0
        onehots.append(oh)
    return np.concatenate([num] + onehots) if onehots else num


def _prep_record(record: PatientRecord, config: dict) -> _FFRecord:
    from .experts import monitor_input  # shared imputation path

    means = np.asarray(config["channel_means"], dtype=np.float64)
    sds = np.asarray(config["channel_sds"], dtype=np.float64)
    vit = monitor_input(record.vitals, means, sds)
    dim = int(config["hash_dim"])
    ids = [
        np.array(
            [nnet.stable_token_hash(t) % dim for t in note.tokens], dtype=np.int64
        )
        for note in _canonical_notes(record)
    ]
    return _FFRecord(
        vitals=vit,
        note_token_ids=ids,
        static=_static_vector(record, config),
        image=record.image,
    )


def prepare_dataset(
    cohort: Cohort, config: dict, task: Optional[str] = None, K: Optional[int] = None
) -> FFDataset:
    y = task_labels(cohort, task) if task is not None else None
    recs = [_prep_record(r, config) for r in cohort.records]
    if K is None:
        K = int(y.max()) + 1 if y is not None else 2
    return FFDataset(recs, y, K)


# ---------------------------------------------------------------------------
# parameter init and forward/backward
# ---------------------------------------------------------------------------


def init_params(
    params: FusionFormerParams, n_channels: int, static_dim: int, image_dim: int, K: int
) -> nnet.Params:
    rng = np.random.default_rng(params.seed)
    H = params.gru_hidden
    Dh = 2 * H
    De = params.note_embed_dim
    A = params.attn_dim
    net: nnet.Params = {}
    for k, shp in nnet.birnn_param_shapes(n_channels, H, "gru").items():
        net["rnn_" + k] = nnet.glorot(rng, shp) if len(shp) > 1 else nnet.zeros(shp)
    net["tattn_Wa"] = nnet.glorot(rng, (Dh, H))
    net["tattn_ba"] = nnet.zeros(H)
    net["tattn_va"] = nnet.glorot(rng, (H, 1))[:, 0]
    net["Emb"] = rng.standard_normal((params.hash_dim, De)) * 0.1
    net["Wq"] = nnet.glorot(rng, (Dh, A))
    net["Wk"] = nnet.glorot(rng, (De, A))
    net["v"] = nnet.glorot(rng, (A, 1))[:, 0]
    net["Wg"] = nnet.glorot(rng, (Dh + De, Dh))
    net["bg"] = nnet.zeros(Dh)
    net["Wv"] = nnet.glorot(rng, (De, Dh))
    net["Ws"] = nnet.glorot(rng, (static_dim, params.static_code_dim))
    net["bs"] = nnet.zeros(params.static_code_dim)
    net["Wi"] = nnet.glorot(rng, (image_dim, params.vision_code_dim))
    net["bi"] = nnet.zeros(params.vision_code_dim)
    net["b_miss"] = nnet.zeros(params.vision_code_dim)
    net["Wf"] = nnet.glorot(
        rng, (Dh + params.static_code_dim + params.vision_code_dim, K)
    )
    net["bf"] = nnet.zeros(K)
    return net


def _batch_tensors(ds: FFDataset, idx: np.ndarray, image_dim: int):
    B = len(idx)
    # padded note structures
    n_notes = np.array([len(ds.records[i].note_token_ids) for i in idx])
    N_max = max(1, int(n_notes.max()) if B else 1)
    mask = np.zeros((B, N_max), dtype=bool)
    flat_ids = []
    note_of_token = []
    owner = []  # (b, j) per flat note
    p = 0
    for b, i in enumerate(idx):
        for j, ids in enumerate(ds.records[i].note_token_ids):
            mask[b, j] = True
            owner.append((b, j))
            flat_ids.append(ids)
            note_of_token.append(np.full(len(ids), p, dtype=np.int64))
            p += 1
    flat_ids = np.concatenate(flat_ids) if flat_ids else np.zeros(0, dtype=np.int64)
    note_of_token = (
        np.concatenate(note_of_token) if note_of_token else np.zeros(0, dtype=np.int64)
    )
    owner_b = np.array([o[0] for o in owner], dtype=np.int64)
    owner_j = np.array([o[1] for o in owner], dtype=np.int64)
    static = np.stack([ds.records[i].static for i in idx])
    img = np.zeros((B, image_dim))
    img_flag = np.zeros(B)
    for b, i in enumerate(idx):
        if ds.records[i].image is not None:
            img[b] = ds.records[i].image
            img_flag[b] = 1.0
    return mask, flat_ids, note_of_token, owner_b, owner_j, p, static, img, img_flag


def forward_batch(
    net: nnet.Params,
    ds: FFDataset,
    idx: np.ndarray,
    image_dim: int,
    y_onehot: Optional[np.ndarray] = None,
    want_grads: bool = False,
):
    """Forward (and optionally backward) over a batch of record indices.

    Returns (probs, summed loss, grads or None).
    """
    B = len(idx)
    (mask, flat_ids, note_of_token, owner_b, owner_j, n_flat_notes,
     static, img, img_flag) = _batch_tensors(ds, idx, image_dim)
    Dh = net["Wq"].shape[0]
    De = net["Emb"].shape[1]
    K = net["bf"].shape[0]

    # temporal encoder, bucketed by series length
    h = np.zeros((B, Dh))
    buckets: list[tuple[np.ndarray, tuple, tuple]] = []
    by_len: dict[int, list[int]] = {}
    for b, i in enumerate(idx):
        by_len.setdefault(ds.records[i].vitals.shape[0], []).append(b)
    for T, members in sorted(by_len.items()):
        members = np.array(members)
        x = np.stack([ds.records[idx[b]].vitals for b in members])
        hs, c_rnn = nnet.birnn_forward(x, net, "rnn", "gru")
        pooled, _, c_att = nnet.attn_pool_forward(
            hs, net["tattn_Wa"], net["tattn_ba"], net["tattn_va"]
        )
        h[members] = pooled
        buckets.append((members, c_rnn, c_att))

    # note embeddings
    E_flat, c_emb = nnet.embed_notes_forward(net["Emb"], flat_ids, note_of_token, n_flat_notes)
    N_max = mask.shape[1]
    E = np.zeros((B, N_max, De))
    if n_flat_notes:
        E[owner_b, owner_j] = E_flat

    fused, alpha, c_fuse = nnet.gated_note_attention_forward(
        h, E, mask, net["Wq"], net["Wk"], net["v"], net["Wg"], net["bg"], net["Wv"]
    )
    static_code, c_s = nnet.affine_forward(static, net["Ws"], net["bs"])
    img_code_present, c_i = nnet.affine_forward(img, net["Wi"], net["bi"])
    vision_code = img_flag[:, None] * img_code_present + (1.0 - img_flag)[:, None] * net["b_miss"]
    z = np.concatenate([fused, static_code, vision_code], axis=1)
    logits, c_f = nnet.affine_forward(z, net["Wf"], net["bf"])
    probs = nnet.softmax(logits, axis=1)
    if y_onehot is None:
        return probs, 0.0, None
    loss, dlogits = nnet.softmax_ce(logits, y_onehot)
    if not want_grads:
        return probs, loss, None

    grads = nnet.zeros_like_params(net)
    dz, grads["Wf"], grads["bf"] = nnet.affine_backward(dlogits, c_f)
    Cs = net["bs"].shape[0]
    dfused = dz[:, :Dh]
    dstatic_code = dz[:, Dh : Dh + Cs]
    dvision_code = dz[:, Dh + Cs :]
    grads["b_miss"] += ((1.0 - img_flag)[:, None] * dvision_code).sum(axis=0)
    dimg_code = img_flag[:, None] * dvision_code
    _, grads["Wi"], grads["bi"] = nnet.affine_backward(dimg_code, c_i)
    _, grads["Ws"], grads["bs"] = nnet.affine_backward(dstatic_code, c_s)
    dh, dE, g_fuse = nnet.gated_note_attention_backward(dfused, c_fuse)
    for k, v in g_fuse.items():
        grads[k] += v
    if n_flat_notes:
        dE_flat = dE[owner_b, owner_j]
        grads["Emb"] += nnet.embed_notes_backward(dE_flat, c_emb)
    for members, c_rnn, c_att in buckets:
        dpooled = dh[members]
        dhs, dWa, dba, dva = nnet.attn_pool_backward(dpooled, c_att)
        grads["tattn_Wa"] += dWa
        grads["tattn_ba"] += dba
        grads["tattn_va"] += dva
        nnet.birnn_backward(dhs, c_rnn, grads, "rnn")
    return probs, loss, grads


# ---------------------------------------------------------------------------
# public ops
# ---------------------------------------------------------------------------


def model_config(cohort: Cohort, params: FusionFormerParams) -> dict:
    means, sds, s_mean, s_sd = _standardize_stats(cohort)
    return {
        "hash_dim": params.hash_dim,
        "channel_means": means,
        "channel_sds": sds,
        "static_mean": s_mean,
        "static_sd": s_sd,
        "cat_cardinalities": [c.cardinality for c in cohort.schema.categorical_features],
        "image_dim": cohort.schema.image_dim,
    }


def fusionformer_forward(record: PatientRecord, model: FusionFormerModel) -> np.ndarray:
    """Probability vector for one (guarded) record."""
    if model.prior_only:
        return model.class_prior.copy()
    if record.vitals.length < 1:
        raise FusionFormerError(f"record {record.id}: empty vitals series")
    ds = FFDataset([_prep_record(record, model.config)], None, model.n_classes)
    probs, _, _ = forward_batch(
        model.net, ds, np.arange(1), int(model.config["image_dim"])
    )
    return probs[0]


def predict_cohort(model: FusionFormerModel, cohort: Cohort) -> np.ndarray:
    if model.prior_only:
        return np.tile(model.class_prior, (len(cohort), 1))
    ds = prepare_dataset(cohort, model.config, task=None, K=model.n_classes)
    return _predict_dataset(model.net, ds, int(model.config["image_dim"]))


def _predict_dataset(net: nnet.Params, ds: FFDataset, image_dim: int) -> np.ndarray:
    out = np.zeros((len(ds), net["bf"].shape[0]))
    for start in range(0, len(ds), 256):
        idx = np.arange(start, min(start + 256, len(ds)))
        probs, _, _ = forward_batch(net, ds, idx, image_dim)
        out[idx] = probs
    return out


def _auc_of(probs: np.ndarray, y: np.ndarray) -> float:
    if probs.shape[1] == 2:
        return roc_auc(probs[:, 1], (y == 1).astype(float))
    return macro_ovr_auc(probs, y)


def train_fusionformer(
    cohort: Cohort,
    params: FusionFormerParams,
    task: str,
    val_cohort: Optional[Cohort] = None,
    n_classes: Optional[int] = None,
) -> tuple[FusionFormerModel, TrainingCurves]:
    """End-to-end cross-entropy training, early stopping on validation AUC.

    Without an explicit validation cohort, an internal stratified 80/10/10
    split is drawn and the 10% validation slice drives early stopping.
    """
    params.validate()
    from .cohort import split_cohort, task_class_names

    if val_cohort is None:
        cohort, val_cohort, _ = split_cohort(cohort, (0.8, 0.1, 0.1), task, params.seed)
    y = task_labels(cohort, task)
    K = n_classes if n_classes is not None else len(task_class_names(task))
    config = model_config(cohort, params)
    prior = np.array([(y == c).mean() for c in range(K)])
    if len(np.unique(y)) < 2:
        model = FusionFormerModel(
            net={}, n_classes=K, class_prior=prior, config=config, prior_only=True
        )
        return model, TrainingCurves()

    ds = prepare_dataset(cohort, config, task, K)
    ds_val = prepare_dataset(val_cohort, config, task, K)
    y_val = ds_val.y
    n = len(ds)
    Y = np.zeros((n, K))
    Y[np.arange(n), y] = 1.0
    image_dim = int(config["image_dim"])

    F = len(cohort.schema.vital_channels)
    net = init_params(params, F, ds.records[0].static.shape[0], image_dim, K)
    rng = np.random.default_rng((params.seed, 2))
    curves = TrainingCurves()
    best = {k: v.copy() for k, v in net.items()}
    best_val = -np.inf
    bad = 0
    # equal-length groups keep each gradient step a single dense BPTT pass
    by_len: dict[int, list[int]] = {}
    for i in range(n):
        by_len.setdefault(ds.records[i].vitals.shape[0], []).append(i)
    groups = [np.array(v) for _, v in sorted(by_len.items())]
    for epoch in range(params.epochs):
        for grp in groups:
            order = grp[rng.permutation(len(grp))]
            for start in range(0, len(order), params.batch_size):
                batch = order[start : start + params.batch_size]
                _, loss, grads = forward_batch(
                    net, ds, batch, image_dim, Y[batch], want_grads=True
                )
                scale = params.step_size / len(batch)
                for k in net:
                    upd = grads[k]
                    if params.l2 > 0:
                        upd = upd + params.l2 * len(batch) * net[k]
                    net[k] -= scale * upd
        train_probs = _predict_dataset(net, ds, image_dim)
        val_probs = _predict_dataset(net, ds_val, image_dim)
        eps = 1e-15
        tr_loss = -float(np.mean(np.log(train_probs[np.arange(n), y] + eps)))
        va_loss = -float(
            np.mean(np.log(val_probs[np.arange(len(y_val)), y_val] + eps))
        )
        tr_auc = _auc_of(train_probs, y)
        va_auc = _auc_of(val_probs, y_val)
        curves.train_auc.append(tr_auc)
        curves.val_auc.append(va_auc)
        curves.train_loss.append(tr_loss)
        curves.val_loss.append(va_loss)
        if va_auc > best_val + 1e-12:
            best_val = va_auc
            best = {k: v.copy() for k, v in net.items()}
            curves.best_epoch = epoch
            bad = 0
        else:
            bad += 1
            if bad > params.patience:
                break

    model = FusionFormerModel(
        net=best, n_classes=K, class_prior=prior, config=config, prior_only=False
    )
    return model, curves
