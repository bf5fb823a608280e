"""Minimal neural-network layers with hand-written exact gradients.

Everything is float64 numpy. Layers are pure forward/backward function
pairs over parameter dicts, so composite losses can be finite-difference
checked coordinate by coordinate. No autograd, no adaptive optimizer
state: training is plain mini-batch gradient descent, which keeps runs
bit-deterministic for a given seed.
"""

from __future__ import annotations

import hashlib
from typing import Callable, Iterable, Sequence

import numpy as np

Params = dict[str, np.ndarray]


# ---------------------------------------------------------------------------
# initialization / parameter flattening
# ---------------------------------------------------------------------------


def glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = shape[0] if len(shape) > 1 else shape[0]
    fan_out = shape[-1]
    scale = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.standard_normal(shape) * scale


def zeros(shape) -> np.ndarray:
    return np.zeros(shape, dtype=np.float64)


def flatten_params(params: Params) -> tuple[np.ndarray, list[tuple[str, tuple]]]:
    layout = [(k, params[k].shape) for k in sorted(params)]
    flat = np.concatenate([params[k].ravel() for k, _ in layout]) if layout else np.zeros(0)
    return flat, layout


def unflatten_params(flat: np.ndarray, layout: list[tuple[str, tuple]]) -> Params:
    out: Params = {}
    i = 0
    for k, shape in layout:
        size = int(np.prod(shape)) if shape else 1
        out[k] = flat[i : i + size].reshape(shape).copy()
        i += size
    return out


def zeros_like_params(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


def add_scaled(dst: Params, src: Params, scale: float) -> None:
    for k, v in src.items():
        dst[k] += scale * v


# ---------------------------------------------------------------------------
# elementwise pieces
# ---------------------------------------------------------------------------


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_ce(logits: np.ndarray, y_onehot: np.ndarray) -> tuple[float, np.ndarray]:
    """Summed cross-entropy and gradient wrt logits (not averaged)."""
    p = softmax(logits, axis=1)
    eps = 1e-15
    loss = -float(np.sum(y_onehot * np.log(p + eps)))
    return loss, p - y_onehot


# ---------------------------------------------------------------------------
# affine
# ---------------------------------------------------------------------------


def affine_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray):
    return x @ W + b, (x, W)


def affine_backward(dout: np.ndarray, cache):
    x, W = cache
    dx = dout @ W.T
    dW = x.T @ dout
    db = dout.sum(axis=0)
    return dx, dW, db


# ---------------------------------------------------------------------------
# causal 1-D convolution over (B, T, F)
# ---------------------------------------------------------------------------


def conv1d_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray):
    """y[:, t] = sum_k x[:, t-k] @ W[k] + b, with left zero padding."""
    B, T, F = x.shape
    Kw = W.shape[0]
    xp = np.zeros((B, T + Kw - 1, F))
    xp[:, Kw - 1 :, :] = x
    y = np.tile(b, (B, T, 1))
    for k in range(Kw):
        y += xp[:, Kw - 1 - k : Kw - 1 - k + T, :] @ W[k]
    return y, (xp, W, x.shape)


def conv1d_backward(dout: np.ndarray, cache):
    xp, W, x_shape = cache
    B, T, F = x_shape
    Kw = W.shape[0]
    dW = np.zeros_like(W)
    dxp = np.zeros_like(xp)
    flat_dout = dout.reshape(B * T, -1)
    for k in range(Kw):
        seg = xp[:, Kw - 1 - k : Kw - 1 - k + T, :]
        dW[k] = seg.reshape(B * T, F).T @ flat_dout
        dxp[:, Kw - 1 - k : Kw - 1 - k + T, :] += dout @ W[k].T
    db = flat_dout.sum(axis=0)
    dx = dxp[:, Kw - 1 :, :]
    return dx, dW, db


# ---------------------------------------------------------------------------
# recurrent cells (GRU / LSTM), unidirectional over dense (B, T, F)
# ---------------------------------------------------------------------------


def gru_forward(x: np.ndarray, Wx: np.ndarray, Wh: np.ndarray, b: np.ndarray):
    """Gates packed [r | z | n]; returns hidden states (B, T, H)."""
    B, T, _ = x.shape
    H = Wh.shape[0]
    h = np.zeros((B, H))
    hs = np.zeros((B, T, H))
    caches = []
    for t in range(T):
        xt = x[:, t, :]
        gx = xt @ Wx + b
        gh = h @ Wh
        r = sigmoid(gx[:, :H] + gh[:, :H])
        z = sigmoid(gx[:, H : 2 * H] + gh[:, H : 2 * H])
        s = gh[:, 2 * H :]
        n = np.tanh(gx[:, 2 * H :] + r * s)
        h_new = (1.0 - z) * n + z * h
        caches.append((xt, h, r, z, n, s))
        h = h_new
        hs[:, t, :] = h
    return hs, (caches, Wx, Wh, x.shape)


def gru_backward(dhs: np.ndarray, cache):
    caches, Wx, Wh, x_shape = cache
    B, T, F = x_shape
    H = Wh.shape[0]
    dWx = np.zeros_like(Wx)
    dWh = np.zeros_like(Wh)
    db = np.zeros(3 * H)
    dx = np.zeros((B, T, F))
    dh = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        xt, h_prev, r, z, n, s = caches[t]
        dh = dh + dhs[:, t, :]
        dz = dh * (h_prev - n)
        dn = dh * (1.0 - z)
        dh_prev = dh * z
        da_n = dn * (1.0 - n * n)
        dr = da_n * s
        ds = da_n * r
        da_z = dz * z * (1.0 - z)
        da_r = dr * r * (1.0 - r)
        dgx = np.concatenate([da_r, da_z, da_n], axis=1)
        dgh = np.concatenate([da_r, da_z, ds], axis=1)
        dWx += xt.T @ dgx
        dWh += h_prev.T @ dgh
        db += dgx.sum(axis=0)
        dx[:, t, :] = dgx @ Wx.T
        dh = dh_prev + dgh @ Wh.T
    return dx, dWx, dWh, db


def lstm_forward(x: np.ndarray, Wx: np.ndarray, Wh: np.ndarray, b: np.ndarray):
    """Gates packed [i | f | g | o]; returns hidden states (B, T, H)."""
    B, T, _ = x.shape
    H = Wh.shape[0]
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    hs = np.zeros((B, T, H))
    caches = []
    for t in range(T):
        xt = x[:, t, :]
        a = xt @ Wx + h @ Wh + b
        i = sigmoid(a[:, :H])
        f = sigmoid(a[:, H : 2 * H])
        g = np.tanh(a[:, 2 * H : 3 * H])
        o = sigmoid(a[:, 3 * H :])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        caches.append((xt, h, c, i, f, g, o, tc))
        h, c = h_new, c_new
        hs[:, t, :] = h
    return hs, (caches, Wx, Wh, x.shape)


def lstm_backward(dhs: np.ndarray, cache):
    caches, Wx, Wh, x_shape = cache
    B, T, F = x_shape
    H = Wh.shape[0]
    dWx = np.zeros_like(Wx)
    dWh = np.zeros_like(Wh)
    db = np.zeros(4 * H)
    dx = np.zeros((B, T, F))
    dh = np.zeros((B, H))
    dc = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        xt, h_prev, c_prev, i, f, g, o, tc = caches[t]
        dh = dh + dhs[:, t, :]
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dc_prev = dc * f
        da = np.concatenate(
            [
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g * g),
                do * o * (1.0 - o),
            ],
            axis=1,
        )
        dWx += xt.T @ da
        dWh += h_prev.T @ da
        db += da.sum(axis=0)
        dx[:, t, :] = da @ Wx.T
        dh = da @ Wh.T
        dc = dc_prev
    return dx, dWx, dWh, db


def birnn_forward(x: np.ndarray, params: Params, prefix: str, cell: str):
    """Bidirectional recurrence; output is [forward ; backward] (B, T, 2H)."""
    fwd = gru_forward if cell == "gru" else lstm_forward
    hs_f, cache_f = fwd(x, params[f"{prefix}_Wx_f"], params[f"{prefix}_Wh_f"], params[f"{prefix}_b_f"])
    x_rev = x[:, ::-1, :]
    hs_b_rev, cache_b = fwd(
        x_rev, params[f"{prefix}_Wx_b"], params[f"{prefix}_Wh_b"], params[f"{prefix}_b_b"]
    )
    hs_b = hs_b_rev[:, ::-1, :]
    return np.concatenate([hs_f, hs_b], axis=2), (cache_f, cache_b, cell, hs_f.shape[2])


def birnn_backward(dout: np.ndarray, cache, grads: Params, prefix: str):
    cache_f, cache_b, cell, H = cache
    bwd = gru_backward if cell == "gru" else lstm_backward
    dx_f, dWx_f, dWh_f, db_f = bwd(dout[:, :, :H], cache_f)
    dx_b_rev, dWx_b, dWh_b, db_b = bwd(dout[:, ::-1, H:], cache_b)
    grads[f"{prefix}_Wx_f"] += dWx_f
    grads[f"{prefix}_Wh_f"] += dWh_f
    grads[f"{prefix}_b_f"] += db_f
    grads[f"{prefix}_Wx_b"] += dWx_b
    grads[f"{prefix}_Wh_b"] += dWh_b
    grads[f"{prefix}_b_b"] += db_b
    return dx_f + dx_b_rev[:, ::-1, :]


def birnn_param_shapes(n_in: int, hidden: int, cell: str) -> dict[str, tuple]:
    gates = 3 if cell == "gru" else 4
    return {
        "Wx_f": (n_in, gates * hidden),
        "Wh_f": (hidden, gates * hidden),
        "b_f": (gates * hidden,),
        "Wx_b": (n_in, gates * hidden),
        "Wh_b": (hidden, gates * hidden),
        "b_b": (gates * hidden,),
    }


# ---------------------------------------------------------------------------
# additive attention pooling over time
# ---------------------------------------------------------------------------


def attn_pool_forward(H: np.ndarray, Wa: np.ndarray, ba: np.ndarray, va: np.ndarray):
    """pooled = sum_t alpha_t * H_t with alpha = softmax(va . tanh(H Wa + ba))."""
    u = np.tanh(H @ Wa + ba)  # (B, T, A)
    e = u @ va  # (B, T)
    alpha = softmax(e, axis=1)
    pooled = np.einsum("bt,btd->bd", alpha, H)
    return pooled, alpha, (H, Wa, va, u, alpha)


def attn_pool_backward(dpooled: np.ndarray, cache):
    H, Wa, va, u, alpha = cache
    dalpha = np.einsum("bd,btd->bt", dpooled, H)
    dH = alpha[:, :, None] * dpooled[:, None, :]
    de = alpha * (dalpha - np.sum(dalpha * alpha, axis=1, keepdims=True))
    du = de[:, :, None] * va
    dva = np.einsum("bta,bt->a", u, de)
    da = du * (1.0 - u * u)
    B, T, _ = H.shape
    dWa = H.reshape(B * T, -1).T @ da.reshape(B * T, -1)
    dba = da.sum(axis=(0, 1))
    dH += da @ Wa.T
    return dH, dWa, dba, dva


# ---------------------------------------------------------------------------
# gated additive attention of a query over note embeddings
# ---------------------------------------------------------------------------


def gated_note_attention_forward(
    h: np.ndarray,
    E: np.ndarray,
    note_mask: np.ndarray,
    Wq: np.ndarray,
    Wk: np.ndarray,
    v: np.ndarray,
    Wg: np.ndarray,
    bg: np.ndarray,
    Wv: np.ndarray,
):
    """fused = g*h + (1-g)*(Wv c), c = sum_j alpha_j E_j.

    h: (B, Dh) query; E: (B, N, De) padded note embeddings; note_mask (B, N)
    marks real notes. Records with zero notes get c = 0 and the same gate
    formula.
    """
    q = h @ Wq  # (B, A)
    k = E @ Wk  # (B, N, A)
    u = np.tanh(q[:, None, :] + k)  # (B, N, A)
    e = u @ v  # (B, N)
    # stable masked softmax; all-masked rows yield alpha = 0
    e_masked = np.where(note_mask, e, -1e30)
    m = e_masked.max(axis=1, keepdims=True)
    ex = np.exp(e_masked - m) * note_mask
    denom = ex.sum(axis=1)
    alpha = ex / np.where(denom == 0, 1.0, denom)[:, None]
    c = np.einsum("bn,bnd->bd", alpha, E)  # (B, De)
    hc = np.concatenate([h, c], axis=1)
    g = sigmoid(hc @ Wg + bg)  # (B, Dh)
    cv = c @ Wv  # (B, Dh)
    fused = g * h + (1.0 - g) * cv
    cache = (h, E, note_mask, Wq, Wk, v, Wg, Wv, u, alpha, c, hc, g, cv)
    return fused, alpha, cache


def gated_note_attention_backward(dfused: np.ndarray, cache):
    (h, E, note_mask, Wq, Wk, v, Wg, Wv, u, alpha, c, hc, g, cv) = cache
    B, N, De = E.shape
    Dh = h.shape[1]
    dg = dfused * (h - cv)
    dh = dfused * g
    dcv = dfused * (1.0 - g)
    dWv = c.T @ dcv
    dc = dcv @ Wv.T
    da_g = dg * g * (1.0 - g)
    dWg = hc.T @ da_g
    dbg = da_g.sum(axis=0)
    dhc = da_g @ Wg.T
    dh += dhc[:, :Dh]
    dc += dhc[:, Dh:]
    # context backward
    dalpha = np.einsum("bd,bnd->bn", dc, E)
    dE = alpha[:, :, None] * dc[:, None, :]
    de = alpha * (dalpha - np.sum(dalpha * alpha, axis=1, keepdims=True))
    de = np.where(note_mask, de, 0.0)
    du = de[:, :, None] * v
    dv = np.einsum("bna,bn->a", u, de)
    dpre = du * (1.0 - u * u)
    dq = dpre.sum(axis=1)  # (B, A)
    dWq = h.T @ dq
    dh += dq @ Wq.T
    dWk = E.reshape(B * N, De).T @ dpre.reshape(B * N, -1)
    dE += dpre @ Wk.T
    return dh, dE, {"Wq": dWq, "Wk": dWk, "v": dv, "Wg": dWg, "bg": dbg, "Wv": dWv}


# ---------------------------------------------------------------------------
# embedding bag: per-note mean of hashed token embeddings
# ---------------------------------------------------------------------------


def embed_notes_forward(
    Emb: np.ndarray, flat_ids: np.ndarray, note_of_token: np.ndarray, n_notes: int
):
    """E[p] = mean of Emb[token ids of note p]; empty notes embed to zero."""
    De = Emb.shape[1]
    sums = np.zeros((n_notes, De))
    counts = np.zeros(n_notes)
    if len(flat_ids):
        np.add.at(sums, note_of_token, Emb[flat_ids])
        np.add.at(counts, note_of_token, 1.0)
    denom = np.where(counts == 0, 1.0, counts)
    E = sums / denom[:, None]
    return E, (flat_ids, note_of_token, denom, Emb.shape)


def embed_notes_backward(dE: np.ndarray, cache):
    flat_ids, note_of_token, denom, emb_shape = cache
    dEmb = np.zeros(emb_shape)
    if len(flat_ids):
        dflat = dE[note_of_token] / denom[note_of_token][:, None]
        np.add.at(dEmb, flat_ids, dflat)
    return dEmb


# ---------------------------------------------------------------------------
# token hashing (stable across platforms and processes)
# ---------------------------------------------------------------------------

_HASH_CACHE: dict[str, int] = {}


def stable_token_hash(text: str) -> int:
    h = _HASH_CACHE.get(text)
    if h is None:
        h = int.from_bytes(
            hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little"
        )
        if len(_HASH_CACHE) < 2_000_000:
            _HASH_CACHE[text] = h
    return h


def hash_ngrams(tokens: Sequence[str], orders: Iterable[int], dim: int) -> dict[int, float]:
    """Hashed n-gram counts for one token sequence (n-grams never cross the
    sequence boundary; callers hash each note separately or concatenate)."""
    counts: dict[int, float] = {}
    toks = list(tokens)
    for n in orders:
        for i in range(len(toks) - n + 1):
            key = "\x1f".join(toks[i : i + n])
            idx = stable_token_hash(key) % dim
            counts[idx] = counts.get(idx, 0.0) + 1.0
    return counts


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------


def grad_check(
    loss_fn: Callable[[Params], float],
    params: Params,
    analytic: Params,
    eps: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-5,
) -> float:
    """Max relative error between analytic gradients and central differences.

    Relative error per coordinate: |a - n| / max(floor, |a| + |n|). Central
    differences carry absolute roundoff ~ eps_mach * |loss| / (2 * eps), so
    coordinates whose true gradient sits at that noise level would report
    spurious relative error without the floor; any real backprop defect
    shows up at coordinates with non-negligible gradients, where the floor
    is inactive. Checks every coordinate unless max_coords caps it.
    """
    flat, layout = flatten_params(params)
    aflat, _ = flatten_params(analytic)
    idx = np.arange(len(flat))
    if max_coords is not None and len(idx) > max_coords:
        rng = rng or np.random.default_rng(0)
        idx = np.sort(rng.choice(len(flat), size=max_coords, replace=False))
    worst = 0.0
    for i in idx:
        orig = flat[i]
        flat[i] = orig + eps
        lp = loss_fn(unflatten_params(flat, layout))
        flat[i] = orig - eps
        lm = loss_fn(unflatten_params(flat, layout))
        flat[i] = orig
        num = (lp - lm) / (2 * eps)
        denom = max(floor, abs(aflat[i]) + abs(num))
        worst = max(worst, abs(aflat[i] - num) / denom)
    return worst
