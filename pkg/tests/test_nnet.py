import numpy as np
import pytest

from sepsisfusion import nnet


def _rand_params(rng, shapes):
    return {k: rng.standard_normal(shp) * 0.4 if len(shp) else rng.standard_normal() for k, shp in shapes.items()}


class TestRecurrentGradients:
    @pytest.mark.parametrize("cell", ["gru", "lstm"])
    def test_birnn_attention_head_gradients(self, cell):
        rng = np.random.default_rng(0)
        B, T, F, H, K = 3, 5, 4, 3, 2
        x = rng.standard_normal((B, T, F))
        y = np.zeros((B, K))
        y[np.arange(B), rng.integers(0, K, B)] = 1
        params = {}
        for k, shp in nnet.birnn_param_shapes(F, H, cell).items():
            params["rnn_" + k] = rng.standard_normal(shp) * 0.4
        params["Wa"] = rng.standard_normal((2 * H, H)) * 0.4
        params["ba"] = rng.standard_normal(H) * 0.1
        params["va"] = rng.standard_normal(H) * 0.4
        params["Wo"] = rng.standard_normal((2 * H, K)) * 0.4
        params["bo"] = rng.standard_normal(K) * 0.1

        def loss_fn(p, want=False):
            hs, c1 = nnet.birnn_forward(x, p, "rnn", cell)
            pooled, _, c2 = nnet.attn_pool_forward(hs, p["Wa"], p["ba"], p["va"])
            logits, c3 = nnet.affine_forward(pooled, p["Wo"], p["bo"])
            loss, dlogits = nnet.softmax_ce(logits, y)
            if not want:
                return loss
            grads = nnet.zeros_like_params(p)
            dpooled, grads["Wo"], grads["bo"] = nnet.affine_backward(dlogits, c3)
            dhs, grads["Wa"], grads["ba"], grads["va"] = nnet.attn_pool_backward(dpooled, c2)
            nnet.birnn_backward(dhs, c1, grads, "rnn")
            return loss, grads

        _, grads = loss_fn(params, want=True)
        err = nnet.grad_check(lambda p: loss_fn(p), params, grads)
        assert err <= 1e-4

    def test_conv1d_gradients(self):
        rng = np.random.default_rng(1)
        B, T, F, C = 2, 6, 3, 4
        x = rng.standard_normal((B, T, F))
        W = rng.standard_normal((3, F, C)) * 0.4
        b = rng.standard_normal(C) * 0.1

        def loss_fn(p, want=False):
            y, cache = nnet.conv1d_forward(x, p["W"], p["b"])
            loss = float(np.sum(np.tanh(y)))
            if not want:
                return loss
            dy = 1 - np.tanh(y) ** 2
            _, dW, db = nnet.conv1d_backward(dy, cache)
            return loss, {"W": dW, "b": db}

        _, grads = loss_fn({"W": W, "b": b}, want=True)
        err = nnet.grad_check(lambda p: loss_fn(p), {"W": W, "b": b}, grads)
        assert err <= 1e-4

    def test_conv1d_causality(self):
        # output at step t must not depend on inputs after t
        rng = np.random.default_rng(2)
        x = rng.standard_normal((1, 8, 3))
        W = rng.standard_normal((3, 3, 2))
        b = np.zeros(2)
        y1, _ = nnet.conv1d_forward(x, W, b)
        x2 = x.copy()
        x2[0, 5:, :] = 99.0
        y2, _ = nnet.conv1d_forward(x2, W, b)
        assert np.array_equal(y1[0, :5], y2[0, :5])


class TestAttentionPooling:
    def test_weights_sum_to_one(self):
        rng = np.random.default_rng(3)
        H = rng.standard_normal((4, 7, 5))
        Wa = rng.standard_normal((5, 3))
        ba = rng.standard_normal(3)
        va = rng.standard_normal(3)
        _, alpha, _ = nnet.attn_pool_forward(H, Wa, ba, va)
        assert np.all(np.abs(alpha.sum(axis=1) - 1.0) < 1e-9)

    def test_shift_invariance_of_softmax_scores(self):
        # adding a constant to every score leaves the weights unchanged
        rng = np.random.default_rng(4)
        e = rng.standard_normal((3, 6))
        a1 = nnet.softmax(e, axis=1)
        a2 = nnet.softmax(e + 7.3, axis=1)
        assert np.allclose(a1, a2, atol=1e-15)


class TestEmbeddingAndHashing:
    def test_embed_bag_mean_and_empty_note(self):
        Emb = np.arange(12, dtype=np.float64).reshape(6, 2)
        flat_ids = np.array([0, 2, 4])
        note_of_token = np.array([0, 0, 1])
        E, _ = nnet.embed_notes_forward(Emb, flat_ids, note_of_token, 3)
        assert np.allclose(E[0], (Emb[0] + Emb[2]) / 2)
        assert np.allclose(E[1], Emb[4])
        assert np.allclose(E[2], 0.0)  # note with no tokens

    def test_stable_hash_is_process_independent(self):
        # frozen value: blake2b digest must never drift across runs/platforms
        assert nnet.stable_token_hash("mrsa") % 2**15 == 26343

    def test_hash_ngrams_orders(self):
        counts = nnet.hash_ngrams(["a", "b", "a"], (1, 2), 1 << 10)
        assert sum(counts.values()) == 5  # 3 unigrams + 2 bigrams
