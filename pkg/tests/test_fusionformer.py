import dataclasses

import numpy as np
import pytest

from sepsisfusion import nnet
from sepsisfusion.fusionformer import (
    FusionFormerModel,
    FusionFormerParams,
    TrainingCurves,
    forward_batch,
    fusionformer_forward,
    init_params,
    model_config,
    prepare_dataset,
    train_fusionformer,
)
from sepsisfusion.nnet import gated_note_attention_forward
from sepsisfusion.synthgen import generate_cohort


def tiny_params(seed=0):
    return FusionFormerParams(
        gru_hidden=3, note_embed_dim=3, attn_dim=3, hash_dim=64,
        static_code_dim=3, vision_code_dim=2, epochs=4, batch_size=8,
        step_size=0.2, seed=seed,
    )


@pytest.fixture()
def tiny_model(detection_spec):
    cohort = generate_cohort(detection_spec, 10, 21)
    params = tiny_params()
    config = model_config(cohort, params)
    ds = prepare_dataset(cohort, config, "detection", 2)
    net = init_params(params, 5, ds.records[0].static.shape[0], 16, 2)
    model = FusionFormerModel(
        net=net, n_classes=2, class_prior=np.array([0.5, 0.5]), config=config
    )
    return cohort, model, ds


class TestGatedAdditiveAttention:
    def test_identical_embeddings_give_context_equal_embedding(self):
        rng = np.random.default_rng(0)
        B, N, Dh, De, A = 2, 4, 3, 3, 3
        h = rng.standard_normal((B, Dh))
        e_star = rng.standard_normal(De)
        E = np.tile(e_star, (B, N, 1))
        mask = np.ones((B, N), dtype=bool)
        Wq = rng.standard_normal((Dh, A))
        Wk = rng.standard_normal((De, A))
        v = rng.standard_normal(A)
        Wg = rng.standard_normal((Dh + De, Dh))
        bg = rng.standard_normal(Dh)
        Wv = rng.standard_normal((De, Dh))
        fused, alpha, cache = gated_note_attention_forward(h, E, mask, Wq, Wk, v, Wg, bg, Wv)
        c = cache[10]
        assert np.allclose(c, np.tile(e_star, (B, 1)), atol=1e-12)

    def test_zero_parameters_give_half_gate(self):
        B, N, Dh, De, A = 2, 3, 4, 3, 2
        rng = np.random.default_rng(1)
        h = rng.standard_normal((B, Dh))
        E = rng.standard_normal((B, N, De))
        mask = np.ones((B, N), dtype=bool)
        z = np.zeros
        fused, alpha, _ = gated_note_attention_forward(
            h, E, mask, z((Dh, A)), z((De, A)), z(A), z((Dh + De, Dh)), z(Dh), z((De, Dh))
        )
        assert np.allclose(fused, 0.5 * h, atol=1e-12)

    def test_scripted_two_note_oracle(self):
        # fixed 2-note, 2-dimensional instance checked against a straight
        # transcription of the fusion algebra
        h = np.array([[0.5, -0.3]])
        E = np.array([[[0.2, 0.1], [-0.4, 0.6]]])
        mask = np.ones((1, 2), dtype=bool)
        Wq = np.array([[0.3, -0.2], [0.1, 0.4]])
        Wk = np.array([[-0.5, 0.2], [0.3, 0.1]])
        v = np.array([0.7, -0.6])
        Wg = np.array([[0.2, -0.1], [0.3, 0.2], [-0.4, 0.5], [0.1, -0.3]])
        bg = np.array([0.05, -0.02])
        Wv = np.array([[0.6, -0.2], [0.1, 0.3]])
        fused, alpha, _ = gated_note_attention_forward(h, E, mask, Wq, Wk, v, Wg, bg, Wv)

        q = h @ Wq
        e = np.array(
            [np.tanh(q[0] + E[0, j] @ Wk) @ v for j in range(2)]
        )
        a = np.exp(e - e.max())
        a = a / a.sum()
        c = a[0] * E[0, 0] + a[1] * E[0, 1]
        g = 1 / (1 + np.exp(-(np.concatenate([h[0], c]) @ Wg + bg)))
        want = g * h[0] + (1 - g) * (c @ Wv)
        assert fused[0] == pytest.approx(want, abs=1e-12)
        assert alpha[0] == pytest.approx(a, abs=1e-12)

    def test_attention_weights_sum_to_one_and_gate_in_open_interval(self, tiny_model):
        cohort, model, ds = tiny_model
        idx = np.arange(len(ds))
        from sepsisfusion.fusionformer import _batch_tensors

        (mask, flat_ids, note_of_token, owner_b, owner_j, n_flat, static, img,
         img_flag) = _batch_tensors(ds, idx, 16)
        E_flat, _ = nnet.embed_notes_forward(model.net["Emb"], flat_ids, note_of_token, n_flat)
        E = np.zeros((len(idx), mask.shape[1], model.net["Emb"].shape[1]))
        E[owner_b, owner_j] = E_flat
        h = np.zeros((len(idx), model.net["Wq"].shape[0]))
        fused, alpha, cache = gated_note_attention_forward(
            h, E, mask, model.net["Wq"], model.net["Wk"], model.net["v"],
            model.net["Wg"], model.net["bg"], model.net["Wv"],
        )
        sums = alpha.sum(axis=1)
        has_notes = mask.any(axis=1)
        assert np.all(np.abs(sums[has_notes] - 1.0) < 1e-9)
        assert np.all(sums[~has_notes] == 0.0)
        g = cache[12]
        assert np.all((g > 0) & (g < 1))


class TestForward:
    def test_output_on_simplex(self, tiny_model):
        cohort, model, _ = tiny_model
        for rec in cohort.records:
            p = fusionformer_forward(rec, model)
            assert abs(p.sum() - 1.0) < 1e-9

    def test_note_permutation_bit_identical(self, tiny_model):
        cohort, model, _ = tiny_model
        rec = max(cohort.records, key=lambda r: len(r.notes))
        p1 = fusionformer_forward(rec, model)
        rec2 = dataclasses.replace(rec, notes=tuple(reversed(rec.notes)))
        p2 = fusionformer_forward(rec2, model)
        assert np.array_equal(p1, p2)

    def test_missing_vision_uses_learned_bias(self, tiny_model):
        cohort, model, _ = tiny_model
        rec = next(r for r in cohort.records if r.image is None)
        p1 = fusionformer_forward(rec, model)
        model.net["b_miss"] = model.net["b_miss"] + 1.0
        p2 = fusionformer_forward(rec, model)
        assert not np.array_equal(p1, p2)

    def test_empty_vitals_rejected(self, tiny_model):
        cohort, model, _ = tiny_model
        rec = cohort.records[0]
        bad = dataclasses.replace(
            rec,
            vitals=dataclasses.replace(
                rec.vitals, values=rec.vitals.values[:0], mask=rec.vitals.mask[:0]
            ),
        )
        with pytest.raises(Exception):
            fusionformer_forward(bad, model)


class TestTraining:
    def test_gradient_check_full_network(self, detection_spec):
        cohort = generate_cohort(detection_spec, 6, 21)
        params = tiny_params(seed=4)
        config = model_config(cohort, params)
        for r in cohort.records:
            r.vitals.values = r.vitals.values[:5]
            r.vitals.mask = r.vitals.mask[:5]
        ds = prepare_dataset(cohort, config, "detection", 2)
        Y = np.zeros((6, 2))
        Y[np.arange(6), ds.y] = 1
        net = init_params(params, 5, ds.records[0].static.shape[0], 16, 2)
        idx = np.arange(6)
        _, _, grads = forward_batch(net, ds, idx, 16, Y, want_grads=True)
        err = nnet.grad_check(
            lambda p: forward_batch(p, ds, idx, 16, Y, want_grads=False)[1], net, grads
        )
        assert err <= 1e-4

    def test_same_seed_identical_curves(self, detection_spec):
        cohort = generate_cohort(detection_spec, 60, 3)
        params = tiny_params(seed=5)
        a_model, a = train_fusionformer(cohort, params, "detection")
        b_model, b = train_fusionformer(cohort, params, "detection")
        assert a.train_auc == b.train_auc
        assert a.val_auc == b.val_auc
        for k in a_model.net:
            assert np.array_equal(a_model.net[k], b_model.net[k])

    def test_patience_zero_stops_at_first_non_improvement(self, detection_spec):
        cohort = generate_cohort(detection_spec, 60, 3)
        params = dataclasses.replace(tiny_params(seed=6), epochs=30, patience=0)
        _, curves = train_fusionformer(cohort, params, "detection")
        va = curves.val_auc
        stopped_at = len(va)
        assert stopped_at < 30
        best = -np.inf
        for i, v in enumerate(va):
            if v > best + 1e-12:
                best = v
            else:
                # the first non-improving epoch must be the last one recorded
                assert i == stopped_at - 1
                break

    def test_degenerate_labels_prior_only(self, detection_spec):
        cohort = generate_cohort(detection_spec, 30, 3)
        for r in cohort.records:
            r.labels.sepsis_onset = None
        model, curves = train_fusionformer(cohort, tiny_params(), "detection")
        assert model.prior_only
        p = fusionformer_forward(cohort.records[0], model)
        assert p == pytest.approx([1.0, 0.0], abs=1e-12)

    def test_curves_csv_format(self):
        c = TrainingCurves(train_auc=[0.5], val_auc=[0.6], train_loss=[1.0], val_loss=[1.1])
        lines = c.to_csv().splitlines()
        assert lines[0] == "epoch,train_auc,val_auc,train_loss,val_loss"
        assert lines[1].startswith("0,0.5,0.6,")

    def test_model_roundtrip(self, tiny_model, tmp_path):
        cohort, model, _ = tiny_model
        path = tmp_path / "ff.json"
        model.save(path)
        m2 = FusionFormerModel.load(path)
        rec = cohort.records[0]
        assert np.array_equal(
            fusionformer_forward(rec, model), fusionformer_forward(rec, m2)
        )
