import numpy as np
import pytest

from sepsisfusion import nnet
from sepsisfusion.cohort import NoteDoc, VitalsSeries
from sepsisfusion.experts import (
    ExpertError,
    ExpertModel,
    TemporalExpertParams,
    TextExpertParams,
    VisionExpertParams,
    _logistic_loss_and_grads,
    _monitor_init,
    expert_predict,
    fit_historian,
    fit_temporal,
    fit_text,
    fit_vision,
    monitor_loss_and_grads,
    monitor_predict_proba,
    reader_matrix,
    static_feature_schema,
    static_features,
)
from sepsisfusion.gbdt import GBDTParams

from conftest import make_record, tiny_schema


def slope_series(rng, n=64, T=12, F=2, slope_mag=1.0, noise=0.1):
    series, ys = [], []
    for _ in range(n):
        slope = rng.choice([-1.0, 1.0])
        vals = np.zeros((T, F))
        t = np.arange(T)
        base = rng.standard_normal(F)
        vals[:, 0] = base[0] + slope * slope_mag * (t - T / 2) / T + noise * rng.standard_normal(T)
        for f in range(1, F):
            vals[:, f] = base[f] + noise * rng.standard_normal(T)
        series.append(VitalsSeries(vals, np.ones((T, F), dtype=np.uint8), 0.0))
        ys.append(int(slope > 0))
    return series, np.array(ys)


class TestMonitor:
    def test_constant_labels_prior_only(self):
        rng = np.random.default_rng(0)
        series, _ = slope_series(rng, n=12)
        m = fit_temporal(series, np.zeros(12, dtype=int), TemporalExpertParams(
            conv_filters=4, hidden=4), n_classes=2)
        assert m.prior_only
        rec = make_record("a", T=12, schema=tiny_schema())
        p = expert_predict(m, rec)
        assert p == pytest.approx([1.0, 0.0], abs=1e-3)

    def test_slope_capacity(self):
        rng = np.random.default_rng(1)
        series, y = slope_series(rng)
        params = TemporalExpertParams(conv_filters=8, hidden=8, cell="gru",
                                      epochs=200, patience=200, step_size=1.0,
                                      batch_size=16, seed=1)
        m = fit_temporal(series, y, params)
        arrays = [
            (np.where(s.mask.astype(bool), s.values, np.nan) - m.config["channel_means"])
            / m.config["channel_sds"]
            for s in series
        ]
        probs = monitor_predict_proba(m.net, arrays, "gru")
        assert (probs.argmax(axis=1) == y).mean() >= 0.95

    @pytest.mark.parametrize("cell", ["gru", "lstm"])
    def test_gradient_check(self, cell):
        rng = np.random.default_rng(2)
        series, y = slope_series(rng, n=4, T=6)
        params = TemporalExpertParams(conv_filters=3, conv_kernel=2, hidden=3,
                                      cell=cell, seed=3)
        net = _monitor_init(params, 2, 2)
        arrays = [s.values for s in series]
        Y = np.zeros((4, 2))
        Y[np.arange(4), y] = 1
        idx = np.arange(4)
        _, grads = monitor_loss_and_grads(net, arrays, Y, idx, cell, l2=0.01)
        err = nnet.grad_check(
            lambda p: monitor_loss_and_grads(p, arrays, Y, idx, cell, l2=0.01,
                                             want_grads=False)[0],
            net, grads,
        )
        assert err <= 1e-4

    def test_deterministic_training(self):
        rng = np.random.default_rng(3)
        series, y = slope_series(rng, n=20)
        params = TemporalExpertParams(conv_filters=4, hidden=4, epochs=5, seed=11)
        a = fit_temporal(series, y, params)
        b = fit_temporal(series, y, params)
        for k in a.net:
            assert np.array_equal(a.net[k], b.net[k])

    def test_masked_entries_never_read(self):
        # changing a masked-off value must not change the prediction
        rng = np.random.default_rng(4)
        series, y = slope_series(rng, n=16)
        for s in series:
            s.mask[3, 0] = 0
            s.values[3, 0] = np.nan
        params = TemporalExpertParams(conv_filters=4, hidden=4, epochs=3, seed=5)
        m = fit_temporal(series, y, params)
        rec = make_record("a", T=12, schema=tiny_schema())
        rec.vitals.mask[2, 1] = 0
        rec.vitals.values[2, 1] = np.nan
        p1 = expert_predict(m, rec)
        rec2_vals = rec.vitals.values.copy()
        rec2_vals[2, 1] = 123.0  # sentinel change under mask 0
        import dataclasses
        rec2 = dataclasses.replace(
            rec, vitals=VitalsSeries(np.where(rec.vitals.mask.astype(bool), rec2_vals, np.nan),
                                     rec.vitals.mask, 0.0)
        )
        p2 = expert_predict(m, rec2)
        assert np.array_equal(p1, p2)


class TestReader:
    def test_zero_token_record_predicts_prior(self):
        docs = [[NoteDoc(("mrsa",), 1.0)] for _ in range(10)]
        docs += [[NoteDoc(("clear",), 1.0)] for _ in range(30)]
        y = np.array([1] * 10 + [0] * 30)
        m = fit_text(docs, y, TextExpertParams(hash_dim=2**8, epochs=100))
        rec = make_record("a", notes=[])
        assert expert_predict(m, rec) == pytest.approx([0.75, 0.25], abs=1e-12)

    def test_separable_corpus_perfect_accuracy(self):
        docs = [[NoteDoc(("mrsa", "fever"), 1.0)] for _ in range(20)]
        docs += [[NoteDoc(("fever", "cough"), 1.0)] for _ in range(20)]
        y = np.array([1] * 20 + [0] * 20)
        params = TextExpertParams(hash_dim=2**8, epochs=600, step_size=1.0, l2=1e-6)
        m = fit_text(docs, y, params)
        X = reader_matrix(docs, params.ngram_orders, params.hash_dim)
        probs = nnet.softmax(np.asarray(X @ m.net["W"] + m.net["b"]), axis=1)
        assert (probs.argmax(axis=1) == y).mean() == 1.0

    def test_gradient_check_convex(self):
        rng = np.random.default_rng(5)
        docs = [[NoteDoc(tuple(rng.choice(["a", "b", "c", "d"], 4)), 1.0)] for _ in range(12)]
        y = rng.integers(0, 2, 12)
        y[:2] = [0, 1]
        X = reader_matrix(docs, (1, 2), 64)
        Y = np.zeros((12, 2))
        Y[np.arange(12), y] = 1
        W = rng.standard_normal((64, 2)) * 0.2
        b = rng.standard_normal(2) * 0.2
        _, gW, gb = _logistic_loss_and_grads(X, Y, W, b, 1e-3)
        err = nnet.grad_check(
            lambda p: _logistic_loss_and_grads(X, Y, p["W"], p["b"], 1e-3)[0],
            {"W": W, "b": b},
            {"W": gW, "b": gb},
            floor=1e-8,
        )
        assert err <= 1e-6

    def test_hash_dim_must_be_power_of_two(self):
        with pytest.raises(ExpertError, match="power of two"):
            TextExpertParams(hash_dim=100).validate()

    def test_degenerate_labels_prior_only(self):
        docs = [[NoteDoc(("x",), 1.0)] for _ in range(5)]
        m = fit_text(docs, np.ones(5, dtype=int), TextExpertParams(), n_classes=2)
        assert m.prior_only


class TestVisionary:
    def test_width_zero_rejected(self):
        with pytest.raises(ExpertError):
            VisionExpertParams(hidden=0).validate()

    def test_linearly_separable(self):
        rng = np.random.default_rng(6)
        X = np.concatenate([rng.standard_normal((30, 2)) + [3, 0],
                            rng.standard_normal((30, 2)) - [3, 0]])
        y = np.array([0] * 30 + [1] * 30)
        m = fit_vision(X, y, VisionExpertParams(hidden=8, epochs=300, patience=300,
                                                step_size=0.2, seed=1))
        rec_probs = []
        for i in range(60):
            rec = make_record(f"r{i}", image=X[i], schema=tiny_schema(image_dim=2))
            rec_probs.append(expert_predict(m, rec))
        acc = (np.array(rec_probs).argmax(axis=1) == y).mean()
        assert acc == 1.0

    def test_gradient_check(self):
        from sepsisfusion.experts import _vision_loss_and_grads

        rng = np.random.default_rng(7)
        X = rng.standard_normal((10, 3))
        y = rng.integers(0, 2, 10)
        Y = np.zeros((10, 2))
        Y[np.arange(10), y] = 1
        net = {"W1": rng.standard_normal((3, 4)) * 0.4, "b1": np.zeros(4),
               "W2": rng.standard_normal((4, 2)) * 0.4, "b2": np.zeros(2)}
        _, _, grads = _vision_loss_and_grads(net, X, Y, 1e-3)
        err = nnet.grad_check(
            lambda p: _vision_loss_and_grads(p, X, Y, 1e-3, want_grads=False)[0],
            net, grads,
        )
        assert err <= 1e-4

    def test_missing_image_rejected(self):
        rng = np.random.default_rng(8)
        X = rng.standard_normal((20, 4))
        y = (X[:, 0] > 0).astype(int)
        m = fit_vision(X, y, VisionExpertParams(hidden=4, epochs=5))
        with pytest.raises(ExpertError, match="image"):
            expert_predict(m, make_record("a", image=None))


class TestExpertContract:
    def test_simplex_outputs(self, small_guarded_detection):
        cohort = small_guarded_detection
        y = np.array([r.labels.sepsis_onset is not None for r in cohort.records],
                     dtype=int)
        X = np.stack([static_features(r) for r in cohort.records])
        m = fit_historian(X, y, GBDTParams(rounds=10), static_feature_schema(cohort.schema))
        for rec in cohort.records[:20]:
            p = expert_predict(m, rec)
            assert abs(p.sum() - 1.0) < 1e-9
            assert np.all(p >= 0)

    def test_prediction_purity(self, small_guarded_detection):
        cohort = small_guarded_detection
        y = np.array([r.labels.sepsis_onset is not None for r in cohort.records],
                     dtype=int)
        m = fit_text([r.notes for r in cohort.records], y,
                     TextExpertParams(hash_dim=2**10, epochs=30))
        rec = cohort.records[0]
        p1 = expert_predict(m, rec)
        p2 = expert_predict(m, rec)
        assert np.array_equal(p1, p2)

    def test_monitor_scripted_forward_oracle(self):
        # tiny hand-set Monitor: conv -> tanh -> BiGRU -> attention -> linear
        params = TemporalExpertParams(conv_filters=1, conv_kernel=1, hidden=1,
                                      cell="gru", seed=0)
        net = _monitor_init(params, 1, 2)
        for k in net:
            net[k] = np.ones_like(net[k]) * 0.5
        x = np.array([[0.0], [1.0], [-1.0]])  # T=3, one channel

        # scripted straight-line transcription of the architecture
        conv = np.tanh(x * 0.5 + 0.5)
        def gru_seq(xs):
            h = 0.0
            out = []
            for v in xs:
                r = 1 / (1 + np.exp(-(v * 0.5 + h * 0.5 + 0.5)))
                z = 1 / (1 + np.exp(-(v * 0.5 + h * 0.5 + 0.5)))
                n = np.tanh(v * 0.5 + r * (h * 0.5) + 0.5)
                h = (1 - z) * n + z * h
                out.append(h)
            return np.array(out)
        hf = gru_seq(conv[:, 0])
        hb = gru_seq(conv[::-1, 0])[::-1]
        H = np.stack([hf, hb], axis=1)  # (3, 2)
        e = np.tanh(H @ np.array([0.5, 0.5]) + 0.5) * 0.5
        a = np.exp(e - e.max()); a = a / a.sum()
        pooled = a @ H
        logits = pooled @ (np.ones((2, 2)) * 0.5) + 0.5
        want = np.exp(logits - logits.max()); want = want / want.sum()

        got = monitor_predict_proba(net, [x], "gru")[0]
        assert got == pytest.approx(want, abs=1e-12)


class TestSerialization:
    def test_monitor_roundtrip(self, tmp_path):
        rng = np.random.default_rng(9)
        series, y = slope_series(rng, n=16)
        m = fit_temporal(series, y, TemporalExpertParams(conv_filters=4, hidden=4,
                                                         epochs=3, seed=2))
        path = tmp_path / "m.json"
        m.save(path)
        m2 = ExpertModel.load(path)
        rec = make_record("a", T=12)
        assert np.array_equal(expert_predict(m, rec), expert_predict(m2, rec))
