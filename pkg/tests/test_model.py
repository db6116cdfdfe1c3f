from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepsta import autodiff as ad
from deepsta.autodiff import Tensor
from deepsta.config import ExperimentConfig
from deepsta.errors import ConfigError, DataError, DimensionError
from deepsta.graphs import normalize_adjacency
from deepsta.model import (VARIANT_FLAGS, DeepSTA, ModelInputs, check_window_complete, mix_district_embedding,
                           variant_flags)
from deepsta.scenario import Window
from helpers import numeric_grad, rel_err

D_C, D_EMB, N_DIST = 3, 2, 2
TINY = dict(d_model=6, d_lstm=5, L_m=3, D_m=4, rnn_hidden=3, T=2)


def tiny_model(variant="full", seed=0, **kw):
    return DeepSTA(ExperimentConfig(variant=variant, seed=seed, **{**TINY, **kw}), d_c=D_C, d_emb=D_EMB)


def micro_data(n=2, n_days=6, seed=0):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(N_DIST), size=(n_days, n))
    prepared = SimpleNamespace(c=rng.normal(size=(n_days, n, D_C)), p=p, a=rng.normal(size=(n_days, n, 4)),
                               y=rng.uniform(0.2, 0.9, (n_days, n)))
    emb = rng.normal(size=(N_DIST, D_EMB))
    w = np.triu(rng.random((n, n)), 1)
    adj = normalize_adjacency(w + w.T)
    return prepared, emb, adj


def window_of(prepared, t, T):
    sl = slice(t - T, t + 1)
    return Window(t=t, c=prepared.c[sl], p=prepared.p[sl], a=prepared.a[sl], y=prepared.y[t])


class TestMixEmbedding:
    def test_one_hot_selects_row(self):
        emb = np.arange(12.0).reshape(4, 3)
        np.testing.assert_array_equal(mix_district_embedding(np.eye(4)[2], emb), emb[2])

    def test_half_half_is_mean(self):
        emb = np.array([[1.0, 4.0], [3.0, 0.0]])
        np.testing.assert_allclose(mix_district_embedding([0.5, 0.5], emb), [2.0, 2.0])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 10_000))
    def test_inside_hull(self, m, seed):
        rng = np.random.default_rng(seed)
        emb = rng.normal(size=(m, 5))
        out = mix_district_embedding(rng.dirichlet(np.ones(m)), emb)
        assert (out >= emb.min(axis=0) - 1e-12).all() and (out <= emb.max(axis=0) + 1e-12).all()

    def test_errors(self):
        with pytest.raises(DataError):
            mix_district_embedding([1.2, -0.2], np.ones((2, 3)))
        with pytest.raises(DimensionError):
            mix_district_embedding([1.0], np.ones((2, 3)))


class TestAssemble:
    def test_shape_and_purity(self):
        m = tiny_model()
        z = np.random.default_rng(0).normal(size=(4, m.d_in))
        z[1] = z[0]
        out = m.assemble_features(Tensor(z)).data
        assert out.shape == (4, TINY["d_model"])
        np.testing.assert_array_equal(out[0], out[1])

    def test_zero_weights_give_bias(self):
        m = tiny_model()
        m.params["fc.W"].data[:] = 0.0
        m.params["fc.b"].data[:] = 1.0
        np.testing.assert_array_equal(m.assemble_features(Tensor(np.ones((3, m.d_in)))).data, 1.0)

    def test_width_mismatch(self):
        m = tiny_model()
        with pytest.raises(ConfigError, match=str(m.d_in)):
            m.assemble_features(Tensor(np.ones((2, m.d_in + 1))))


class TestGcn:
    def test_identity_graph_is_rowwise(self):
        m = tiny_model()
        x = np.random.default_rng(1).normal(size=(3, 6))
        full = m.gcn_forward(Tensor(x), np.eye(3)).data
        for i in range(3):
            np.testing.assert_allclose(full[i], m.gcn_forward(Tensor(x[i:i + 1]), np.eye(1)).data[0], atol=1e-15)

    def test_path_graph_message_passing(self):
        m = tiny_model()
        rng = np.random.default_rng(2)
        x = rng.normal(size=(3, 6))
        adj = normalize_adjacency(np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], float))
        w = m.params["gcn.W"].data
        expect = np.zeros((3, 6))
        for i in range(3):
            for j in range(3):
                expect[i] += adj[i, j] * (x[j] @ w)
        np.testing.assert_allclose(m.gcn_forward(Tensor(x), adj).data, np.maximum(expect, 0.0), atol=1e-12)

    def test_permutation_equivariance(self):
        m = tiny_model()
        rng = np.random.default_rng(3)
        x = rng.normal(size=(5, 6))
        w = np.triu(rng.random((5, 5)), 1)
        adj = normalize_adjacency(w + w.T)
        perm = rng.permutation(5)
        a = m.gcn_forward(Tensor(x), adj).data
        b = m.gcn_forward(Tensor(x[perm]), adj[np.ix_(perm, perm)]).data
        np.testing.assert_allclose(b, a[perm], atol=1e-13)

    def test_mismatch(self):
        with pytest.raises(DimensionError):
            tiny_model().gcn_forward(Tensor(np.ones((3, 6))), np.eye(2))


def _lstm_cell(x, h, c, wx, wh, b):
    z = x @ wx + h @ wh + b
    k = len(b) // 4
    sg = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
    i, f, o, g = sg(z[:, :k]), sg(z[:, k:2 * k]), sg(z[:, 2 * k:3 * k]), np.tanh(z[:, 3 * k:])
    c = f * c + i * g
    return o * np.tanh(c), c


class TestLstm:
    def test_bounded_on_constant_input(self):
        m = tiny_model()
        for k in range(2):
            for name in ("Wx", "Wh"):
                m.params[f"lstm.{k}.{name}"].data[:] = 0.0
        seq = Tensor(np.full((8 * 3, 6), 2.5))
        assert (np.abs(m.lstm_forward(seq, 8).data) < 1).all()

    def test_single_step_matches_cell(self):
        m = tiny_model(lstm_layers=1)
        x = np.random.default_rng(4).normal(size=(3, 6))
        p = {k: m.params[f"lstm.0.{k}"].data for k in ("Wx", "Wh", "b")}
        z = np.zeros((3, 5))
        h, _ = _lstm_cell(x, z, z, p["Wx"], p["Wh"], p["b"])
        np.testing.assert_allclose(m.lstm_forward(Tensor(x), 1).data, h, atol=1e-14)

    def test_unrolled_matches_reference(self):
        m = tiny_model()
        rng = np.random.default_rng(5)
        steps, B = 4, 3
        x = rng.normal(size=(steps * B, 6))
        inp = [x[k * B:(k + 1) * B] for k in range(steps)]
        for layer in range(2):
            p = {k: m.params[f"lstm.{layer}.{k}"].data for k in ("Wx", "Wh", "b")}
            h = c = np.zeros((B, 5))
            outs = []
            for xs in inp:
                h, c = _lstm_cell(xs, h, c, p["Wx"], p["Wh"], p["b"])
                outs.append(h)
            inp = outs
        np.testing.assert_allclose(m.lstm_forward(Tensor(x), steps).data, outs[-1], atol=1e-13)

    def test_gradient(self):
        m = tiny_model()
        rng = np.random.default_rng(6)
        x = Tensor(rng.uniform(-2, 2, (3 * 2, 6)), requires_grad=True)
        w = rng.normal(size=(2, 5))
        ad.sum_all(ad.mul(m.lstm_forward(x, 3), Tensor(w))).backward()
        f = lambda: float((m.lstm_forward(Tensor(x.data), 3).data * w).sum())  # noqa: E731
        assert rel_err(x.grad, numeric_grad(f, x.data)) < 1e-4
        wx = m.params["lstm.0.Wx"]
        assert rel_err(wx.grad, numeric_grad(f, wx.data)) < 1e-4

    def test_bad_step_count(self):
        with pytest.raises(DimensionError):
            tiny_model().lstm_forward(Tensor(np.ones((5, 6))), 2)


class TestAnomalyRnn:
    def test_zero_fixed_point(self):
        m = tiny_model()
        assert (m.anomaly_forward(Tensor(np.zeros((9, 4))), 3).data == 0).all()

    def test_default_width_is_eight(self):
        m = DeepSTA(ExperimentConfig(d_model=4, d_lstm=4), d_c=D_C, d_emb=D_EMB)
        assert m.anomaly_forward(Tensor(np.ones((6, 4))), 3).shape == (2, 8)

    def test_gradient(self):
        m = tiny_model()
        rng = np.random.default_rng(7)
        a = Tensor(rng.uniform(-2, 2, (3 * 2, 4)), requires_grad=True)
        w = rng.normal(size=(2, 3))
        ad.sum_all(ad.mul(m.anomaly_forward(a, 3), Tensor(w))).backward()
        f = lambda: float((m.anomaly_forward(Tensor(a.data), 3).data * w).sum())  # noqa: E731
        assert rel_err(a.grad, numeric_grad(f, a.data)) < 1e-4
        whh = m.params["rnn.W_hh"]
        assert rel_err(whh.grad, numeric_grad(f, whh.data)) < 1e-4


def memory_oracle(s, e, M, Wq, bq):
    """Explicit loops over memory slots and query coordinates."""
    qin = list(s) + list(e)
    q = [bq[k] + sum(qin[r] * Wq[r, k] for r in range(len(qin))) for k in range(len(bq))]
    logits = [sum(M[j, k] * q[k] for k in range(len(q))) for j in range(M.shape[0])]
    top = max(logits)
    ex = [np.exp(v - top) for v in logits]
    score = [v / sum(ex) for v in ex]
    read = [sum(score[j] * M[j, k] for j in range(M.shape[0])) for k in range(M.shape[1])]
    return np.array(q), np.array(score), np.array(read)


class TestMemory:
    def test_matches_loop_oracle(self):
        m = tiny_model()
        rng = np.random.default_rng(8)
        for _ in range(100):
            for k in ("mem.M", "mem.W_q", "mem.b_q"):
                m.params[k].data = rng.normal(size=m.params[k].shape)
            s, e = rng.normal(size=5), rng.normal(size=3)
            q, score, read = m.memory_attend(Tensor(s[None]), Tensor(e[None]))
            oq, os_, oread = memory_oracle(s, e, *(m.params[k].data for k in ("mem.M", "mem.W_q", "mem.b_q")))
            np.testing.assert_allclose(q.data[0], oq, atol=1e-10)
            np.testing.assert_allclose(score.data[0], os_, atol=1e-10)
            np.testing.assert_allclose(read.data[0], oread, atol=1e-10)
            assert abs(score.data.sum() - 1.0) < 1e-9

    def test_dominant_slot(self):
        m = tiny_model()
        M = np.eye(3, 4) * 50.0
        m.params["mem.M"].data = M
        m.params["mem.W_q"].data[:] = 0.0
        m.params["mem.b_q"].data = np.array([0.0, 1.0, 0.0, 0.0])
        _, score, read = m.memory_attend(Tensor(np.ones((1, 5))), Tensor(np.ones((1, 3))))
        np.testing.assert_allclose(read.data[0], M[1], atol=1e-3)

    def test_uniform_score_reads_column_mean(self):
        m = tiny_model()
        m.params["mem.W_q"].data[:] = 0.0
        _, score, read = m.memory_attend(Tensor(np.ones((1, 5))), Tensor(np.ones((1, 3))))
        np.testing.assert_allclose(score.data, 1 / 3)
        np.testing.assert_allclose(read.data[0], m.params["mem.M"].data.mean(axis=0), atol=1e-15)


def _forward_loss(m, prepared, emb, adj, t):
    win = window_of(prepared, t, m.cfg.T)
    return ad.mse_loss(m.forward_window(win, emb, adj), win.y)


class TestForward:
    def test_range_and_determinism(self):
        prepared, emb, adj = micro_data(n=4)
        m = tiny_model()
        win = window_of(prepared, 4, 2)
        a = m.forward_window(win, emb, adj).data
        b = m.forward_window(win, emb, adj).data
        assert ((a > 0) & (a < 1)).all()
        assert np.array_equal(a, b)

    @pytest.mark.parametrize("variant", sorted(VARIANT_FLAGS))
    def test_fast_path_matches_window_path(self, variant):
        prepared, emb, adj = micro_data(n=5, n_days=8)
        m = tiny_model(variant)
        inputs = ModelInputs(prepared, emb, adj, m.variant)
        t = 6
        fast = m.predict(inputs, np.full(5, t), np.arange(5))
        slow = m.forward_window(window_of(prepared, t, 2), emb, adj).data
        np.testing.assert_allclose(fast, slow, atol=1e-12)

    def test_end_to_end_gradients(self):
        prepared, emb, adj = micro_data(n=2)
        m = tiny_model()
        loss = _forward_loss(m, prepared, emb, adj, 4)
        loss.backward()
        f = lambda: _forward_loss(m, prepared, emb, adj, 4).item()  # noqa: E731
        for name, p in m.params.items():
            assert rel_err(p.grad, numeric_grad(f, p.data)) < 1e-3, name

    def test_memory_gets_gradient(self):
        prepared, emb, adj = micro_data(n=4)
        m = tiny_model()
        _forward_loss(m, prepared, emb, adj, 4).backward()
        assert np.abs(m.params["mem.M"].grad).sum() > 0

    def test_loss_reproducible(self):
        prepared, emb, adj = micro_data(n=3)
        a = _forward_loss(tiny_model(seed=4), prepared, emb, adj, 5).item()
        b = _forward_loss(tiny_model(seed=4), prepared, emb, adj, 5).item()
        assert abs(a - b) < 1e-12

    def test_courier_permutation(self):
        prepared, emb, adj = micro_data(n=5, n_days=7)
        m = tiny_model()
        perm = np.random.default_rng(0).permutation(5)
        shuffled = SimpleNamespace(c=prepared.c[:, perm], p=prepared.p[:, perm], a=prepared.a[:, perm],
                                   y=prepared.y[:, perm])
        a = m.forward_window(window_of(prepared, 5, 2), emb, adj).data
        b = m.forward_window(window_of(shuffled, 5, 2), emb, adj[np.ix_(perm, perm)]).data
        np.testing.assert_allclose(b, a[perm], atol=1e-13)

    def test_missing_day_names_courier_and_day(self):
        prepared, emb, adj = micro_data(n=3, n_days=7)
        prepared.c[4, 1, 0] = np.nan
        with pytest.raises(DataError, match="courier 1 has no data for day 4"):
            tiny_model().forward_window(window_of(prepared, 5, 2), emb, adj)
        with pytest.raises(DataError, match="courier 1 has no data for day 4"):
            ModelInputs(prepared, emb, adj, variant_flags("full"))

    def test_training_mode_uses_dropout(self):
        prepared, emb, adj = micro_data(n=4)
        m = tiny_model(dropout=0.5, head_dropout=0.5)
        win = window_of(prepared, 4, 2)
        a = m.forward_window(win, emb, adj, training=True, rng=np.random.default_rng(0)).data
        b = m.forward_window(win, emb, adj).data
        assert not np.array_equal(a, b)


class TestCensus:
    def _names(self, tag):
        return set(tiny_model(tag).census())

    def test_full(self):
        m = tiny_model()
        c = m.census()
        assert c["fc.W"] == (D_EMB + D_C, 6)
        assert c["mem.M"] == (3, 4) and c["mem.W_q"] == (5 + 3, 4)
        assert c["rnn.W_ih"] == (4, 3) and c["head.W"] == (5 + 3 + 4, 1)

    def test_wo_rnn_moves_factors_into_features(self):
        full, wo = tiny_model().census(), tiny_model("wo_rnn").census()
        assert set(full) - set(wo) == {"rnn.W_ih", "rnn.W_hh", "rnn.b"}
        assert wo["fc.W"] == (D_EMB + D_C + 4, 6)
        assert wo["mem.W_q"] == (5, 4)

    def test_wo_memory(self):
        assert self._names("full") - self._names("wo_memory") == {"mem.M", "mem.W_q", "mem.b_q"}
        assert tiny_model("wo_memory").census()["head.W"] == (5 + 3, 1)

    def test_wo_lstm(self):
        removed = self._names("full") - self._names("wo_lstm")
        assert removed == {f"lstm.{k}.{n}" for k in range(2) for n in ("Wx", "Wh", "b")}

    def test_wo_road_and_wo_gcn(self):
        assert tiny_model("wo_road").census()["fc.W"] == (D_C, 6)
        assert tiny_model("wo_gcn").census() == tiny_model().census()

    def test_lstm_baseline(self):
        assert self._names("baseline:lstm") == {"fc.W", "fc.b", "head.W", "head.b"} | {
            f"lstm.{k}.{n}" for k in range(2) for n in ("Wx", "Wh", "b")}

    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            variant_flags("baseline:ma")


def test_checkpoint_round_trip(tmp_path):
    m = tiny_model(seed=9)
    m.save(tmp_path / "m.ckpt", {"note": "x"})
    back, meta = DeepSTA.load(tmp_path / "m.ckpt")
    assert meta["note"] == "x"
    for k, p in m.params.items():
        assert np.array_equal(p.data, back.params[k].data)
    with pytest.raises(DataError):
        back.load_state_dict({"fc.W": m.params["fc.W"].data})


def test_window_check_passes_clean_input():
    check_window_complete(np.arange(2), np.arange(2), np.zeros((2, 2, 3)))
