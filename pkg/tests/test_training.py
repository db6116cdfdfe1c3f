import csv
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from deepsta import node2vec as nv
from deepsta import scenario as sc
from deepsta import training as tr
from deepsta.config import ExperimentConfig, VARIANTS
from deepsta.errors import ConfigError, DataError, TrainingError
from deepsta.graphs import build_district_graph

FAST = dict(d_model=8, d_lstm=8, D_m=8, L_m=4, epochs=2, T=3, batch_size=32, lr=3e-3)


def make_context(seed=0):
    panel = sc.generate(sc.ScenarioConfig(n_couriers=8, n_districts=4, n_days=80, team_size=4, seed=seed))
    dg = build_district_graph(panel.network, panel.centroids)
    emb = nv.embed_districts(dg.weights, nv.WalkConfig(walks_per_node=4, walk_length=12, embedding_dim=8))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return tr.Context.from_panel(panel, emb)


@pytest.fixture(scope="module")
def ctx():
    return make_context()


class TestMetrics:
    def test_perfect(self):
        assert tr.metrics([0.3, 0.9], [0.3, 0.9]) == (0.0, 0.0)

    def test_hand_values(self):
        mae, mse = tr.metrics([0.5, 0.5], [0.4, 0.6])
        assert mae == pytest.approx(0.1) and mse == pytest.approx(0.01)

    def test_errors(self):
        with pytest.raises(DataError):
            tr.metrics([], [])
        with pytest.raises(DataError):
            tr.metrics([0.1], [0.1, 0.2])

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, st.integers(1, 50), elements=st.floats(0, 1)),
           arrays(np.float64, 50, elements=st.floats(0, 1)))
    def test_mae_squared_bounded_by_mse(self, pred, target):
        mae, mse = tr.metrics(pred, target[:len(pred)])
        assert mae >= 0 and mse >= 0 and mae * mae <= mse + 1e-15


class TestSplits:
    def test_pairs_stay_in_split(self, ctx):
        for split in sc.SPLITS:
            days, couriers = tr.split_pairs(ctx.panel, split, 3)
            lo, hi = ctx.panel.bounds()[split]
            assert days.min() >= lo and days.max() < hi
            assert len(days) == (hi - lo) * 8 and len(set(zip(days, couriers))) == len(days)

    def test_bad_split(self, ctx):
        with pytest.raises(ConfigError):
            tr.split_pairs(ctx.panel, "holdout", 3)

    def test_history_too_long(self, ctx):
        with pytest.raises(DataError):
            tr.split_pairs(ctx.panel, "train", 500)


class TestTrain:
    def test_deterministic_curves(self, ctx):
        cfg = ExperimentConfig(**FAST, seed=2)
        a = tr.train(cfg, ctx)[1]
        b = tr.train(cfg, ctx)[1]
        assert a.loss_curve == b.loss_curve and a.val_curve == b.val_curve

    def test_keeps_best_validation_state(self, ctx):
        rep = tr.train(ExperimentConfig(**{**FAST, "epochs": 4}), ctx)[1]
        assert rep.mae["val"] == pytest.approx(min(rep.val_curve), abs=1e-12)
        assert rep.mae["val"] <= rep.val_curve[-1]
        assert rep.val_curve[rep.best_epoch] == min(rep.val_curve)

    def test_nan_loss_reports_epoch(self):
        local = make_context()
        local.prepared.y = local.prepared.y.copy()
        local.prepared.y[local.panel.bounds()["train"][0] + 5] = np.nan
        with pytest.raises(TrainingError) as info:
            tr.train(ExperimentConfig(**FAST), local)
        assert info.value.epoch == 0

    def test_metrics_recompute_from_predictions(self, ctx):
        rep = tr.train(ExperimentConfig(**FAST), ctx)[1]
        for split in sc.SPLITS:
            days, couriers = tr.split_pairs(ctx.panel, split, FAST["T"])
            resid = rep.predictions[split] - ctx.panel.y[days, couriers]
            assert rep.mae[split] == float(np.mean(np.abs(resid)))
            assert rep.mse[split] == float(np.mean(resid * resid))

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_every_variant_trains(self, ctx, variant):
        rep = tr.train(ExperimentConfig(**{**FAST, "epochs": 1}, variant=variant), ctx)[1]
        assert all(np.isfinite(rep.mae[s]) for s in sc.SPLITS)
        assert all(((p > 0) & (p < 1)).all() for p in rep.predictions.values())


class TestBaselines:
    def test_moving_average_oracle(self):
        y = np.random.default_rng(0).random((20, 3))
        days, couriers = np.array([5, 9, 19]), np.array([0, 2, 1])
        expect = [np.mean([y[d - k, c] for k in range(1, 5)]) for d, c in zip(days, couriers)]
        np.testing.assert_allclose(tr.moving_average(y, days, couriers, 4), expect)
        with pytest.raises(ConfigError):
            tr.moving_average(y, days, couriers, 0)

    def test_ma_of_one_day_is_persistence(self):
        y = np.random.default_rng(2).random((10, 4))
        days, couriers = np.array([3, 4, 9]), np.array([1, 0, 3])
        np.testing.assert_array_equal(tr.moving_average(y, days, couriers, 1), y[days - 1, couriers])
        flat = np.full((10, 4), 0.93)
        assert tr.metrics(tr.moving_average(flat, days, couriers, 3), flat[days, couriers]) == (0.0, 0.0)

    def test_linear_recovers_coefficients(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(200, 3))
        y = x @ np.array([0.5, -1.0, 2.0]) + 0.25
        coef = tr.fit_linear(x, y)
        np.testing.assert_allclose(coef, [0.5, -1.0, 2.0, 0.25], atol=1e-10)
        np.testing.assert_allclose(tr.predict_linear(coef, x), y, atol=1e-10)

    @pytest.mark.parametrize("kind", ["ma", "persistence", "lr"])
    def test_closed_form_baselines(self, ctx, kind):
        rep = tr.run_baseline(kind, ExperimentConfig(**FAST), ctx)
        assert rep.variant == f"baseline:{kind}"
        days, couriers = tr.split_pairs(ctx.panel, "test", 3)
        if kind == "persistence":
            np.testing.assert_array_equal(rep.predictions["test"], ctx.panel.y[days - 1, couriers])
        assert tr.metrics(rep.predictions["test"], ctx.panel.y[days, couriers])[0] == rep.mae["test"]

    def test_lstm_baseline_is_a_trained_variant(self, ctx):
        rep = tr.run_baseline("lstm", ExperimentConfig(**{**FAST, "epochs": 1}), ctx)
        assert rep.variant == "baseline:lstm"

    def test_unknown(self, ctx):
        with pytest.raises(ConfigError):
            tr.run_baseline("arima", ExperimentConfig(), ctx)


class TestSweeps:
    @pytest.mark.parametrize("param,count", [("T", 10), ("L_m", 11)])
    def test_one_field_changes(self, param, count):
        base = ExperimentConfig(T=4, L_m=30)
        points = tr.sweep_configs(param, base)
        assert len(points) == count
        # the point equal to the base value differs in no field at all
        assert all(set(tr.config_diff(base, p)) <= {param} for p in points)
        assert [getattr(p, param) for p in points] == list(tr.SWEEP_VALUES[param])

    def test_unknown_param(self):
        with pytest.raises(ConfigError):
            tr.sweep_configs("lr", ExperimentConfig())

    def test_unknown_ablation(self, ctx):
        with pytest.raises(ConfigError):
            tr.run_ablations(ExperimentConfig(), ctx, variants=("wo_everything",))


def test_parallel_units_match_serial(ctx):
    units = [("train", ExperimentConfig(**{**FAST, "epochs": 1}, seed=s)) for s in (0, 1)]
    serial = tr.run_units(units, ctx, jobs=1)
    parallel = tr.run_units(units, ctx, jobs=2)
    for a, b in zip(serial, parallel):
        assert a.mae == b.mae and a.loss_curve == b.loss_curve


def test_tables(tmp_path, ctx):
    reps = [tr.run_baseline("ma", ExperimentConfig(**FAST, seed=s), ctx) for s in (0, 1)]
    paths = tr.write_tables(tmp_path / "baselines", "method", {"ma": reps}, extra={"T": 3})
    with open(paths[0]) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1 and rows[0]["method"] == "ma" and rows[0]["n_seeds"] == "2"
    assert float(rows[0]["test_mae"]) == reps[0].mae["test"]
    with open(paths[1]) as fh:
        assert len(list(csv.DictReader(fh))) == 2
    again = tr.write_tables(tmp_path / "again", "method", {"ma": reps}, extra={"T": 3})
    assert paths[0].read_bytes() == again[0].read_bytes()
    curve = tr.write_curves(tmp_path / "c.csv", tr.train(ExperimentConfig(**FAST), ctx)[1])
    assert curve.read_text().splitlines()[0] == "epoch,train_loss,val_mae"
