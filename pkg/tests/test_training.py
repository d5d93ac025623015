import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cen.data import gen_xor_context
from cen.errors import DivergedTrainingError, InvalidInputError, UndefinedMetricError
from cen.model import Batch, build_cen, build_mlp_classifier
from cen.numeric import make_rng
from cen.training import (Optimizer, TrainConfig, acc_at_quantiles, accuracy, auc, evaluate, quantile_indices,
                          rae, split_batch, train)


def brute_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    credit = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return credit / (len(pos) * len(neg))


def separable_batch(rng, n=200):
    X = rng.normal(size=(n, 2))
    y = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(int)
    keep = np.abs(X[:, 0] + 0.5 * X[:, 1]) > 0.2
    return Batch(np.zeros((keep.sum(), 1)), X[keep], y[keep])


class TestAccuracyAuc:
    def test_accuracy(self):
        assert accuracy([0, 1, 1, 0], [0, 1, 0, 0]) == 0.75

    def test_accuracy_errors(self):
        with pytest.raises(InvalidInputError):
            accuracy([0, 1], [0])
        with pytest.raises(UndefinedMetricError):
            accuracy([], [])

    def test_auc_reference(self):
        assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)

    def test_auc_perfect(self):
        assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_auc_all_tied(self):
        assert auc([0.3] * 5, [0, 1, 0, 1, 1]) == 0.5

    def test_auc_single_class(self):
        with pytest.raises(UndefinedMetricError):
            auc([0.1, 0.2], [1, 1])

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=25))
    def test_auc_matches_pairwise_count(self, pairs):
        scores = [float(s) for s, _ in pairs]
        labels = [l for _, l in pairs]
        if all(labels) or not any(labels):
            return
        assert auc(scores, labels) == pytest.approx(brute_auc(scores, labels), abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10**6))
    def test_auc_flip_symmetry(self, seed):
        rng = make_rng(seed)
        scores = rng.permutation(12) / 12.0
        labels = np.arange(12) % 2 == 0
        assert auc(1 - scores, labels) == pytest.approx(1 - auc(scores, labels), abs=1e-12)


class TestSurvivalMetrics:
    def test_acc_at_quantile_fixture(self):
        # rows: (end interval, censored, S(t_2))
        rows = [(0, False, 0.3),   # dead, predicted dead
                (3, False, 0.6),   # alive, predicted alive
                (1, True, 0.9),    # censored before t_2: excluded
                (2, True, 0.4),    # alive at t_2, predicted dead
                (4, True, 0.5),    # alive, predicted alive (S = 0.5 counts as alive)
                (1, False, 0.7)]   # dead, predicted alive
        index = [r[0] for r in rows]
        cens = [r[1] for r in rows]
        curves = np.ones((6, 5))
        curves[:, 2] = [r[2] for r in rows]
        assert acc_at_quantiles(curves, index, cens, [2]) == [pytest.approx(3 / 5)]

    def test_acc_at_quantile_nobody_labelled(self):
        with pytest.raises(UndefinedMetricError):
            acc_at_quantiles(np.ones((2, 4)), [0, 1], [True, True], [3])

    def test_acc_at_quantile_out_of_range(self):
        with pytest.raises(InvalidInputError):
            acc_at_quantiles(np.ones((2, 3)), [0, 1], [False, False], [3])

    def test_quantile_indices(self):
        np.testing.assert_array_equal(quantile_indices([0, 1, 2, 3, 4, 5, 6, 7]), [1, 3, 5])
        with pytest.raises(UndefinedMetricError):
            quantile_indices([])
        with pytest.raises(InvalidInputError):
            quantile_indices([1, 2], [0.0])

    def test_rae_perfect(self):
        assert rae([1, 4, 2], [1, 4, 2], [False] * 3) == 0.0

    def test_rae_double_time_is_clipped_to_one(self):
        # midpoint 1.5 predicted for actual midpoint 0.5, error 1 / max(0.5, 1) = 1
        assert rae([1], [0], [False]) == pytest.approx(1.0)

    def test_rae_fixture(self):
        pred = [2, 0, 5, 9]
        index = [2, 3, 1, 0]
        cens = [False, False, False, True]
        expected = (0.0 + 3.0 / 3.5 + 1.0) / 3
        assert rae(pred, index, cens) == pytest.approx(expected, abs=1e-12)

    def test_rae_uses_width(self):
        assert rae([2], [3], [False], width=7.0) == pytest.approx(7.0 / 24.5)

    def test_rae_all_censored(self):
        with pytest.raises(UndefinedMetricError):
            rae([1], [1], [True])


class TestConfig:
    @pytest.mark.parametrize("kwargs", [dict(optimizer="rmsprop"), dict(lr=-1.0), dict(batch_size=0),
                                        dict(patience=-1), dict(val_fraction=1.0), dict(l2=-0.1)])
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidInputError):
            TrainConfig(**kwargs)


class TestOptimizer:
    @pytest.mark.parametrize("name", ["adam", "amsgrad", "sgd-momentum"])
    def test_zero_gradient_leaves_parameters(self, name):
        params = {"w": np.arange(4.0)}
        opt = Optimizer(params, TrainConfig(optimizer=name, lr=0.1))
        for _ in range(3):
            opt.step({"w": np.zeros(4)})
        np.testing.assert_array_equal(params["w"], np.arange(4.0))

    def test_first_adam_step_is_lr_times_sign(self):
        params = {"w": np.zeros(3)}
        Optimizer(params, TrainConfig(lr=0.1)).step({"w": np.array([2.0, -0.5, 1e-3])})
        np.testing.assert_allclose(params["w"], [-0.1, 0.1, -0.1], rtol=1e-4)

    def test_sgd_momentum(self):
        params = {"w": np.zeros(1)}
        opt = Optimizer(params, TrainConfig(optimizer="sgd-momentum", lr=0.1, momentum=0.5))
        opt.step({"w": np.ones(1)})
        opt.step({"w": np.ones(1)})
        np.testing.assert_allclose(params["w"], [-0.1 - 0.15])


class TestTrain:
    def test_separable_single_atom(self):
        batch = separable_batch(make_rng(0))
        model = build_cen(1, 2, dictionary_size=1, seed=0)
        train(model, batch, TrainConfig(lr=0.05, max_epochs=200, entropy_weight=0.0, val_fraction=0.0,
                                        patience=200))
        assert accuracy(model.predict_proba(batch.C, batch.X).argmax(1), batch.y) >= 0.99

    def test_zero_learning_rate(self):
        batch = separable_batch(make_rng(1))
        model = build_cen(1, 2, dictionary_size=2, hidden=(4,), seed=1)
        before = {k: v.copy() for k, v in model.parameters().items()}
        res = train(model, batch, TrainConfig(lr=0.0, max_epochs=5, patience=10))
        for k, v in model.parameters().items():
            np.testing.assert_array_equal(v, before[k])
        assert len({row["val_loss"] for row in res.history}) == 1

    def test_bit_identical_histories(self):
        data = gen_xor_context(30, 3).batch()

        def run():
            model = build_cen(4, 2, dictionary_size=2, hidden=(8,), dropout=0.2, seed=5)
            res = train(model, data, TrainConfig(lr=0.01, max_epochs=5, seed=9))
            return res.history, model.parameters()

        h1, p1 = run()
        h2, p2 = run()
        assert h1 == h2
        for k in p1:
            assert np.array_equal(p1[k], p2[k])

    def test_early_stopping_restores_best_weights(self):
        data = gen_xor_context(20, 4).batch()
        tr, val = split_batch(data, 0.3, 0)
        model = build_cen(4, 2, dictionary_size=None, hidden=(32,), seed=0)
        res = train(model, tr, TrainConfig(lr=0.2, max_epochs=200, patience=2, entropy_weight=0.0), val=val)
        assert res.stopped_early
        assert len(res.history) < 200
        assert model.objective(val) == pytest.approx(res.best_val_loss, abs=1e-12)
        assert res.best_val_loss == min(r["val_loss"] for r in res.history[:res.best_epoch])

    def test_divergence_carries_state(self):
        batch = separable_batch(make_rng(2))
        batch.X[...] *= 1e100
        model = build_cen(1, 2, dictionary_size=2, hidden=(), seed=0)
        model.dictionary.D[...] = 0.0
        with pytest.raises(DivergedTrainingError) as info:
            train(model, batch, TrainConfig(lr=1e200, optimizer="sgd-momentum", max_epochs=50))
        assert info.value.state is not None

    def test_xor_context_mixed(self):
        data = gen_xor_context(100, 0)
        test = gen_xor_context(100, 1)
        model = build_cen(4, 2, dictionary_size=2, hidden=(), seed=0)
        train(model, data.batch(), TrainConfig(lr=0.02, batch_size=64, max_epochs=150, entropy_weight=0.1,
                                               patience=150))
        assert evaluate(model, test.batch()).accuracy >= 0.95

    def test_history_csv(self, tmp_path):
        data = gen_xor_context(10, 0).batch()
        res = train(build_cen(4, 2, seed=0), data, TrainConfig(max_epochs=2))
        path = tmp_path / "h.csv"
        res.write_history_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss,val_acc,entropy"
        assert len(lines) == 3

    def test_mlp_baseline_trains(self):
        data = gen_xor_context(50, 0).batch()
        model = build_mlp_classifier(4 + 2, (16,), seed=0)
        res = train(model, data, TrainConfig(lr=0.01, max_epochs=3))
        assert len(res.history) == 3


class TestEvaluate:
    def test_linear_report(self):
        data = gen_xor_context(20, 0).batch()
        report = evaluate(build_cen(4, 2, seed=0), data)
        assert 0 <= report.accuracy <= 1 and 0 <= report.auc <= 1
        assert report.rae is None and report.entropy >= 0

    def test_survival_report(self):
        rng = make_rng(0)
        model = build_cen(3, 2, "survival", m=4, seed=0)
        batch = Batch(rng.normal(size=(12, 3)), rng.normal(size=(12, 2)), rng.integers(0, 4, 12),
                      censored=rng.random(12) < 0.3)
        report = evaluate(model, batch, quantile_idx=[1, 2, 3])
        assert set(report.acc_at_quantiles) == {"1", "2", "3"}
        assert 0 <= report.rae <= 1
        assert report.accuracy is None
