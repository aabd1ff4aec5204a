import math

import numpy as np
import pytest

import mnist1d.autodiff as ad
from mnist1d.autodiff import Tape, Tensor, grad, leaf
from mnist1d.datagen import Dataset, GeneratorConfig, generate_dataset
from mnist1d.errors import DataError
from mnist1d.models import ModelSpec, forward, init_model, set_mask
from mnist1d.rng import RngStream
from mnist1d.training import (
    AdamState,
    TrainConfig,
    adam_step,
    corrupt_labels,
    evaluate,
    mse_loss,
    nll_loss,
    one_hot,
    sgd_step,
    train,
)

from oracles import adam_reference, finite_difference


@pytest.fixture(scope="module")
def tiny_data():
    return generate_dataset(GeneratorConfig(train_count=300, test_count=100))


class TestLosses:
    def test_nll_of_uniform_logits_is_log_ten(self):
        logits = Tensor(np.zeros((16, 10)))
        labels = np.arange(16) % 10
        assert abs(float(nll_loss(logits, labels).data) - math.log(10)) < 1e-12

    def test_mse_of_exact_one_hot_is_zero(self):
        labels = np.array([1, 3, 5])
        hot = one_hot(labels)
        assert float(mse_loss(Tensor(hot), hot).data) == 0.0

    def test_label_out_of_range_rejected(self):
        with pytest.raises(DataError):
            nll_loss(Tensor(np.zeros((2, 10))), np.array([0, 10]))

    def test_nll_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        logits_val = rng.normal(size=(6, 10))
        labels = rng.integers(0, 10, size=6)

        def run(values):
            tape = Tape()
            t = leaf(values[0], tape)
            return nll_loss(t, labels), t

        loss, t = run([logits_val])
        (analytic,) = grad(loss, [t])
        (numeric,) = finite_difference(lambda vs: float(run(vs)[0].data), [logits_val])
        assert np.max(np.abs(analytic.data - numeric) / np.maximum(np.abs(numeric), 1e-3)) < 1e-6


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        params = {"w": Tensor(np.array([1.0, -2.0]))}
        state = AdamState()
        adam_step(params, {"w": np.zeros(2)}, state, lr=0.1)
        np.testing.assert_array_equal(params["w"].data, [1.0, -2.0])

    def test_first_step_is_signed_lr_for_tiny_eps(self):
        g = np.array([0.3, -7.0, 0.001])
        params = {"w": Tensor(np.zeros(3))}
        adam_step(params, {"w": g}, AdamState(), lr=0.05, eps=1e-12)
        np.testing.assert_allclose(params["w"].data, -0.05 * np.sign(g), rtol=1e-6)

    def test_converges_on_scalar_quadratic(self):
        # f(w) = (w - 3)^2, starting at 0, matched against the scalar reference run
        params = {"w": Tensor(np.array(0.0))}
        state = AdamState()
        for _ in range(100):
            g = 2.0 * (params["w"].data - 3.0)
            adam_step(params, {"w": g}, state, lr=0.1)
        assert abs(float(params["w"].data) - 3.0) < 0.1
        expected = adam_reference(lambda w: 2.0 * (w - 3.0), 0.0, 0.1, 100)
        assert abs(float(params["w"].data) - expected) < 1e-9

    def test_masked_entries_stay_exactly_zero_through_steps(self):
        rng = np.random.default_rng(1)
        model = init_model(ModelSpec("mlp", 8, 10, (6,), init_seed=0))
        mask = (rng.uniform(size=(8, 6)) > 0.5).astype(float)
        model = set_mask(model, {"w0": mask})
        state = AdamState()
        for _ in range(10):
            grads = {k: rng.normal(size=v.data.shape) for k, v in model.params.items()}
            adam_step(model.params, grads, state, lr=0.05, masks=model.masks)
            assert np.all(model.params["w0"].data[mask == 0] == 0.0)


class TestCorruptLabels:
    def test_zero_fraction_identity(self):
        y = np.arange(50) % 10
        np.testing.assert_array_equal(corrupt_labels(y, 0.0, RngStream(0, 0)), y)

    def test_full_fraction_changes_every_label(self):
        y = np.arange(200) % 10
        out = corrupt_labels(y, 1.0, RngStream(0, 1))
        assert np.all(out != y)
        assert np.all((out >= 0) & (out < 10))

    def test_exact_count_changed(self):
        y = np.zeros(4000, dtype=np.int64)
        out = corrupt_labels(y, 0.15, RngStream(0, 2))
        assert int(np.sum(out != y)) == 600

    def test_deterministic(self):
        y = np.arange(100) % 10
        a = corrupt_labels(y, 0.3, RngStream(9, 9))
        b = corrupt_labels(y, 0.3, RngStream(9, 9))
        np.testing.assert_array_equal(a, b)


class TestEvaluate:
    def test_perfect_model_scores_one(self):
        model = init_model(ModelSpec("logistic", 10, 10, (), init_seed=0))
        model.params["w"] = Tensor(np.eye(10) * 10.0)
        x = one_hot(np.arange(10))
        assert evaluate(model, x, np.arange(10))["accuracy"] == 1.0

    def test_zero_model_on_balanced_labels_scores_exactly_point_one(self):
        # all-zero logits tie; argmax breaks to class 0
        model = init_model(ModelSpec("logistic", 40, 10, ()))
        model.params["w"] = Tensor(np.zeros((40, 10)))
        ds = generate_dataset(GeneratorConfig(train_count=0, test_count=1000))
        assert evaluate(model, ds.x_test, ds.y_test)["accuracy"] == 0.10

    def test_random_logits_near_chance(self):
        model = init_model(ModelSpec("logistic", 40, 10, (), init_seed=4))
        ds = generate_dataset(GeneratorConfig(train_count=0, test_count=1000, seed=5))
        acc = evaluate(model, ds.x_test, ds.y_test)["accuracy"]
        assert abs(acc - 0.10) < 0.03


class TestTrain:
    def test_max_steps_zero_returns_initial_model(self, tiny_data):
        model = init_model(ModelSpec("logistic", 40, 10, ()))
        result = train(model, tiny_data, TrainConfig(max_steps=0), val_count=50)
        assert len(result.curves) == 1
        assert result.stopped_at == 0
        for k in model.params:
            np.testing.assert_array_equal(result.best_model.params[k].data, model.params[k].data)

    def test_training_is_bit_deterministic(self, tiny_data):
        cfg = TrainConfig(max_steps=120, eval_every=40, seed=3)
        r1 = train(init_model(ModelSpec("mlp", 40, 10, (20,), init_seed=1)), tiny_data, cfg, val_count=50)
        r2 = train(init_model(ModelSpec("mlp", 40, 10, (20,), init_seed=1)), tiny_data, cfg, val_count=50)
        assert [vars(a) for a in r1.curves] == [vars(b) for b in r2.curves]

    def test_best_model_has_maximal_recorded_validation_accuracy(self, tiny_data):
        cfg = TrainConfig(max_steps=400, eval_every=50, seed=0)
        result = train(init_model(ModelSpec("mlp", 40, 10, (20,), init_seed=2)), tiny_data, cfg, val_count=50)
        best_val = evaluate(result.best_model, tiny_data.x_train[-50:], tiny_data.y_train[-50:])["accuracy"]
        assert best_val >= max(rec.val_acc for rec in result.curves) - 1e-12

    def test_curves_strictly_increasing_in_step(self, tiny_data):
        cfg = TrainConfig(max_steps=150, eval_every=40)
        result = train(init_model(ModelSpec("logistic", 40, 10, ())), tiny_data, cfg, val_count=50)
        steps = [rec.step for rec in result.curves]
        assert steps == sorted(set(steps))

    def test_early_stopping_halts_before_max_steps(self, tiny_data):
        cfg = TrainConfig(max_steps=5000, eval_every=20, early_stop_patience=3, learning_rate=0.05)
        result = train(init_model(ModelSpec("logistic", 40, 10, ())), tiny_data, cfg, val_count=50)
        assert result.stopped_at < 5000

    def test_empty_dataset_rejected(self):
        empty = Dataset(
            x_train=np.zeros((0, 40)),
            y_train=np.zeros(0, dtype=np.int64),
            x_test=np.zeros((0, 40)),
            y_test=np.zeros(0, dtype=np.int64),
            config=GeneratorConfig(train_count=0, test_count=0),
        )
        with pytest.raises(DataError):
            train(init_model(ModelSpec("logistic", 40, 10, ())), empty, TrainConfig(), val_count=0)

    def test_masked_training_keeps_pruned_weights_zero(self, tiny_data):
        model = init_model(ModelSpec("mlp", 40, 10, (12,), init_seed=3))
        mask = (np.random.default_rng(2).uniform(size=(40, 12)) > 0.7).astype(float)
        model = set_mask(model, {"w0": mask})
        result = train(model, tiny_data, TrainConfig(max_steps=60, eval_every=30), val_count=50)
        assert np.all(result.best_model.params["w0"].data[mask == 0] == 0.0)

    def test_full_batch_sgd_on_logistic_loss_is_non_increasing(self, tiny_data):
        # convex objective, small constant step
        model = init_model(ModelSpec("logistic", 40, 10, (), init_seed=0))
        sub = Dataset(
            x_train=tiny_data.x_train[:100],
            y_train=tiny_data.y_train[:100],
            x_test=tiny_data.x_test[:0],
            y_test=tiny_data.y_test[:0],
            config=tiny_data.config,
        )
        cfg = TrainConfig(optimizer="sgd", learning_rate=0.01, batch_size=100, max_steps=100, eval_every=1)
        result = train(model, sub, cfg, val_count=0)
        losses = [rec.train_loss for rec in result.curves]
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_logistic_training_is_permutation_equivariant(self, tiny_data):
        # permuting input columns and first-layer rows together leaves every
        # recorded loss identical to 1e-12
        perm = np.random.default_rng(0).permutation(40)
        base = init_model(ModelSpec("logistic", 40, 10, (), init_seed=6))
        permuted = init_model(ModelSpec("logistic", 40, 10, (), init_seed=6))
        permuted.params["w"] = Tensor(base.params["w"].data[perm])

        data_p = Dataset(
            x_train=tiny_data.x_train[:, perm],
            y_train=tiny_data.y_train,
            x_test=tiny_data.x_test[:, perm],
            y_test=tiny_data.y_test,
            config=tiny_data.config,
        )
        cfg = TrainConfig(max_steps=100, eval_every=25, seed=11)
        r_base = train(base, tiny_data, cfg, val_count=50)
        r_perm = train(permuted, data_p, cfg, val_count=50)
        for a, b in zip(r_base.curves, r_perm.curves):
            assert abs(a.train_loss - b.train_loss) < 1e-12
            assert a.train_acc == b.train_acc
