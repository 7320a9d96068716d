"""Classifier core: softmax, backprop gradients, ADADELTA, training loop."""
import math

import numpy as np
import pytest

from ionread import mlp, sim, threshold
from ionread.evaluate import confusion, fidelity, label_to_index, split
from ionread.mlp import (
    AdadeltaState,
    MlpModel,
    NetworkError,
    TrainConfig,
    TrainingError,
    adadelta_step,
    backward,
    forward,
    loss,
    predict,
    softmax,
    train,
)


def adadelta_scalar_oracle(grads, rho=0.95, eps=1e-6):
    """Pure-python transcription of the update rule for one scalar."""
    x, g2, d2 = 0.0, 0.0, 0.0
    trace = []
    for g in grads:
        g2 = rho * g2 + (1.0 - rho) * g * g
        step = -math.sqrt(d2 + eps) / math.sqrt(g2 + eps) * g
        d2 = rho * d2 + (1.0 - rho) * step * step
        x += step
        trace.append(x)
    return trace


class TestSoftmax:
    def test_uniform_on_equal_logits(self):
        out = softmax(np.zeros((3, 4)))
        np.testing.assert_allclose(out, 0.25, atol=1e-15)

    def test_two_class_closed_form(self):
        out = softmax(np.array([[0.0, math.log(2.0)]]))
        np.testing.assert_allclose(out, [[1.0 / 3.0, 2.0 / 3.0]], atol=1e-15)

    def test_shift_invariance(self):
        rng = np.random.default_rng(11)
        logits = rng.normal(size=(6, 5))
        for shift in (-50.0, -1.0, 3.0, 50.0):
            np.testing.assert_allclose(
                softmax(logits + shift), softmax(logits), atol=1e-12
            )

    def test_extreme_logits_stay_finite(self):
        out = softmax(np.array([[1000.0, 0.0, -1000.0]]))
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out.sum(), 1.0, atol=1e-15)


class TestForwardLoss:
    def test_rows_sum_to_one(self):
        model = MlpModel([5, 8, 8, 4], seed=1)
        probs = forward(model, np.random.default_rng(2).normal(size=(9, 5)))
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_zero_weights_give_uniform_and_log_c_loss(self):
        model = MlpModel([3, 8, 8, 4], seed=0)
        for w in model.weights:
            w[...] = 0.0
        x = np.ones((5, 3))
        np.testing.assert_allclose(forward(model, x), 0.25, atol=1e-15)
        assert loss(model, x, [0, 1, 2, 3, 0]) == pytest.approx(
            math.log(4.0), abs=1e-12
        )

    def test_rejects_wrong_width_and_nonfinite(self):
        model = MlpModel([3, 8, 8, 2], seed=0)
        with pytest.raises(NetworkError):
            forward(model, np.ones((2, 4)))
        with pytest.raises(NetworkError):
            forward(model, np.array([[1.0, np.nan, 0.0]]))

    def test_hidden_width_bounds_enforced(self):
        with pytest.raises(NetworkError):
            MlpModel([3, 7, 8, 2])
        with pytest.raises(NetworkError):
            MlpModel([3, 8, 41, 2])

    def test_output_must_be_power_of_two(self):
        with pytest.raises(NetworkError):
            MlpModel([3, 8, 8, 3])


class TestGradients:
    @staticmethod
    def finite_difference(model, x, y, h=1e-5):
        grads = []
        for param in model.parameters:
            grad = np.zeros_like(param)
            it = np.nditer(param, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                keep = param[idx]
                param[idx] = keep + h
                up = loss(model, x, y)
                param[idx] = keep - h
                down = loss(model, x, y)
                param[idx] = keep
                grad[idx] = (up - down) / (2.0 * h)
            grads.append(grad)
        return grads

    def test_matches_finite_differences(self):
        # ten random small models; norm-relative error per parameter tensor
        for trial in range(10):
            rng = np.random.default_rng(100 + trial)
            d_in = int(rng.integers(2, 6))
            n_out = int(rng.choice([2, 4]))
            model = MlpModel([d_in, 8, 8, n_out], seed=trial)
            x = rng.normal(size=(7, d_in))
            y = rng.integers(0, n_out, size=7)
            analytic = backward(model, x, y)
            numeric = self.finite_difference(model, x, y)
            for a, n in zip(analytic, numeric):
                err = np.linalg.norm(a - n) / max(
                    np.linalg.norm(a) + np.linalg.norm(n), 1e-12
                )
                assert err < 1e-4

    def test_output_bias_gradient_is_mean_residual(self):
        model = MlpModel([4, 8, 8, 4], seed=5)
        rng = np.random.default_rng(6)
        x = rng.normal(size=(11, 4))
        y = rng.integers(0, 4, size=11)
        grads = backward(model, x, y)
        probs = forward(model, x)
        residual = probs.copy()
        residual[np.arange(11), y] -= 1.0
        np.testing.assert_allclose(grads[5], residual.mean(axis=0), atol=1e-12)

    def test_zero_input_kills_first_layer_weight_gradient(self):
        model = MlpModel([4, 8, 8, 2], seed=7)
        grads = backward(model, np.zeros((3, 4)), [0, 1, 0])
        np.testing.assert_array_equal(grads[0], 0.0)


class TestAdadelta:
    def test_frozen_first_step(self):
        params = [np.array([0.0])]
        adadelta_step(params, [np.array([1.0])], AdadeltaState(params))
        assert params[0][0] == pytest.approx(-4.472091234311e-3, abs=1e-12)

    def test_matches_scalar_oracle_over_many_steps(self):
        rng = np.random.default_rng(21)
        grads = rng.normal(size=50).tolist()
        params = [np.array([0.0])]
        state = AdadeltaState(params)
        for g, expected in zip(grads, adadelta_scalar_oracle(grads)):
            adadelta_step(params, [np.array([g])], state)
            assert params[0][0] == pytest.approx(expected, abs=1e-12)

    def test_zero_gradient_is_a_no_op(self):
        params = [np.full((2, 2), 3.5)]
        state = AdadeltaState(params)
        adadelta_step(params, [np.zeros((2, 2))], state)
        np.testing.assert_array_equal(params[0], 3.5)

    def test_step_opposes_gradient(self):
        params = [np.array([0.0, 0.0])]
        state = AdadeltaState(params)
        adadelta_step(params, [np.array([2.0, -0.5])], state)
        assert params[0][0] < 0.0 < params[0][1]

    def test_elementwise_independence(self):
        # a vector update must equal per-component scalar updates
        grads = np.array([0.3, -1.2, 4.0])
        params = [grads * 0.0]
        state = AdadeltaState(params)
        for _ in range(3):
            adadelta_step(params, [grads], state)
        for i, g in enumerate(grads):
            expected = adadelta_scalar_oracle([g, g, g])[-1]
            assert params[0][i] == pytest.approx(expected, abs=1e-12)


class TestTraining:
    def test_learns_xor(self):
        base = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
        x = np.tile(base, (100, 1))
        y = ["0", "1", "1", "0"] * 100
        model, history = train(x, y, hidden=(8, 8), config=TrainConfig(seed=3))
        assert predict(model, base) == ["0", "1", "1", "0"]
        assert history[0]["epoch"] == 0
        assert len(history) <= 50

    def test_keeps_best_validation_weights(self):
        base = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
        x = np.tile(base, (50, 1))
        y = ["0", "1", "1", "0"] * 50
        config = TrainConfig(seed=9)
        model, history = train(x, y, hidden=(8, 8), config=config)
        _, val_idx = split(y, 1.0 - config.validation_fraction, config.seed)
        val_fid = fidelity(
            confusion(predict(model, x[val_idx]), [y[i] for i in val_idx])
        ).average
        assert val_fid == pytest.approx(max(h["val_fidelity"] for h in history))

    def test_training_is_bit_reproducible(self):
        rng = np.random.default_rng(31)
        x = rng.normal(size=(240, 3))
        y = ["0" if v[0] < 0 else "1" for v in x]
        config = TrainConfig(epochs=4, seed=12)
        model_a, hist_a = train(x, y, hidden=(8, 8), config=config)
        model_b, hist_b = train(x, y, hidden=(8, 8), config=config)
        for wa, wb in zip(model_a.parameters, model_b.parameters):
            np.testing.assert_array_equal(wa, wb)
        assert hist_a == hist_b
        model_c, _ = train(x, y, hidden=(8, 8), config=TrainConfig(epochs=4, seed=13))
        assert any(
            not np.array_equal(wa, wc)
            for wa, wc in zip(model_a.parameters, model_c.parameters)
        )

    def test_matches_count_threshold_on_separable_counts(self):
        # single-feature photon counts: the network has to rediscover the cut
        model_params = sim.EmissionModel()
        rng = np.random.default_rng(41)
        n = 3000
        counts = np.concatenate(
            [
                rng.poisson(0.0033, size=n),
                rng.poisson(model_params.mean_bright_count, size=n),
            ]
        ).astype(float)
        labels = ["0"] * n + ["1"] * n
        perm = np.random.default_rng(42).permutation(2 * n)
        counts, labels = counts[perm], [labels[i] for i in perm]
        train_idx, test_idx = split(labels, 0.8, seed=7)
        train_labels = [labels[i] for i in train_idx]
        test_labels = [labels[i] for i in test_idx]

        fixed = threshold.fit_fixed(
            counts[train_idx, None].astype(int), train_labels
        )
        ft_pred = threshold.classify_fixed(fixed, counts[test_idx, None].astype(int))
        ft_fid = fidelity(confusion(ft_pred, test_labels)).average

        scale = counts[train_idx].max()
        model, _ = train(
            counts[train_idx, None] / scale,
            train_labels,
            hidden=(8, 8),
            config=TrainConfig(epochs=20, seed=5),
        )
        nn_pred = predict(model, counts[test_idx, None] / scale)
        nn_fid = fidelity(confusion(nn_pred, test_labels)).average
        assert nn_fid >= ft_fid - 0.002

    def test_prediction_ties_resolve_to_lowest_index(self):
        model = MlpModel([2, 8, 8, 4], seed=0)
        for w in model.weights:
            w[...] = 0.0
        assert predict(model, np.ones((3, 2))) == ["00", "00", "00"]

    def test_divergence_raises(self):
        # inputs near float max overflow the first matmul into nan losses
        x = np.full((64, 16), 1e308)
        y = ["0", "1"] * 32
        with np.errstate(all="ignore"), pytest.raises(TrainingError):
            train(x, y, hidden=(8, 8), config=TrainConfig(epochs=2, seed=0))

    def test_label_row_mismatch_raises(self):
        with pytest.raises(NetworkError):
            train(np.ones((4, 2)), ["0", "1"], hidden=(8, 8))

    def test_config_validation(self):
        with pytest.raises(NetworkError):
            TrainConfig(batch_size=0)
        with pytest.raises(NetworkError):
            TrainConfig(rho=1.0)
        with pytest.raises(NetworkError):
            TrainConfig(validation_fraction=0.0)


class TestSerialisation:
    def test_round_trip(self, tmp_path):
        model = MlpModel([6, 8, 8, 4], seed=17)
        path = tmp_path / "model.json"
        mlp.save_model(model, str(path), metadata={"strategy": "NN"})
        loaded = mlp.load_model(str(path))
        assert loaded.layer_sizes == model.layer_sizes
        x = np.random.default_rng(3).normal(size=(5, 6))
        np.testing.assert_array_equal(forward(loaded, x), forward(model, x))

    def test_rejects_foreign_record(self):
        with pytest.raises(NetworkError):
            MlpModel.from_dict({"format": "something.else"})
