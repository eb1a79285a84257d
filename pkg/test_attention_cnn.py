import numpy as np
import pytest
from pydantic import ValidationError as PydanticValidationError
from scipy.special import expit

from attention_cnn import (
    AttentionCnnModel,
    CnnArchitecture,
    TrainConfig,
    channel_attention,
    cnn_model_from_dict,
    cnn_model_to_dict,
    conv_forward,
    forward,
    loss_and_grad,
    model_init,
    predict_proba,
    train,
)
from spectra_errors import ConfigurationError, FormatError, ShapeError, ValidationError

SMALL = CnnArchitecture(input_len=6, channels=(2, 4, 8), reduction_ratio=2)


def naive_conv(x, weight, bias):
    c_out, c_in, k = weight.shape
    length = x.shape[1]
    pad = k // 2
    padded = np.pad(x, ((0, 0), (pad, pad)))
    out = np.zeros((c_out, length))
    for o in range(c_out):
        for i in range(length):
            total = bias[o]
            for c in range(c_in):
                for j in range(k):
                    total += weight[o, c, j] * padded[c, i + j]
            out[o, i] = total
    return out


def activation_pattern(model, X):
    """ReLU・最大値プーリングの分岐をまとめたもの（数値微分が有効かの判定用）"""

    _, cache = forward(model, X)
    attention = cache["attention"]
    parts = [layer["z"] > 0 for layer in cache["layers"]]
    parts += [attention["h_avg"] > 0, attention["h_max"] > 0, attention["argmax"]]
    return [p.copy() for p in parts]


def same_pattern(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def check_gradients(model, X, y, entries_per_group=None, rng=None, h=1e-5):
    _, analytic = loss_and_grad(model, X, y)
    base_pattern = activation_pattern(model, X)

    for name, value in model.params.items():
        flat_indices = np.arange(value.size)
        if entries_per_group is not None:
            flat_indices = rng.choice(value.size, size=min(entries_per_group, value.size), replace=False)

        got, expected = [], []
        for flat in flat_indices:
            index = np.unravel_index(flat, value.shape)
            original = value[index]

            value[index] = original + h
            plus_pattern = activation_pattern(model, X)
            loss_plus, _ = loss_and_grad(model, X, y)
            value[index] = original - h
            minus_pattern = activation_pattern(model, X)
            loss_minus, _ = loss_and_grad(model, X, y)
            value[index] = original

            if not (same_pattern(base_pattern, plus_pattern) and same_pattern(base_pattern, minus_pattern)):
                continue
            got.append(analytic[name][index])
            expected.append((loss_plus - loss_minus) / (2 * h))

        got, expected = np.array(got), np.array(expected)
        # 1e-6 未満の勾配は絶対誤差で比べる
        scale = np.maximum(np.maximum(np.abs(got), np.abs(expected)), 1e-6)
        relative = np.abs(got - expected) / scale
        assert relative.max(initial=0.0) < 1e-4, (name, relative.max(initial=0.0))


def separable_scores(rng, n=40, length=24):
    y = np.array([0, 1] * (n // 2))
    X = np.where(y[:, None] == 1, 1.5, -1.5) + rng.normal(0, 0.3, size=(n, length))
    return X, y


class TestCnnArchitecture:
    def test_parameter_shapes(self):
        shapes = CnnArchitecture().parameter_shapes()
        assert shapes["conv1_weight"] == (16, 1, 3)
        assert shapes["conv2_weight"] == (32, 16, 3)
        assert shapes["conv3_weight"] == (64, 32, 3)
        assert shapes["we1"] == (4, 64)
        assert shapes["we2"] == (64, 4)
        assert shapes["fc_weight"] == (2, 64 * 24)
        assert shapes["fc_bias"] == (2,)

    def test_even_kernel(self):
        with pytest.raises(PydanticValidationError):
            CnnArchitecture(kernel_len=4)

    def test_train_config_defaults(self):
        cfg = TrainConfig()
        assert cfg.learning_rate == 2e-4
        assert cfg.epochs == 200
        assert cfg.batch_mode == "full"


class TestModelInit:
    def test_deterministic(self):
        a, b = model_init(seed=7), model_init(seed=7)
        for name in a.params:
            np.testing.assert_array_equal(a.params[name], b.params[name])

    def test_seed_changes_weights(self):
        a, b = model_init(seed=1), model_init(seed=2)
        assert not np.array_equal(a.params["conv1_weight"], b.params["conv1_weight"])

    def test_shapes_bounds_and_zero_biases(self):
        model = model_init(seed=3)
        for name, shape in model.arch.parameter_shapes().items():
            value = model.params[name]
            assert value.shape == shape
            if name.endswith("_bias"):
                np.testing.assert_array_equal(value, 0.0)
            else:
                assert np.max(np.abs(value)) <= 1.0 / np.sqrt(np.prod(shape[1:]))

    def test_reduction_must_divide_channels(self):
        with pytest.raises(ConfigurationError):
            model_init(CnnArchitecture(reduction_ratio=5))


class TestConvForward:
    def test_delta_kernel(self, rng):
        x = rng.normal(size=(1, 10))
        weight = np.array([[[0.0, 1.0, 0.0]]])
        np.testing.assert_array_equal(conv_forward(x, weight, np.zeros(1), relu=False), x)
        np.testing.assert_array_equal(conv_forward(x, weight, np.zeros(1)), np.maximum(x, 0.0))

    def test_zero_input_gives_relu_of_bias(self, rng):
        weight = rng.normal(size=(4, 2, 3))
        bias = np.array([-1.0, 0.0, 0.5, 2.0])
        out = conv_forward(np.zeros((2, 7)), weight, bias)
        np.testing.assert_array_equal(out, np.repeat(np.maximum(bias, 0.0)[:, None], 7, axis=1))

    def test_matches_naive_loops(self, rng):
        for k in (1, 3, 5):
            x = rng.normal(size=(3, 9))
            weight = rng.normal(size=(4, 3, k))
            bias = rng.normal(size=4)
            np.testing.assert_allclose(conv_forward(x, weight, bias, relu=False), naive_conv(x, weight, bias), atol=1e-12)

    def test_batch_matches_rows(self, rng):
        x = rng.normal(size=(5, 2, 8))
        weight = rng.normal(size=(3, 2, 3))
        bias = rng.normal(size=3)
        batch = conv_forward(x, weight, bias)
        for i in range(5):
            np.testing.assert_allclose(batch[i], conv_forward(x[i], weight, bias), atol=1e-12)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ShapeError):
            conv_forward(np.zeros((2, 5)), np.zeros((1, 3, 3)), np.zeros(1))


class TestChannelAttention:
    def micro_model(self):
        model = model_init(CnnArchitecture(input_len=3, channels=(2,), reduction_ratio=2), seed=0)
        model.params["we1"] = np.array([[1.0, 1.0]])
        model.params["we2"] = np.array([[1.0], [-1.0]])
        return model

    def test_hand_computed_weights(self):
        U = np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 3.0]])
        w_total, scaled = channel_attention(U, self.micro_model())

        # v_avg = (2, 1) → 隠れ層 3、v_max = (3, 3) → 隠れ層 6
        expected = np.array([expit(3.0) + expit(6.0), expit(-3.0) + expit(-6.0)])
        np.testing.assert_allclose(w_total, expected, atol=1e-15)
        np.testing.assert_allclose(scaled, expected[:, None] * U, atol=1e-15)

    def test_zero_excitation_passes_through(self, rng):
        model = model_init(seed=0)
        model.params["we1"][:] = 0.0
        model.params["we2"][:] = 0.0
        U = rng.normal(size=(64, 24))

        w_total, scaled = channel_attention(U, model)

        np.testing.assert_array_equal(w_total, 1.0)
        np.testing.assert_array_equal(scaled, U)

    def test_weights_are_between_zero_and_two(self, rng):
        w_total, _ = channel_attention(rng.normal(size=(3, 64, 24)), model_init(seed=5))
        assert w_total.shape == (3, 64)
        assert np.all((w_total > 0.0) & (w_total < 2.0))

    def test_non_finite_feature_map(self):
        U = np.zeros((64, 24))
        U[3, 4] = np.nan
        with pytest.raises(ValidationError):
            channel_attention(U, model_init(seed=0))

    def test_wrong_channel_count(self):
        with pytest.raises(ShapeError):
            channel_attention(np.zeros((32, 24)), model_init(seed=0))


class TestForward:
    def test_shapes(self, rng):
        model = model_init(seed=0)
        logits, cache = forward(model, rng.normal(size=(5, 24)))

        assert logits.shape == (5, 2)
        assert [layer["z"].shape for layer in cache["layers"]] == [(5, 16, 24), (5, 32, 24), (5, 64, 24)]
        assert cache["flat"].shape == (5, 64 * 24)
        assert cache["attention"]["w_total"].shape == (5, 64)

    def test_single_sample(self, rng):
        model = model_init(seed=0)
        x = rng.normal(size=24)
        logits, _ = forward(model, x)
        assert logits.shape == (2,)
        np.testing.assert_allclose(logits, forward(model, x[None])[0][0], atol=1e-12)

    def test_wrong_length(self):
        with pytest.raises(ShapeError):
            forward(model_init(seed=0), np.zeros(23))

    def test_probabilities_sum_to_one(self, rng):
        proba = predict_proba(model_init(seed=0), rng.normal(size=(7, 24)))
        assert proba.shape == (7, 2)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)


class TestLossAndGrad:
    def test_uniform_logits(self, rng):
        model = model_init(seed=0)
        model.params["fc_weight"][:] = 0.0
        loss, _ = loss_and_grad(model, rng.normal(size=(4, 24)), np.array([0, 1, 1, 0]))
        assert loss == pytest.approx(np.log(2.0), abs=1e-12)

    def test_confident_correct_predictions(self, rng):
        model = model_init(seed=0)
        model.params["fc_weight"][:] = 0.0
        model.params["fc_bias"][:] = [-50.0, 50.0]
        loss, _ = loss_and_grad(model, rng.normal(size=(3, 24)), np.ones(3, dtype=int))
        assert loss < 1e-9

    def test_gradient_names_and_shapes(self, rng):
        model = model_init(seed=0)
        _, grads = loss_and_grad(model, rng.normal(size=(3, 24)), np.array([0, 1, 0]))
        assert grads.keys() == model.params.keys()
        for name, grad in grads.items():
            assert grad.shape == model.params[name].shape

    def test_invalid_labels(self, rng):
        with pytest.raises(ValidationError):
            loss_and_grad(model_init(seed=0), rng.normal(size=(2, 24)), np.array([0, 2]))

    def test_gradients_match_finite_differences_small(self, rng):
        for seed in range(20):
            model = model_init(SMALL, seed=seed)
            X = rng.normal(size=(5, SMALL.input_len))
            y = np.array([0, 1, 1, 0, 1])
            check_gradients(model, X, y)

    def test_gradients_match_finite_differences_full(self, rng):
        for seed in range(3):
            model = model_init(seed=seed)
            X = rng.normal(size=(4, 24))
            y = np.array([1, 0, 0, 1])
            check_gradients(model, X, y, entries_per_group=6, rng=rng)


class TestTrain:
    def test_separable_scores_are_learned(self, rng):
        X, y = separable_scores(rng)
        cfg = TrainConfig()
        model, history = train(model_init(seed=0), X, y, cfg)

        assert (cfg.learning_rate, cfg.epochs) == (2e-4, 200)
        assert history.loss[-1] < history.loss[0]
        assert np.all(predict_proba(model, X).argmax(axis=1) == y)

    def test_history_and_input_model_untouched(self, rng):
        X, y = separable_scores(rng, n=10)
        initial = model_init(seed=4)
        before = {name: value.copy() for name, value in initial.params.items()}

        trained, history = train(initial, X, y, TrainConfig(epochs=5), validation=(X[:4], y[:4]))

        assert len(history.loss) == len(history.accuracy) == 5
        assert len(history.val_loss) == len(history.val_accuracy) == 5
        for name, value in before.items():
            np.testing.assert_array_equal(initial.params[name], value)
        assert not np.array_equal(trained.params["fc_weight"], before["fc_weight"])

    def test_first_history_entry_uses_initial_parameters(self, rng):
        X, y = separable_scores(rng, n=8)
        initial = model_init(seed=2)
        _, history = train(initial, X, y, TrainConfig(epochs=3))
        loss, _ = loss_and_grad(initial, X, y)
        assert history.loss[0] == pytest.approx(loss, rel=1e-12)

    def test_deterministic(self, rng):
        X, y = separable_scores(rng, n=12)
        a, _ = train(model_init(seed=1), X, y, TrainConfig(epochs=10))
        b, _ = train(model_init(seed=1), X, y, TrainConfig(epochs=10))
        for name in a.params:
            np.testing.assert_array_equal(a.params[name], b.params[name])

    def test_single_class(self, rng):
        X, _ = separable_scores(rng, n=6)
        with pytest.raises(ValidationError):
            train(model_init(seed=0), X, np.zeros(6, dtype=int), TrainConfig(epochs=1))


class TestPredictProba:
    def test_batch_matches_rows(self, rng):
        model = model_init(seed=6)
        X = rng.normal(size=(6, 24))
        batch = predict_proba(model, X)
        for i in range(6):
            np.testing.assert_allclose(batch[i], predict_proba(model, X[i : i + 1])[0], rtol=1e-12, atol=1e-14)

    def test_row_order(self, rng):
        model = model_init(seed=6)
        X = rng.normal(size=(6, 24))
        order = rng.permutation(6)
        np.testing.assert_allclose(predict_proba(model, X[order]), predict_proba(model, X)[order], rtol=1e-12, atol=1e-14)


class TestCnnSerialization:
    def test_dict_round_trip(self, rng):
        model = model_init(SMALL, seed=9)
        loaded = cnn_model_from_dict(cnn_model_to_dict(model))

        assert isinstance(loaded, AttentionCnnModel)
        assert loaded.arch == model.arch
        assert loaded.rng_seed == 9
        X = rng.normal(size=(3, SMALL.input_len))
        np.testing.assert_array_equal(predict_proba(loaded, X), predict_proba(model, X))

    def test_missing_parameter(self):
        data = cnn_model_to_dict(model_init(SMALL, seed=0))
        del data["parameters"]["we1"]
        with pytest.raises(FormatError):
            cnn_model_from_dict(data)
