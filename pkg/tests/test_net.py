import json
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from freqlens import net as nets
from freqlens.errors import (
    ConfigError,
    DimensionError,
    ModelFormatError,
    TrainingFailureError,
    UnsupportedVersionError,
)


def tiny_mlp(rng, n_in=8, hidden=6, n_out=3, bias=True):
    w1 = rng.standard_normal((hidden, n_in))
    w2 = rng.standard_normal((n_out, hidden))
    b1 = rng.standard_normal(hidden) if bias else np.zeros(hidden)
    b2 = rng.standard_normal(n_out) if bias else np.zeros(n_out)
    return nets.Network(
        [nets.Dense(w1, b1), nets.ReLU(), nets.Dense(w2, b2)], n_in, n_out
    )


def conv_net(rng, n=20):
    return nets.Network(
        [
            nets.Conv1D(rng.standard_normal((3, 1, 5)), rng.standard_normal(3), stride=2),
            nets.ReLU(),
            nets.Conv1D(rng.standard_normal((2, 3, 3)), rng.standard_normal(2)),
            nets.Flatten(),
            nets.Dense(rng.standard_normal((4, 12)), rng.standard_normal(4)),
        ],
        n,
        4,
    )


class TestForward:
    def test_identity_dense(self, rng):
        net = nets.Network([nets.Dense(np.eye(5), np.zeros(5))], 5, 5)
        x = rng.standard_normal(5)
        logits, _ = nets.forward(net, x)
        np.testing.assert_array_equal(logits, x)

    def test_zero_weights_give_bias(self, rng):
        bias = rng.standard_normal(4)
        net = nets.Network([nets.Dense(np.zeros((4, 6)), bias)], 6, 4)
        logits, _ = nets.forward(net, rng.standard_normal(6))
        np.testing.assert_array_equal(logits, bias)

    def test_two_layer_matches_manual_matmul(self, rng):
        net = tiny_mlp(rng)
        x = rng.standard_normal(8)
        h = np.maximum(net.layers[0].weights @ x + net.layers[0].bias, 0.0)
        expected = net.layers[2].weights @ h + net.layers[2].bias
        logits, _ = nets.forward(net, x)
        np.testing.assert_allclose(logits, expected, atol=1e-12)

    def test_shape_mismatch(self, rng):
        net = tiny_mlp(rng)
        with pytest.raises(DimensionError):
            nets.forward(net, np.zeros(9))

    def test_conv_shapes_chain(self, rng):
        net = conv_net(rng)
        logits, _ = nets.forward(net, rng.standard_normal(20))
        assert logits.shape == (4,)

    def test_batch_matches_single(self, rng):
        net = conv_net(rng)
        xs = rng.standard_normal((5, 20))
        batch_logits, _ = nets.forward_batch(net, xs)
        for i in range(5):
            single, _ = nets.forward(net, xs[i])
            np.testing.assert_allclose(batch_logits[i], single, atol=1e-12)


def relative_grad_error(net, x, target, h=1e-4):
    grad = nets.backward(net, x, target)
    fd = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        fd[i] = (nets.forward(net, xp)[0][target] - nets.forward(net, xm)[0][target]) / (2 * h)
    scale = max(np.max(np.abs(fd)), 1e-8)
    return np.max(np.abs(grad - fd)) / scale


class TestBackward:
    def test_linear_gradient_is_weight_row(self, rng):
        w = rng.standard_normal((3, 7))
        net = nets.Network([nets.Dense(w, rng.standard_normal(3))], 7, 3)
        grad = nets.backward(net, rng.standard_normal(7), 1)
        np.testing.assert_allclose(grad, w[1], atol=1e-14)

    def test_relu_blocks_negative_preactivation(self):
        net = nets.Network(
            [nets.Dense(np.array([[1.0]]), np.array([-5.0])), nets.ReLU(),
             nets.Dense(np.array([[2.0]]), np.zeros(1))],
            1, 1,
        )
        grad = nets.backward(net, np.array([1.0]), 0)
        np.testing.assert_array_equal(grad, [0.0])

    def test_finite_differences_mlp(self, rng):
        net = tiny_mlp(rng)
        assert relative_grad_error(net, rng.standard_normal(8) + 0.1, 2) <= 1e-4

    def test_finite_differences_conv(self, rng):
        net = conv_net(rng)
        assert relative_grad_error(net, rng.standard_normal(20), 3) <= 1e-4

    def test_bad_class_index(self, rng):
        with pytest.raises(ConfigError):
            nets.backward(tiny_mlp(rng), np.zeros(8), 7)


class TestParameterGradients:
    def test_match_finite_differences_of_loss(self, rng):
        net = conv_net(rng)
        xs = rng.standard_normal((4, 20))
        ys = np.array([0, 1, 2, 3])

        def loss():
            logits, _ = nets.forward_batch(net, xs)
            probs = nets.softmax(logits)
            return -np.mean(np.log(probs[np.arange(4), ys]))

        logits, trace = nets.forward_batch(net, xs)
        delta = nets.softmax(logits)
        delta[np.arange(4), ys] -= 1.0
        delta /= 4
        grads = nets._param_grads(net, trace, delta)
        params = nets._param_layers(net)
        h = 1e-6
        for layer, (gw, gb) in zip(params, grads):
            w = nets._weights_of(layer)
            idx = tuple(rng.integers(0, s) for s in w.shape)
            orig = w[idx]
            w[idx] = orig + h
            up = loss()
            w[idx] = orig - h
            down = loss()
            w[idx] = orig
            fd = (up - down) / (2 * h)
            assert abs(gw[idx] - fd) <= 1e-4 * max(abs(fd), 1e-6)


class TestTrain:
    def test_single_class_reaches_full_accuracy(self, rng):
        xs = rng.standard_normal((64, 8))
        ys = np.ones(64, dtype=int)
        net = nets.build_mlp(8, (16,), 3, seed=0)
        cfg = nets.TrainConfig(epochs=1, batch_size=8, learning_rate=0.3, optimizer="sgd", seed=0)
        metrics = nets.train(net, xs, ys, cfg)
        assert metrics["train_accuracy"] == 1.0

    def test_seed_determinism(self, rng):
        xs = rng.standard_normal((128, 8))
        ys = rng.integers(0, 3, 128)
        results = []
        for _ in range(2):
            net = nets.build_mlp(8, (16,), 3, seed=5)
            nets.train(net, xs, ys, nets.TrainConfig(epochs=2, seed=9))
            results.append([l.weights.copy() for l in nets._param_layers(net)])
        for a, b in zip(*results):
            np.testing.assert_array_equal(a, b)

    def test_divergence_raises(self, rng):
        xs = rng.standard_normal((32, 8)) * 100
        ys = rng.integers(0, 3, 32)
        net = nets.build_mlp(8, (16,), 3, seed=0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            with pytest.raises(TrainingFailureError):
                nets.train(
                    net, xs, ys,
                    nets.TrainConfig(epochs=20, learning_rate=1e12, optimizer="sgd", seed=0),
                )

    def test_empty_dataset_rejected(self):
        net = nets.build_mlp(8, (16,), 3, seed=0)
        with pytest.raises(TrainingFailureError):
            nets.train(net, np.zeros((0, 8)), np.zeros(0, dtype=int), nets.TrainConfig())

    def test_out_of_range_labels_rejected(self, rng):
        net = nets.build_mlp(8, (16,), 3, seed=0)
        with pytest.raises(TrainingFailureError):
            nets.train(net, rng.standard_normal((4, 8)), np.array([0, 1, 2, 3]), nets.TrainConfig())

    def test_sgd_also_learns(self, rng):
        xs = rng.standard_normal((256, 8))
        ys = (xs[:, 0] > 0).astype(int)
        net = nets.build_mlp(8, (16,), 2, seed=0)
        metrics = nets.train(
            net, xs, ys,
            nets.TrainConfig(epochs=60, batch_size=32, optimizer="sgd", learning_rate=0.5, seed=0),
        )
        assert metrics["train_accuracy"] >= 0.95


@given(st.integers(0, 2**31 - 1))
def test_forward_is_pure(seed):
    rng = np.random.default_rng(seed)
    net = tiny_mlp(rng)
    x = rng.standard_normal(8)
    first, _ = nets.forward(net, x)
    second, _ = nets.forward(net, x)
    np.testing.assert_array_equal(first, second)


class TestSerialization:
    def test_round_trip_forward_identical(self, rng, tmp_path):
        net = conv_net(rng)
        path = tmp_path / "model.json"
        nets.save_network(net, path)
        back = nets.load_network(path)
        for _ in range(100):
            x = rng.standard_normal(20)
            a, _ = nets.forward(net, x)
            b, _ = nets.forward(back, x)
            np.testing.assert_array_equal(a, b)

    def test_truncated_file(self, rng, tmp_path):
        net = tiny_mlp(rng)
        path = tmp_path / "model.json"
        nets.save_network(net, path)
        path.write_text(path.read_text()[:50])
        with pytest.raises(ModelFormatError):
            nets.load_network(path)

    def test_version_mismatch(self, rng, tmp_path):
        net = tiny_mlp(rng)
        path = tmp_path / "model.json"
        nets.save_network(net, path)
        doc = json.loads(path.read_text())
        doc["format_version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(UnsupportedVersionError):
            nets.load_network(path)

    def test_missing_header(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text("{}")
        with pytest.raises(ModelFormatError):
            nets.load_network(path)
