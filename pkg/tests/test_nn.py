import json
import math

import numpy as np
import pytest

from dmapalign import nn
from dmapalign.errors import ShapeError, TapSelectionError, TrainingError


def reference_forward(net, x):
    """Straight-line oracle: explicit per-neuron loops, no matrix algebra."""
    values = [float(v) for v in x]
    for w, b, act in zip(net.weights, net.biases, net.spec.activations):
        out = []
        for row in range(w.shape[0]):
            z = b[row]
            for col in range(w.shape[1]):
                z += w[row, col] * values[col]
            out.append(math.tanh(z) if act == "tanh" else z)
        values = out
    return np.asarray(values)


def reference_layer_values(net, x):
    values = [np.asarray([float(v) for v in x])]
    cur = values[0]
    for w, b, act in zip(net.weights, net.biases, net.spec.activations):
        nxt = []
        for row in range(w.shape[0]):
            z = b[row]
            for col in range(w.shape[1]):
                z += w[row, col] * cur[col]
            nxt.append(math.tanh(z) if act == "tanh" else z)
        cur = np.asarray(nxt)
        values.append(cur)
    return values


def zero_network(widths):
    spec = nn.ArchitectureSpec(tuple(widths))
    return nn.Mlp(
        spec=spec,
        weights=tuple(np.zeros((widths[i + 1], widths[i])) for i in range(len(widths) - 1)),
        biases=tuple(np.zeros(widths[i + 1]) for i in range(len(widths) - 1)),
    )


class TestForward:
    def test_zero_network_maps_to_zero(self):
        net = zero_network([3, 4, 2])
        assert np.array_equal(nn.forward(net, np.array([0.3, -1.0, 2.0])), np.zeros(2))

    def test_1_1_1_closed_form(self):
        spec = nn.ArchitectureSpec((1, 1, 1))
        w1, w2 = 1.7, -0.9
        net = nn.Mlp(
            spec=spec,
            weights=(np.array([[w1]]), np.array([[w2]])),
            biases=(np.zeros(1), np.zeros(1)),
        )
        for x in (-0.5, 0.0, 0.8):
            expected = w2 * math.tanh(w1 * x)
            assert nn.forward(net, np.array([x]))[0] == pytest.approx(expected, abs=1e-15)
        assert nn.forward(net, np.array([0.0]))[0] == 0.0

    def test_matches_reference_oracle(self):
        net = nn.Mlp.initialize(nn.ArchitectureSpec.from_string("1-3-1"), seed=11)
        x = np.array([0.3])
        np.testing.assert_allclose(nn.forward(net, x), reference_forward(net, x), rtol=1e-14)

    def test_batch_matches_single(self):
        net = nn.Mlp.initialize(nn.ArchitectureSpec.from_string("2-5-5-5-5-2"), seed=3)
        xs = np.random.default_rng(0).normal(size=(7, 2))
        batch = nn.forward(net, xs)
        for i in range(7):
            # batch and single-row BLAS paths may differ in the last ulp
            np.testing.assert_allclose(batch[i], nn.forward(net, xs[i]), rtol=1e-14, atol=1e-16)

    def test_input_shape_error(self):
        net = zero_network([2, 2])
        with pytest.raises(ShapeError):
            nn.forward(net, np.zeros(3))

    def test_tanh_hidden_activations_bounded(self):
        net = nn.Mlp.initialize(nn.ArchitectureSpec.from_string("1-8-8-8-1"), seed=5)
        xs = np.linspace(-3, 3, 50)[:, None]
        acts = nn.layer_activations(net, xs)
        for hidden in acts[1:-1]:
            assert np.all(np.abs(hidden) < 1.0)


class TestTaps:
    def test_output_taps_equal_forward(self):
        net = nn.Mlp.initialize(nn.ArchitectureSpec.from_string("2-5-5-5-5-2"), seed=9)
        taps = nn.TapSelection.outputs(net.spec)
        xs = np.random.default_rng(1).normal(size=(5, 2))
        np.testing.assert_array_equal(nn.forward_with_taps(net, taps, xs), nn.forward(net, xs))

    def test_hidden_tap_at_origin_is_zero(self):
        net = zero_network([1, 1, 1])
        taps = nn.TapSelection(((1, 0),))
        assert nn.forward_with_taps(net, taps, np.array([0.0]))[0] == 0.0

    def test_last_hidden_taps_match_truncated_oracle(self):
        net = nn.Mlp.initialize(nn.ArchitectureSpec.from_string("1-8-8-8-1"), seed=21)
        taps = nn.TapSelection.last_hidden(net.spec)
        x = np.array([0.4])
        got = nn.forward_with_taps(net, taps, x)
        expected = reference_layer_values(net, x)[3]
        np.testing.assert_allclose(got, expected, rtol=1e-14)

    def test_input_layer_tap_returns_input(self):
        net = zero_network([2, 3, 1])
        taps = nn.TapSelection(((0, 1), (0, 0)))
        np.testing.assert_array_equal(
            nn.forward_with_taps(net, taps, np.array([5.0, -2.0])), np.array([-2.0, 5.0])
        )

    def test_invalid_tap_rejected(self):
        net = zero_network([1, 2, 1])
        with pytest.raises(TapSelectionError):
            nn.forward_with_taps(net, nn.TapSelection(((1, 5),)), np.array([0.0]))
        with pytest.raises(TapSelectionError):
            nn.forward_with_taps(net, nn.TapSelection(((7, 0),)), np.array([0.0]))

    def test_whitney_flag(self):
        spec = nn.ArchitectureSpec.from_string("1-8-8-8-1")
        assert nn.TapSelection.last_hidden(spec).whitney_ok(spec, intrinsic_dim=1)
        # single tap is below 2d+1
        assert not nn.TapSelection(((3, 0),)).whitney_ok(spec, intrinsic_dim=1)
        # narrow upstream layer blocks later taps
        narrow = nn.ArchitectureSpec.from_string("1-1-8-1")
        assert not nn.TapSelection.layer(narrow, 2).whitney_ok(narrow, intrinsic_dim=1)
        with pytest.warns(UserWarning):
            nn.check_whitney(spec, nn.TapSelection(((3, 0),)), 1)


class TestJacobian:
    def test_zero_network_zero_jacobian(self):
        net = zero_network([2, 3, 2])
        taps = nn.TapSelection.outputs(net.spec)
        assert np.array_equal(nn.jacobian_to_taps(net, taps, np.ones(2)), np.zeros((2, 2)))

    def test_linear_single_layer_returns_weights(self):
        w = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        spec = nn.ArchitectureSpec((2, 3), activations=("identity",))
        net = nn.Mlp(spec=spec, weights=(w,), biases=(np.zeros(3),))
        taps = nn.TapSelection(((1, 2), (1, 0)))
        got = nn.jacobian_to_taps(net, taps, np.array([0.1, 0.2]))
        np.testing.assert_array_equal(got, w[[2, 0]])

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_central_differences(self, seed):
        rng = np.random.default_rng(seed)
        net = nn.Mlp.initialize(nn.ArchitectureSpec.from_string("2-5-5-5-5-2"), seed=seed)
        taps = nn.TapSelection.last_hidden(net.spec)
        x = rng.uniform(-1, 1, size=2)
        jac = nn.jacobian_to_taps(net, taps, x)
        step = 1e-5
        fd = np.empty_like(jac)
        for col in range(2):
            e = np.zeros(2)
            e[col] = step
            fd[:, col] = (
                nn.forward_with_taps(net, taps, x + e) - nn.forward_with_taps(net, taps, x - e)
            ) / (2 * step)
        rel = np.abs(jac - fd) / max(np.abs(jac).max(), 1e-12)
        assert rel.max() < 1e-5

    def test_batch_matches_single(self):
        net = nn.Mlp.initialize(nn.ArchitectureSpec.from_string("1-3-1"), seed=2)
        taps = nn.TapSelection(((1, 1), (2, 0)))
        xs = np.linspace(-1, 1, 6)[:, None]
        batch = nn.jacobian_to_taps_batch(net, taps, xs)
        for i in range(6):
            np.testing.assert_allclose(
                batch[i], nn.jacobian_to_taps(net, taps, xs[i]), rtol=1e-13, atol=1e-16
            )


class TestTraining:
    def test_constant_zero_target_reaches_tiny_mse(self):
        net = nn.Mlp.initialize(nn.ArchitectureSpec.from_string("1-3-1"), seed=0)
        X = np.linspace(-1, 1, 64)[:, None]
        Y = np.zeros((64, 1))
        cfg = nn.TrainingConfig(epochs=2000, learning_rate=0.01, seed=0)
        _, mse = nn.train(net, (X, Y), cfg)
        assert mse < 1e-6

    def test_shifted_parabola_below_1e3(self):
        net = nn.Mlp.initialize(nn.ArchitectureSpec.from_string("1-3-1"), seed=1)
        X = np.linspace(0, 1, 900)[:, None]
        Y = -((X - 0.25) ** 2) - 1.0
        cfg = nn.TrainingConfig(epochs=8000, learning_rate=0.01, seed=1)
        _, mse = nn.train(net, (X, Y), cfg)
        assert mse < 1e-3

    def test_training_is_deterministic(self):
        net = nn.Mlp.initialize(nn.ArchitectureSpec.from_string("1-3-1"), seed=4)
        rng = np.random.default_rng(0)
        X = rng.uniform(-1, 1, size=(200, 1))
        Y = -(X**2)
        cfg = nn.TrainingConfig(epochs=50, learning_rate=0.01, batch_size=64, seed=12)
        a, _ = nn.train(net, (X, Y), cfg)
        b, _ = nn.train(net, (X, Y), cfg)
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)
        for ba, bb in zip(a.biases, b.biases):
            assert np.array_equal(ba, bb)

    def test_divergence_names_epoch(self):
        net = nn.Mlp.initialize(nn.ArchitectureSpec.from_string("1-3-1"), seed=0)
        X = np.linspace(0, 1, 32)[:, None]
        Y = 1e3 * X
        cfg = nn.TrainingConfig(optimizer="sgd", epochs=200, learning_rate=1e9, seed=0)
        with pytest.raises(TrainingError, match="epoch"):
            nn.train(net, (X, Y), cfg)

    def test_pair_list_input(self):
        net = nn.Mlp.initialize(nn.ArchitectureSpec.from_string("1-3-1"), seed=0)
        pairs = [(np.array([x]), np.array([x * 2])) for x in np.linspace(0, 1, 16)]
        cfg = nn.TrainingConfig(epochs=5, learning_rate=0.01, seed=0)
        trained, mse = nn.train(net, pairs, cfg)
        assert np.isfinite(mse)

    def test_empty_data_rejected(self):
        net = nn.Mlp.initialize(nn.ArchitectureSpec.from_string("1-3-1"), seed=0)
        with pytest.raises(ShapeError):
            nn.train(net, [], nn.TrainingConfig(epochs=1, seed=0))

    def test_sgd_runs(self):
        net = nn.Mlp.initialize(nn.ArchitectureSpec.from_string("1-3-1"), seed=0)
        X = np.linspace(0, 1, 64)[:, None]
        cfg = nn.TrainingConfig(optimizer="sgd", epochs=200, learning_rate=0.05, seed=0)
        _, mse = nn.train(net, (X, 0.5 * X), cfg)
        assert mse < 0.05

    def test_curve_recording(self):
        net = nn.Mlp.initialize(nn.ArchitectureSpec.from_string("1-3-1"), seed=0)
        X = np.linspace(0, 1, 32)[:, None]
        curve = []
        nn.train(net, (X, X), nn.TrainingConfig(epochs=17, learning_rate=0.01, seed=0), curve=curve)
        assert len(curve) == 17


class TestSerialization:
    def test_json_round_trip_exact(self, tmp_path):
        net = nn.Mlp.initialize(nn.ArchitectureSpec.from_string("1-8-8-8-1"), seed=77)
        path = tmp_path / "net.json"
        nn.save_network(path, net)
        loaded = nn.load_network(path)
        assert loaded.spec == net.spec
        assert loaded.seed == net.seed
        for wa, wb in zip(net.weights, loaded.weights):
            assert np.array_equal(wa, wb)
        for ba, bb in zip(net.biases, loaded.biases):
            assert np.array_equal(ba, bb)

    def test_json_document_fields(self, tmp_path):
        net = nn.Mlp.initialize(nn.ArchitectureSpec.from_string("1-3-1"), seed=1)
        path = tmp_path / "net.json"
        nn.save_network(path, net)
        doc = json.loads(path.read_text())
        assert doc["layer_widths"] == [1, 3, 1]
        assert doc["activations"] == ["tanh", "identity"]
        assert doc["seed"] == 1


class TestArchitectureSpec:
    def test_rejects_single_layer(self):
        with pytest.raises(ShapeError):
            nn.ArchitectureSpec((3,))

    def test_rejects_zero_width(self):
        with pytest.raises(ShapeError):
            nn.ArchitectureSpec((1, 0, 1))

    def test_default_activations(self):
        spec = nn.ArchitectureSpec.from_string("2-5-5-2")
        assert spec.activations == ("tanh", "tanh", "identity")

    def test_immutability(self):
        net = nn.Mlp.initialize(nn.ArchitectureSpec.from_string("1-3-1"), seed=0)
        with pytest.raises(ValueError):
            net.weights[0][0, 0] = 1.0
