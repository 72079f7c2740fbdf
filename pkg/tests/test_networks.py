import numpy as np
import pytest

from src.errors import DimensionError, FormatError, TapeError
from src.networks import (
    Adam,
    AdamState,
    DenseLayer,
    LstmStack,
    Mlp,
    adam_step,
    grad_check,
    load_checkpoint,
    mean_squared,
    parameter_checksum,
    read_sidecar,
    save_checkpoint,
    write_sidecar,
)


def _identity_net(n, activation="linear"):
    return Mlp([DenseLayer(np.eye(n), np.zeros(n), activation)])


def test_mlp_simple_forward_and_backward():
    net = _identity_net(3)
    y, tape = net.forward([1.0, -2.0, 3.0])
    assert np.array_equal(y, [1.0, -2.0, 3.0])
    dx, _ = net.backward(tape, np.array([0.5, 1.0, -1.0]))
    assert np.array_equal(dx, [0.5, 1.0, -1.0])

    relu = _identity_net(2, "relu")
    assert np.array_equal(relu([-1.0, 2.0]), [0.0, 2.0])


def test_mlp_input_gradient_closed_form(rng):
    W = rng.standard_normal((4, 3))
    net = Mlp([DenseLayer(W, np.zeros(3))])
    x = rng.standard_normal(4)
    y, tape = net.forward(x)
    # d/dx of ||y||^2 / 2 with y = x W
    dx, _ = net.backward(tape, y)
    assert np.allclose(dx, W @ W.T @ x)


def test_mlp_matches_layerwise_recomputation(rng):
    net = Mlp.build([5, 7, 4, 2], rng)
    x = rng.standard_normal((3, 5))
    h = x
    for layer in net.layers:
        h = h @ layer.W + layer.b
        if layer.activation == "relu":
            h = np.maximum(h, 0.0)
    assert np.allclose(net(x), h)
    assert net.widths == [5, 7, 4, 2]
    assert net.parameter_count() == 5 * 7 + 7 + 7 * 4 + 4 + 4 * 2 + 2


def test_mlp_gradients_match_finite_differences(rng):
    net = Mlp.build([4, 6, 3], rng)
    x = rng.standard_normal((5, 4))
    target = rng.standard_normal((5, 3))

    def f():
        y, tape = net.forward(x)
        loss, dy = mean_squared(y, target)
        return loss, net.backward(tape, dy)[1]

    assert grad_check(f, net.parameters()) < 1e-5


def test_mlp_errors(rng):
    net = Mlp.build([3, 2], rng)
    other = Mlp.build([3, 2], rng)
    with pytest.raises(DimensionError):
        net.forward(np.ones(4))
    _, tape = other.forward(np.ones(3))
    with pytest.raises(TapeError):
        net.backward(tape, np.ones(2))
    with pytest.raises(DimensionError):
        Mlp([DenseLayer(np.ones((3, 2)), np.zeros(2)), DenseLayer(np.ones((3, 1)), np.zeros(1))])


def _zero_lstm(input_size=3, hidden=4, layers=2):
    lstm = LstmStack(input_size, hidden, layers)
    for value in lstm.parameters().values():
        value[...] = 0.0
    return lstm


def test_lstm_zero_weights_give_zero_state(rng):
    lstm = _zero_lstm()
    h, state, _ = lstm.step(rng.standard_normal(3))
    assert np.array_equal(h, np.zeros(4))
    for c, h_layer in state:
        assert np.array_equal(c, np.zeros((1, 4)))
        assert np.array_equal(h_layer, np.zeros((1, 4)))


def test_lstm_saturated_forget_gate_keeps_cell():
    lstm = _zero_lstm(input_size=2, hidden=3, layers=1)
    lstm.weights[0]["b"][3:6] = 50.0
    c0 = np.array([[0.3, -1.2, 2.0]])
    state = [(c0, np.zeros((1, 3)))]
    _, new_state, _ = lstm.step(np.zeros(2), state)
    assert np.allclose(new_state[0][0], c0, atol=1e-8)


def test_lstm_bptt_matches_finite_differences(rng):
    lstm = LstmStack(3, 4, 2, rng)
    xs = rng.standard_normal((5, 2, 3))
    weights = rng.standard_normal((5, 2, 4))

    def f():
        hs, _, tape = lstm.run(xs)
        return float(np.sum(hs * weights)), lstm.backward(tape, weights)[1]

    assert grad_check(f, lstm.parameters()) < 1e-4


def test_lstm_input_gradient(rng):
    lstm = LstmStack(2, 3, 2, rng)
    xs = rng.standard_normal((4, 1, 2))
    weights = rng.standard_normal((4, 1, 3))
    hs, _, tape = lstm.run(xs)
    dxs, _ = lstm.backward(tape, weights)

    h = 1e-6
    plus, minus = xs.copy(), xs.copy()
    plus[1, 0, 1] += h
    minus[1, 0, 1] -= h
    numeric = (np.sum(lstm.run(plus)[0] * weights) - np.sum(lstm.run(minus)[0] * weights)) / (2 * h)
    assert np.isclose(dxs[1, 0, 1], numeric, rtol=1e-4, atol=1e-7)


def test_lstm_size_is_independent_of_batch():
    lstm = LstmStack(6, 8, 3)
    assert lstm.parameter_count() == 4 * 8 * (6 + 8 + 1) + 2 * 4 * 8 * (8 + 8 + 1)


def test_adam_zero_gradient_leaves_parameters():
    params = {"w": np.array([1.0, -2.0])}
    adam_step(AdamState(learning_rate=0.1), params, {"w": np.zeros(2)})
    assert np.array_equal(params["w"], [1.0, -2.0])


def test_adam_first_step_moves_by_learning_rate():
    params = {"w": np.array([1.0, -2.0, 0.5])}
    adam_step(AdamState(learning_rate=0.01), params, {"w": np.array([3.0, -0.2, 1e-3])})
    assert np.allclose(params["w"], [1.0 - 0.01, -2.0 + 0.01, 0.5 - 0.01], atol=1e-6)


def test_adam_converges_on_quadratic():
    params = {"w": np.ones(3)}
    optimizer = Adam(0.05)
    for _ in range(200):
        optimizer.step(params, {"w": 2.0 * params["w"]})
    assert np.linalg.norm(params["w"]) < 1e-2


def test_adam_shape_mismatch():
    with pytest.raises(DimensionError):
        adam_step(AdamState(), {"w": np.ones(2)}, {"w": np.ones(3)})
    with pytest.raises(DimensionError):
        adam_step(AdamState(), {"w": np.ones(2)}, {})


def test_grad_check_detects_errors():
    params = {"w": np.array([0.3, -1.5, 2.0])}

    def quadratic():
        w = params["w"]
        return float(w @ w), {"w": 2.0 * w}

    def corrupted():
        loss, grads = quadratic()
        return loss, {"w": 1.01 * grads["w"]}

    assert grad_check(quadratic, params) < 1e-9
    assert grad_check(corrupted, params) > 1e-3
    assert np.array_equal(params["w"], [0.3, -1.5, 2.0])


def test_checkpoint_round_trip(tmp_path, rng):
    tensors = {"enc.0.W": rng.standard_normal((3, 2)), "enc.0.b": rng.standard_normal(2), "scalar": np.array(1.5)}
    path = save_checkpoint(tmp_path / "m.nnck", tensors)
    loaded = load_checkpoint(path)
    assert list(loaded) == list(tensors)
    for name, value in tensors.items():
        assert np.array_equal(loaded[name], value)
    assert parameter_checksum(loaded) == parameter_checksum(tensors)

    write_sidecar(path, {"latent_dim": 2})
    assert read_sidecar(path) == {"latent_dim": 2}
    assert (tmp_path / "m.json").exists()


def test_checkpoint_format_errors(tmp_path):
    path = save_checkpoint(tmp_path / "m.nnck", {"w": np.ones((2, 2))})
    raw = path.read_bytes()

    (tmp_path / "magic.nnck").write_bytes(b"ABCD" + raw[4:])
    with pytest.raises(FormatError) as excinfo:
        load_checkpoint(tmp_path / "magic.nnck")
    assert excinfo.value.offset == 0

    (tmp_path / "short.nnck").write_bytes(raw[:-8])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "short.nnck")


def test_checksum_changes_with_parameters():
    params = {"w": np.zeros(3)}
    before = parameter_checksum(params)
    params["w"][1] = 1e-300
    assert parameter_checksum(params) != before
