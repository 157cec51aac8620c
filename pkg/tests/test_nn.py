import math

import numpy as np
import pytest

from lobjump.nn import (
    LSTM, Adam, Conv1D, Conv2D, Dense, Dropout, FeatureAttention, MaxPool1D, Network, Softmax, bce_loss,
    categorical_ce,
)
from lobjump.nn.gradcheck import check_layer, numeric_grad, rel_error
from lobjump.nn.layers import (
    KernelTooLarge, NonFinite, ShapeMismatch, dropout, feature_attention, leaky_relu, relu, sigmoid, softmax,
)
from lobjump.nn.optim import adam_step
from lobjump.nn.network import CheckpointError, load_checkpoint, read_checkpoint, save_checkpoint


def randomise(layer, seed, scale=0.5):
    rng = np.random.default_rng(seed)
    layer.init(rng)
    for k, p in layer.params.items():
        layer.params[k] = p + scale * rng.standard_normal(p.shape)
    return layer


# -- forward examples ----------------------------------------------------------------

def test_dense_identity():
    d = Dense(3, 3)
    d.params = {"W": np.eye(3), "b": np.zeros(3)}
    x = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(d.forward(x), x)


def test_activation_values():
    assert sigmoid(0.0) == 0.5
    assert leaky_relu(np.array(-1.0), 0.01) == pytest.approx(-0.01)
    assert relu(np.array([-2.0, 3.0])).tolist() == [0.0, 3.0]
    assert softmax(np.array([0.0, 0.0])).tolist() == [0.5, 0.5]
    assert softmax(np.array([1000.0, 1000.0])).tolist() == [0.5, 0.5]
    z = np.random.default_rng(0).normal(0, 30, (50, 7))
    s = softmax(z)
    assert np.all(np.abs(s.sum(1) - 1) < 1e-12) and (s >= 0).all() and (s <= 1).all()
    assert np.all(np.isfinite(sigmoid(np.array([-1e4, 1e4]))))


def test_conv1d_examples():
    c = Conv1D(1, 2, 2)
    c.params = {"W": np.eye(2)[None], "b": np.zeros(2)}
    x = np.random.default_rng(1).normal(size=(3, 6, 2))
    assert np.allclose(c.forward(x), x)
    c = Conv1D(2, 1, 1)
    c.params = {"W": np.ones((2, 1, 1)), "b": np.zeros(1)}
    assert c.forward(np.array([1.0, 2, 3, 4]).reshape(1, 4, 1)).ravel().tolist() == [3, 5, 7]
    with pytest.raises(KernelTooLarge):
        Conv1D(5, 1, 1).output_shape((4, 1))


def test_conv2d_matches_direct_correlation():
    c = randomise(Conv2D(2, 3, 2, 4), 2)
    x = np.random.default_rng(3).normal(size=(2, 5, 6, 2))
    y = c.forward(x)
    assert y.shape == (2, 4, 4, 4)
    W, b = c.params["W"], c.params["b"]
    ref = np.zeros_like(y)
    for n in range(2):
        for i in range(4):
            for j in range(4):
                ref[n, i, j] = np.einsum("hwc,hwco->o", x[n, i : i + 2, j : j + 3], W) + b
    assert np.allclose(y, ref)


def test_maxpool_examples():
    p = MaxPool1D(2)
    assert p.forward(np.array([1.0, 3, 2, 5]).reshape(1, 4, 1)).ravel().tolist() == [3, 5]
    assert p.forward(np.full((1, 6, 2), 4.0)).tolist() == np.full((1, 3, 2), 4.0).tolist()
    p.forward(np.array([2.0, 2, 1, 0, 9]).reshape(1, 5, 1))
    dx = p.backward(np.ones((1, 2, 1)))
    assert dx.ravel().tolist() == [1, 0, 1, 0, 0]


def test_lstm_zero_weights_give_zero_state():
    layer = LSTM(3, 4)
    x = np.random.default_rng(4).normal(size=(2, 6, 3))
    assert not layer.forward(x).any()


def test_lstm_single_step_hand_oracle():
    layer = randomise(LSTM(3, 2), 5)
    x = np.random.default_rng(6).normal(size=(2, 1, 3))
    H = 2
    z = x[:, 0] @ layer.params["Wx"] + layer.params["b"]
    sig = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
    i, f, o, g = sig(z[:, :H]), sig(z[:, H : 2 * H]), sig(z[:, 2 * H : 3 * H]), np.tanh(z[:, 3 * H :])
    c = i * g
    assert np.allclose(layer.forward(x), o * np.tanh(c))
    assert f.shape == c.shape


def test_lstm_sequence_mode_shape():
    layer = LSTM(3, 4, return_sequences=True)
    assert layer.output_shape((7, 3)) == (7, 4)
    with pytest.raises(ShapeMismatch):
        layer.output_shape((7, 2))


def test_attention_examples():
    X = np.random.default_rng(7).normal(size=(6, 1))
    out, alpha = feature_attention(X, np.ones(6), np.zeros(1))
    assert alpha.tolist() == [1.0] and np.array_equal(out, X)
    out, alpha = feature_attention(np.ones((6, 4)), np.zeros(6), np.full(4, 0.3))
    assert np.allclose(alpha, 0.25)
    a = randomise(FeatureAttention(6, 5), 8)
    _, alpha = a.weights(np.random.default_rng(9).normal(size=(3, 6, 5)))
    assert np.all(np.abs(alpha.sum(1) - 1) < 1e-9)
    with pytest.raises(ShapeMismatch):
        a.forward(np.zeros((1, 6, 4)))


def test_attention_permutation_equivariance():
    a = randomise(FeatureAttention(6, 5), 10)
    x = np.random.default_rng(11).normal(size=(2, 6, 5))
    _, alpha = a.weights(x)
    perm = [1, 0, 2, 4, 3]
    b = FeatureAttention(6, 5)
    b.params = {"w": a.params["w"].copy(), "b": a.params["b"][perm]}
    _, alpha_p = b.weights(x[:, :, perm])
    assert np.allclose(alpha_p, alpha[:, perm])


# -- dropout --------------------------------------------------------------------------

def test_dropout_modes():
    x = np.random.default_rng(12).normal(size=(4, 5))
    rng = np.random.default_rng(0)
    assert np.array_equal(dropout(x, 0.0, True, rng), x)
    assert np.array_equal(dropout(x, 0.7, False, rng), x)
    with pytest.raises(ValueError):
        Dropout(1.0)


def test_dropout_statistics():
    x = np.full(100_000, 2.0)
    y = dropout(x, 0.5, True, np.random.default_rng(13))
    assert abs((y != 0).mean() - 0.5) < 0.01
    assert abs(y.mean() / 2.0 - 1) < 0.02


# -- losses --------------------------------------------------------------------------------

def test_bce_examples():
    assert bce_loss([1.0], [1.0])[0] <= 1e-11
    assert bce_loss([1.0], [0.5])[0] == pytest.approx(math.log(2))
    assert bce_loss([0.0, 1.0], [0.2, 0.9])[0] >= 0


def test_bce_gradient():
    y = np.array([0.0, 1.0, 1.0, 0.0])
    p = np.array([0.2, 0.7, 0.4, 0.9])
    w = np.array([1.0, 2.0, 0.5, 1.0])
    _, g = bce_loss(y, p, w)
    num = numeric_grad(lambda: bce_loss(y, p, w)[0], p)
    assert rel_error(g, num) < 1e-6


def test_categorical_gradient():
    y = np.array([0, 2, 1])
    q = softmax(np.random.default_rng(14).normal(size=(3, 3)))
    _, g = categorical_ce(y, q)
    assert rel_error(g, numeric_grad(lambda: categorical_ce(y, q)[0], q)) < 1e-6
    assert categorical_ce([1], np.array([[0.25, 0.5, 0.25]]))[0] == pytest.approx(math.log(2))


# -- layer gradient checks -------------------------------------------------------------------

LAYERS = {
    "dense": (lambda: Dense(5, 4), (3, 5), 1e-6),
    "dense_leaky": (lambda: Dense(5, 4, "leaky_relu"), (3, 5), 1e-5),
    "dense_sigmoid": (lambda: Dense(5, 1, "sigmoid"), (3, 5), 1e-6),
    "conv1d": (lambda: Conv1D(3, 4, 2), (2, 7, 4), 1e-5),
    "conv1d_leaky": (lambda: Conv1D(3, 4, 2, "leaky_relu"), (2, 7, 4), 1e-5),
    "conv2d": (lambda: Conv2D(2, 3, 1, 3), (2, 5, 4, 1), 1e-5),
    "maxpool": (lambda: MaxPool1D(2), (2, 7, 3), 1e-5),
    "softmax": (lambda: Softmax(), (3, 4), 1e-5),
    "lstm_bptt": (lambda: LSTM(4, 3), (2, 5, 4), 1e-5),
    "lstm_sequences": (lambda: LSTM(4, 3, return_sequences=True), (2, 5, 4), 1e-5),
    "lstm_relu_hidden": (lambda: LSTM(4, 3, hidden_activation="relu"), (2, 5, 4), 1e-5),
    "attention": (lambda: FeatureAttention(6, 5), (3, 6, 5), 1e-5),
}


@pytest.mark.parametrize("name", sorted(LAYERS))
def test_layer_gradients(name):
    make, shape, tol = LAYERS[name]
    layer = randomise(make(), 15)
    x = np.random.default_rng(16).normal(size=shape)
    errors = check_layer(layer, x, seed=17)
    assert max(errors.values()) < tol, errors


def test_lstm_dropout_gradients():
    layer = randomise(LSTM(4, 3, dropout=0.5, recurrent_dropout=0.5), 18)
    x = np.random.default_rng(19).normal(size=(2, 5, 4))
    errors = check_layer(layer, x, seed=20, training=True)
    assert max(errors.values()) < 1e-5, errors


def test_dropout_layer_gradient():
    x = np.random.default_rng(21).normal(size=(3, 4))
    errors = check_layer(Dropout(0.5), x, seed=22, training=True)
    assert errors["x"] < 1e-6


# -- optimiser ------------------------------------------------------------------------------

def test_adam_zero_gradient_keeps_params():
    p = {"w": np.array([1.0, -2.0])}
    adam_step(p, {"w": np.zeros(2)}, Adam())
    assert p["w"].tolist() == [1.0, -2.0]


def test_adam_first_step_is_lr():
    p = {"w": np.array([1.0, 1.0])}
    adam_step(p, {"w": np.array([0.3, -5.0])}, Adam(lr=1e-3))
    assert np.allclose(p["w"], [1 - 1e-3, 1 + 1e-3], atol=1e-9)


def test_adam_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        Adam().step({"w": np.zeros(2)}, {"w": np.zeros(3)})


def test_adam_quadratic_strictly_decreases_to_optimum():
    # 0.5 (x - 0.5)^2 has its minimum 0 at x = 0.5
    p = {"x": np.zeros(1)}
    state = Adam(lr=0.006)
    history = []
    for _ in range(200):
        history.append(0.5 * (p["x"][0] - 0.5) ** 2)
        state.step(p, {"x": p["x"] - 0.5})
    history.append(0.5 * (p["x"][0] - 0.5) ** 2)
    assert all(b < a for a, b in zip(history, history[1:]))
    assert history[-1] < 1e-6
    assert state.step_count == 200


def test_adam_anisotropic_quadratic_converges():
    A = np.diag([1.0, 4.0, 0.5])
    opt_x = np.array([0.3, -0.2, 0.1])
    p = {"x": np.zeros(3)}
    state = Adam(lr=0.01)
    for _ in range(200):
        state.step(p, {"x": A @ (p["x"] - opt_x)})
    gap = p["x"] - opt_x
    assert 0.5 * gap @ A @ gap < 1e-6


# -- networks and checkpoints --------------------------------------------------------------

def small_net(seed=0):
    return Network([Conv1D(2, 3, 4, "leaky_relu"), MaxPool1D(2), LSTM(4, 3, dropout=0.5),
                    Dense(3, 1, "sigmoid")], (8, 3), seed=seed)


def test_forward_deterministic_and_eval_stable():
    x = np.random.default_rng(23).normal(size=(4, 8, 3))
    a, b = small_net(1), small_net(1)
    assert np.array_equal(a.forward(x), b.forward(x))
    assert np.array_equal(a.forward(x), a.forward(x))
    a.reseed(5)
    b.reseed(5)
    assert np.array_equal(a.forward(x, True), b.forward(x, True))


def test_dropout_expectation_matches_eval():
    net = Network([Dense(6, 6), Dropout(0.5)], (6,), seed=2)
    x = np.random.default_rng(24).normal(size=(1, 6))
    mean = np.mean([net.forward(x, True) for _ in range(20_000)], axis=0)
    assert np.allclose(mean, net.forward(x), atol=0.05 * np.abs(net.forward(x)).max())


def test_network_rejects_bad_input_and_nonfinite():
    net = small_net()
    with pytest.raises(ShapeMismatch):
        net.forward(np.zeros((1, 8, 2)))
    x = np.zeros((1, 8, 3))
    x[0, 0, 0] = np.inf
    with pytest.raises(NonFinite):
        net.forward(x)


def test_checkpoint_roundtrip(tmp_path):
    net = small_net(3)
    save_checkpoint(tmp_path / "m.ckpt", net)
    raw = (tmp_path / "m.ckpt").read_bytes()
    assert raw[:4] == b"LJNN" and raw[8:40] == net.architecture_hash()
    other = small_net(4)
    load_checkpoint(tmp_path / "m.ckpt", other)
    x = np.random.default_rng(25).normal(size=(2, 8, 3))
    assert np.array_equal(other.forward(x), net.forward(x))
    _, weights = read_checkpoint(tmp_path / "m.ckpt")
    assert set(weights) == set(net.named_params())


def test_checkpoint_architecture_guard(tmp_path):
    save_checkpoint(tmp_path / "m.ckpt", small_net())
    other = Network([Dense(3, 1)], (3,))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "m.ckpt", other)
    (tmp_path / "bad.ckpt").write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(CheckpointError):
        read_checkpoint(tmp_path / "bad.ckpt")
