import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdcheck import numeric_grad, rel_error
from uavmtl import nn
from uavmtl.errors import InferBeforeTrain, ShapeMismatch, StaleCache


def scalar_cell(**overrides):
    p = nn.LstmParams.zeros(1, 1)
    for k, v in overrides.items():
        getattr(p, k)[...] = v
    return p


def test_zero_cell_gives_half_gates_and_zero_state():
    p = nn.LstmParams.zeros(3, 2)
    s = nn.lstm_cell_forward(p, np.ones(3), np.zeros(2), np.zeros(2))
    np.testing.assert_array_equal(s.f_t, 0.5)
    np.testing.assert_array_equal(s.i_t, 0.5)
    np.testing.assert_array_equal(s.o_t, 0.5)
    assert np.all(s.c_tilde_t == 0) and np.all(s.C_t == 0) and np.all(s.h_t == 0)


def test_scalar_cell_hand_example():
    p = scalar_cell(b_i=20.0, b_f=-20.0, W_c=1.0)
    s = nn.lstm_cell_forward(p, np.array([0.5]), np.zeros(1), np.array([7.0]))
    # hand evaluation: f ~ 0, i ~ 1, C ~ tanh(0.5), o = 0.5
    assert s.C_t[0] == pytest.approx(math.tanh(0.5), abs=1e-4)
    assert s.h_t[0] == pytest.approx(0.5 * math.tanh(math.tanh(0.5)), abs=1e-8)


def test_saturated_forget_gate_carries_memory():
    p = scalar_cell(b_f=20.0, b_i=-20.0, W_c=1.0)
    s = nn.lstm_cell_forward(p, np.array([0.5]), np.zeros(1), np.array([7.0]))
    assert s.C_t[0] == pytest.approx(7.0, abs=1e-6)


@settings(max_examples=30)
@given(seed=st.integers(0, 2**31), scale=st.floats(0.1, 20.0))
def test_gate_ranges(seed, scale):
    rng = np.random.default_rng(seed)
    p = nn.init_lstm(3, 4, rng)
    s = nn.lstm_cell_forward(p, rng.normal(size=3) * scale, rng.normal(size=4), rng.normal(size=4))
    for g in (s.f_t, s.i_t, s.o_t):
        assert np.all((g >= 0) & (g <= 1))
    assert np.all(np.abs(s.c_tilde_t) <= 1)


def test_cell_shape_mismatch():
    p = nn.LstmParams.zeros(3, 2)
    with pytest.raises(ShapeMismatch):
        nn.lstm_cell_forward(p, np.ones(4), np.zeros(2), np.zeros(2))


def test_layer_t1_equals_cell():
    rng = np.random.default_rng(0)
    p = nn.init_lstm(3, 4, rng)
    x = rng.normal(size=(1, 3))
    out, _ = nn.lstm_layer_forward(p, x, return_sequence=False)
    step = nn.lstm_cell_forward(p, x[0], np.zeros(4), np.zeros(4))
    np.testing.assert_allclose(out, step.h_t, rtol=1e-14, atol=1e-15)


def test_layer_matches_cell_loop():
    rng = np.random.default_rng(1)
    p = nn.init_lstm(3, 4, rng)
    seq = rng.normal(size=(5, 3))
    out, _ = nn.lstm_layer_forward(p, seq)
    h = c = np.zeros(4)
    for t in range(5):
        s = nn.lstm_cell_forward(p, seq[t], h, c)
        h, c = s.h_t, s.C_t
        np.testing.assert_allclose(out[t], h, rtol=1e-12, atol=1e-14)


def test_zero_weights_constant_input_all_zero():
    out, _ = nn.lstm_layer_forward(nn.LstmParams.zeros(2, 3), np.ones((6, 2)))
    assert np.all(out == 0)


def test_relu_post_keeps_raw_recurrence():
    rng = np.random.default_rng(2)
    p = nn.init_lstm(3, 4, rng)
    q = nn.LstmParams(**p.tensors(), output_activation="relu_post")
    seq = rng.normal(size=(2, 5, 3))
    a, _ = nn.lstm_layer_forward(p, seq)
    b, _ = nn.lstm_layer_forward(q, seq)
    np.testing.assert_array_equal(b, np.maximum(a, 0))


def test_batched_equals_per_sample():
    rng = np.random.default_rng(3)
    p = nn.init_lstm(3, 4, rng)
    seq = rng.normal(size=(3, 5, 3))
    out, _ = nn.lstm_layer_forward(p, seq)
    for b in range(3):
        single, _ = nn.lstm_layer_forward(p, seq[b])
        np.testing.assert_allclose(out[b], single, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("mode", nn.LSTM_MODES)
@pytest.mark.parametrize("return_sequence", [True, False])
def test_lstm_layer_gradients(mode, return_sequence):
    rng = np.random.default_rng(4)
    p = nn.init_lstm(3, 4, rng, output_activation=mode)
    for g in nn.GATES:
        getattr(p, f"b_{g}")[...] += rng.normal(scale=0.3, size=4)
    seq = rng.normal(size=(2, 5, 3))
    out, _ = nn.lstm_layer_forward(p, seq, return_sequence)
    w = rng.normal(size=out.shape)

    def loss():
        o, _ = nn.lstm_layer_forward(p, seq, return_sequence)
        return float(np.sum(o * w))

    _, cache = nn.lstm_layer_forward(p, seq, return_sequence)
    grads, dseq = nn.lstm_layer_backward(cache, w)
    for name, t in p.tensors().items():
        assert rel_error(grads[name], numeric_grad(loss, t)) < 1e-4, name
    assert rel_error(dseq, numeric_grad(loss, seq)) < 1e-4


def test_scalar_cell_gradient_of_squared_output():
    # L = h^2 with h = o tanh(C), C = f c_prev + i c~; derivative w.r.t. W_c by hand
    p = scalar_cell(b_i=1.0, b_f=-1.0, W_c=1.0, b_o=0.5)
    x = 0.5
    out, cache = nn.lstm_layer_forward(p, np.array([[x]]), return_sequence=False)
    grads, _ = nn.lstm_layer_backward(cache, 2 * out)
    i = 1 / (1 + math.exp(-1.0))
    o = 1 / (1 + math.exp(-0.5))
    ct = math.tanh(x)
    C = i * ct  # c_prev = 0
    h = o * math.tanh(C)
    dW_c = 2 * h * o * (1 - math.tanh(C) ** 2) * i * (1 - ct ** 2) * x
    assert grads["W_c"][0, 0] == pytest.approx(dW_c, rel=1e-12)


def test_zero_upstream_gives_zero_grads():
    rng = np.random.default_rng(5)
    p = nn.init_lstm(3, 4, rng)
    out, cache = nn.lstm_layer_forward(p, rng.normal(size=(2, 5, 3)))
    grads, dseq = nn.lstm_layer_backward(cache, np.zeros_like(out))
    assert all(np.all(g == 0) for g in grads.values()) and np.all(dseq == 0)


def test_cache_single_use():
    p = nn.LstmParams.zeros(1, 1)
    out, cache = nn.lstm_layer_forward(p, np.ones((2, 1)))
    nn.lstm_layer_backward(cache, np.ones_like(out))
    with pytest.raises(StaleCache):
        nn.lstm_layer_backward(cache, np.ones_like(out))


@pytest.mark.parametrize("act", nn.DENSE_ACTIVATIONS)
def test_dense_gradients(act):
    rng = np.random.default_rng(6)
    p = nn.init_dense(4, 3, rng, act)
    p.b[...] = rng.normal(size=3)
    x = rng.normal(size=(2, 5, 4))
    w = rng.normal(size=(2, 5, 3))

    def loss():
        return float(np.sum(nn.dense_forward(p, x)[0] * w))

    _, cache = nn.dense_forward(p, x)
    grads, dx = nn.dense_backward(cache, w)
    assert rel_error(grads["W"], numeric_grad(loss, p.W)) < 1e-4
    assert rel_error(grads["b"], numeric_grad(loss, p.b)) < 1e-4
    assert rel_error(dx, numeric_grad(loss, x)) < 1e-4


def test_time_distributed_is_per_step_dense():
    rng = np.random.default_rng(7)
    p = nn.init_dense(4, 3, rng, "relu")
    seq = rng.normal(size=(2, 6, 4))
    out, _ = nn.time_distributed_forward(p, seq)
    for t in range(6):
        np.testing.assert_array_equal(out[:, t], nn.dense_forward(p, seq[:, t])[0])


def test_batchnorm_normalises_batch():
    rng = np.random.default_rng(8)
    z = rng.normal(size=(256, 3))
    z = (z - z.mean(0)) / z.std(0)
    x = 3.0 + 2.0 * z  # per-channel mean 3, var 4
    p = nn.BatchNormParams.create(3)
    y, _ = nn.batchnorm_forward(p, x, "train")
    np.testing.assert_allclose(y.mean(0), 0.0, atol=1e-12)
    # exact variance is 4 / (4 + eps)
    np.testing.assert_allclose(y.var(0), 4.0 / (4.0 + p.epsilon), rtol=1e-12)
    tight = nn.BatchNormParams.create(3, epsilon=1e-8)
    y, _ = nn.batchnorm_forward(tight, x, "train")
    np.testing.assert_allclose(y.var(0), 1.0, atol=1e-6)


def test_batchnorm_running_stats_commit_and_infer():
    rng = np.random.default_rng(9)
    p = nn.BatchNormParams.create(2)
    with pytest.raises(InferBeforeTrain):
        nn.batchnorm_forward(p, np.ones((3, 2)), "infer")
    x = rng.normal(loc=5.0, size=(16, 2))
    _, cache = nn.batchnorm_forward(p, x, "train")
    assert np.all(p.running_mean == 0)  # forward alone does not mutate
    nn.commit_running_stats(p, cache)
    np.testing.assert_allclose(p.running_mean, 0.1 * x.mean(0))
    np.testing.assert_allclose(p.running_var, 0.9 + 0.1 * x.var(0))
    y, _ = nn.batchnorm_forward(p, x, "infer")
    np.testing.assert_allclose(y, (x - p.running_mean) / np.sqrt(p.running_var + p.epsilon))


@pytest.mark.parametrize("mode", ["train", "infer"])
def test_batchnorm_gradients(mode):
    rng = np.random.default_rng(10)
    p = nn.BatchNormParams.create(3)
    p.gamma[...] = rng.normal(size=3)
    p.beta[...] = rng.normal(size=3)
    p.running_mean[...] = rng.normal(size=3)
    p.running_var[...] = rng.uniform(0.5, 2, size=3)
    p.batches_seen = 1
    x = rng.normal(size=(5, 3))
    w = rng.normal(size=(5, 3))

    def loss():
        return float(np.sum(nn.batchnorm_forward(p, x, mode)[0] * w))

    _, cache = nn.batchnorm_forward(p, x, mode)
    grads, dx = nn.batchnorm_backward(cache, w)
    assert rel_error(grads["gamma"], numeric_grad(loss, p.gamma)) < 1e-4
    assert rel_error(grads["beta"], numeric_grad(loss, p.beta)) < 1e-4
    assert rel_error(dx, numeric_grad(loss, x)) < 1e-4


def test_batchnorm_param_invariants():
    with pytest.raises(ValueError):
        nn.BatchNormParams.create(2, epsilon=0.0)


def test_repeat_vector():
    np.testing.assert_array_equal(nn.repeat_vector(np.array([1.0, 2.0]), 3), [[1, 2], [1, 2], [1, 2]])
    rng = np.random.default_rng(11)
    h = rng.normal(size=(2, 4))
    w = rng.normal(size=(2, 3, 4))
    g = nn.repeat_vector_backward(w)
    assert rel_error(g, numeric_grad(lambda: float(np.sum(nn.repeat_vector(h, 3) * w)), h)) < 1e-4


@settings(max_examples=50)
@given(x=st.lists(st.floats(-50, 50), min_size=1, max_size=20))
def test_sigmoid_matches_logistic(x):
    x = np.array(x)
    np.testing.assert_allclose(nn.sigmoid(x), 1 / (1 + np.exp(-x)), rtol=1e-12, atol=1e-300)


def test_activation_unknown():
    with pytest.raises(ValueError):
        nn.activation_forward("gelu", np.zeros(2))
