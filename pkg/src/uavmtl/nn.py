"""Differentiable building blocks in plain numpy.

Every layer exposes ``*_forward`` returning ``(output, cache)`` and a matching
``*_backward(cache, d_output)`` returning ``(param_grads, d_input)``.  Inputs
may carry any number of leading batch dimensions unless noted; the LSTM takes
``[T, F]`` or ``[B, T, F]``.

The LSTM cell is the standard one:

    f_t = sigmoid(W_f x_t + U_f h_{t-1} + b_f)
    i_t = sigmoid(W_i x_t + U_i h_{t-1} + b_i)
    c~_t = tanh(W_c x_t + U_c h_{t-1} + b_c)
    C_t = f_t * C_{t-1} + i_t * c~_t
    o_t = sigmoid(W_o x_t + U_o h_{t-1} + b_o)
    h_t = o_t * tanh(C_t)

In ``relu_post`` mode the layer output is ``relu(h_t)``; the recurrence still
carries the raw ``h_t`` so the cell equations are untouched.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InferBeforeTrain, ShapeMismatch, StaleCache

GATES = ("f", "i", "c", "o")
LSTM_MODES = ("tanh_gated", "relu_post")
DENSE_ACTIVATIONS = ("none", "linear", "relu", "sigmoid")


# ---------------------------------------------------------------------------
# activations


def sigmoid(x):
    # exp of a non-positive argument only: no overflow, full relative precision
    x = np.asarray(x)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid_backward(y, dy):
    return dy * y * (1.0 - y)


def tanh_backward(y, dy):
    return dy * (1.0 - y * y)


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(x, dy):
    return dy * (x > 0)


def linear(x):
    return x


def linear_backward(x, dy):
    return dy


def activation_forward(name: str, z):
    if name in ("none", "linear"):
        return z
    if name == "relu":
        return relu(z)
    if name == "sigmoid":
        return sigmoid(z)
    if name == "tanh":
        return np.tanh(z)
    raise ValueError(f"unknown activation {name!r}")


def activation_backward(name: str, z, y, dy):
    if name in ("none", "linear"):
        return dy
    if name == "relu":
        return relu_backward(z, dy)
    if name == "sigmoid":
        return sigmoid_backward(y, dy)
    if name == "tanh":
        return tanh_backward(y, dy)
    raise ValueError(f"unknown activation {name!r}")


def glorot_uniform(rng, shape, dtype=np.float64):
    fan_out, fan_in = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


# ---------------------------------------------------------------------------
# LSTM


@dataclass
class LstmParams:
    W_f: np.ndarray
    W_i: np.ndarray
    W_c: np.ndarray
    W_o: np.ndarray
    U_f: np.ndarray
    U_i: np.ndarray
    U_c: np.ndarray
    U_o: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray
    output_activation: str = "tanh_gated"

    TENSORS = ("W_f", "W_i", "W_c", "W_o", "U_f", "U_i", "U_c", "U_o", "b_f", "b_i", "b_c", "b_o")

    def __post_init__(self):
        if self.output_activation not in LSTM_MODES:
            raise ValueError(f"output_activation must be one of {LSTM_MODES}")
        h, f = self.W_f.shape
        for g in GATES:
            if getattr(self, f"W_{g}").shape != (h, f):
                raise ShapeMismatch(f"W_{g} must be [{h}, {f}]")
            if getattr(self, f"U_{g}").shape != (h, h):
                raise ShapeMismatch(f"U_{g} must be [{h}, {h}]")
            if getattr(self, f"b_{g}").shape != (h,):
                raise ShapeMismatch(f"b_{g} must be [{h}]")

    @property
    def hidden_size(self) -> int:
        return self.W_f.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_f.shape[1]

    def tensors(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.TENSORS}

    def stacked(self):
        W = np.concatenate([getattr(self, f"W_{g}") for g in GATES])
        U = np.concatenate([getattr(self, f"U_{g}") for g in GATES])
        b = np.concatenate([getattr(self, f"b_{g}") for g in GATES])
        return W, U, b

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int, dtype=np.float64, output_activation="tanh_gated"):
        kw = {}
        for g in GATES:
            kw[f"W_{g}"] = np.zeros((hidden_size, input_size), dtype)
            kw[f"U_{g}"] = np.zeros((hidden_size, hidden_size), dtype)
            kw[f"b_{g}"] = np.zeros(hidden_size, dtype)
        return cls(**kw, output_activation=output_activation)


def init_lstm(input_size: int, hidden_size: int, rng, dtype=np.float64, output_activation="tanh_gated") -> LstmParams:
    """Glorot-uniform W and U, zero biases except forget-gate bias 1."""
    kw = {}
    for g in GATES:
        kw[f"W_{g}"] = glorot_uniform(rng, (hidden_size, input_size), dtype)
        kw[f"U_{g}"] = glorot_uniform(rng, (hidden_size, hidden_size), dtype)
        kw[f"b_{g}"] = np.zeros(hidden_size, dtype)
    kw["b_f"] = np.ones(hidden_size, dtype)
    return LstmParams(**kw, output_activation=output_activation)


@dataclass
class LstmStep:
    f_t: np.ndarray
    i_t: np.ndarray
    c_tilde_t: np.ndarray
    C_t: np.ndarray
    o_t: np.ndarray
    h_t: np.ndarray
    x_t: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray


def lstm_cell_forward(p: LstmParams, x_t, h_prev, c_prev) -> LstmStep:
    """One step of the cell; works on ``[F]`` or ``[B, F]`` inputs."""
    x_t, h_prev, c_prev = np.asarray(x_t), np.asarray(h_prev), np.asarray(c_prev)
    if x_t.shape[-1] != p.input_size or h_prev.shape[-1] != p.hidden_size or c_prev.shape != h_prev.shape:
        raise ShapeMismatch(
            f"cell expects x[..., {p.input_size}], h/c[..., {p.hidden_size}]; "
            f"got {x_t.shape}, {h_prev.shape}, {c_prev.shape}"
        )
    f = sigmoid(x_t @ p.W_f.T + h_prev @ p.U_f.T + p.b_f)
    i = sigmoid(x_t @ p.W_i.T + h_prev @ p.U_i.T + p.b_i)
    c_tilde = np.tanh(x_t @ p.W_c.T + h_prev @ p.U_c.T + p.b_c)
    c = f * c_prev + i * c_tilde
    o = sigmoid(x_t @ p.W_o.T + h_prev @ p.U_o.T + p.b_o)
    h = o * np.tanh(c)
    return LstmStep(f, i, c_tilde, c, o, h, x_t, h_prev, c_prev)


@dataclass
class LstmCache:
    params: LstmParams
    x: np.ndarray  # [B, T, F]
    gates: np.ndarray  # [B, T, 4H] activated f, i, c~, o
    c: np.ndarray  # [B, T + 1, H], c[:, 0] = initial state
    h: np.ndarray  # [B, T + 1, H] raw cell outputs
    tanh_c: np.ndarray  # [B, T, H]
    return_sequence: bool
    unbatched: bool
    used: bool = False


def lstm_layer_forward(p: LstmParams, seq, return_sequence: bool = True):
    """Run the cell over ``[T, F]`` or ``[B, T, F]`` from zero state.

    Returns the hidden sequence ``[(B,) T, H]`` or the last state ``[(B,) H]``.
    """
    seq = np.asarray(seq)
    unbatched = seq.ndim == 2
    x = seq[None] if unbatched else seq
    if x.ndim != 3 or x.shape[2] != p.input_size or x.shape[1] < 1:
        raise ShapeMismatch(f"LSTM expects [B, T>=1, {p.input_size}], got {seq.shape}")
    B, T, _ = x.shape
    H = p.hidden_size
    W, U, b = p.stacked()
    dtype = np.result_type(x.dtype, W.dtype)

    pre_x = x @ W.T + b  # input projections for all steps at once
    gates = np.empty((B, T, 4 * H), dtype)
    c = np.zeros((B, T + 1, H), dtype)
    h = np.zeros((B, T + 1, H), dtype)
    tanh_c = np.empty((B, T, H), dtype)
    for t in range(T):
        a = pre_x[:, t] + h[:, t] @ U.T
        g = gates[:, t]
        g[:, : 2 * H] = sigmoid(a[:, : 2 * H])
        g[:, 2 * H: 3 * H] = np.tanh(a[:, 2 * H: 3 * H])
        g[:, 3 * H:] = sigmoid(a[:, 3 * H:])
        c[:, t + 1] = g[:, :H] * c[:, t] + g[:, H: 2 * H] * g[:, 2 * H: 3 * H]
        tanh_c[:, t] = np.tanh(c[:, t + 1])
        h[:, t + 1] = g[:, 3 * H:] * tanh_c[:, t]

    out = h[:, 1:] if return_sequence else h[:, -1]
    if p.output_activation == "relu_post":
        out = relu(out)
    if unbatched:
        out = out[0]
    return out, LstmCache(p, x, gates, c, h, tanh_c, return_sequence, unbatched)


def lstm_layer_backward(cache: LstmCache, d_out):
    """Backpropagation through time.

    Returns ``(grads, d_seq)`` with ``grads`` keyed like :attr:`LstmParams.TENSORS`.
    """
    if cache.used:
        raise StaleCache("LSTM cache was already consumed by a backward pass")
    cache.used = True
    p = cache.params
    x = cache.x
    B, T, _ = x.shape
    H = p.hidden_size
    W, U, _ = p.stacked()

    d_out = np.asarray(d_out)
    if cache.unbatched:
        d_out = d_out[None]
    dh_ext = np.zeros((B, T, H), dtype=cache.h.dtype)
    if cache.return_sequence:
        if d_out.shape != (B, T, H):
            raise ShapeMismatch(f"d_out must be {(B, T, H)}, got {d_out.shape}")
        dh_ext[:] = d_out
    else:
        if d_out.shape != (B, H):
            raise ShapeMismatch(f"d_out must be {(B, H)}, got {d_out.shape}")
        dh_ext[:, -1] = d_out
    if p.output_activation == "relu_post":
        dh_ext = dh_ext * (cache.h[:, 1:] > 0)

    d_a = np.empty_like(cache.gates)
    dh_next = np.zeros((B, H), dtype=dh_ext.dtype)
    dc_next = np.zeros((B, H), dtype=dh_ext.dtype)
    for t in range(T - 1, -1, -1):
        g = cache.gates[:, t]
        f, i, ct, o = g[:, :H], g[:, H: 2 * H], g[:, 2 * H: 3 * H], g[:, 3 * H:]
        tc = cache.tanh_c[:, t]
        dh = dh_ext[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        da = d_a[:, t]
        da[:, :H] = dc * cache.c[:, t] * f * (1.0 - f)
        da[:, H: 2 * H] = dc * ct * i * (1.0 - i)
        da[:, 2 * H: 3 * H] = dc * i * (1.0 - ct * ct)
        da[:, 3 * H:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = da @ U

    dW = np.einsum("btg,btf->gf", d_a, x)
    dU = np.einsum("btg,bth->gh", d_a, cache.h[:, :-1])
    db = d_a.sum(axis=(0, 1))
    dx = d_a @ W

    grads = {}
    for k, g in enumerate(GATES):
        sl = slice(k * H, (k + 1) * H)
        grads[f"W_{g}"] = dW[sl]
        grads[f"U_{g}"] = dU[sl]
        grads[f"b_{g}"] = db[sl]
    return grads, (dx[0] if cache.unbatched else dx)


# ---------------------------------------------------------------------------
# dense


@dataclass
class DenseParams:
    W: np.ndarray  # [out, in]
    b: np.ndarray  # [out]
    activation: str = "none"

    TENSORS = ("W", "b")

    def __post_init__(self):
        if self.activation not in DENSE_ACTIVATIONS:
            raise ValueError(f"activation must be one of {DENSE_ACTIVATIONS}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ShapeMismatch(f"dense W {self.W.shape} and b {self.b.shape} disagree")

    def tensors(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}


def init_dense(in_size: int, out_size: int, rng, activation="none", dtype=np.float64) -> DenseParams:
    return DenseParams(glorot_uniform(rng, (out_size, in_size), dtype), np.zeros(out_size, dtype), activation)


@dataclass
class DenseCache:
    params: DenseParams
    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    used: bool = False


def dense_forward(p: DenseParams, x):
    x = np.asarray(x)
    if x.shape[-1] != p.W.shape[1]:
        raise ShapeMismatch(f"dense expects [..., {p.W.shape[1]}], got {x.shape}")
    z = x @ p.W.T + p.b
    y = activation_forward(p.activation, z)
    return y, DenseCache(p, x, z, y)


def dense_backward(cache: DenseCache, dy):
    if cache.used:
        raise StaleCache("dense cache was already consumed by a backward pass")
    cache.used = True
    dz = activation_backward(cache.params.activation, cache.z, cache.y, np.asarray(dy))
    x2 = cache.x.reshape(-1, cache.x.shape[-1])
    dz2 = dz.reshape(-1, dz.shape[-1])
    grads = {"W": dz2.T @ x2, "b": dz2.sum(axis=0)}
    return grads, dz @ cache.params.W


# same dense applied independently at every time step of [B, T, in]
time_distributed_forward = dense_forward
time_distributed_backward = dense_backward


# ---------------------------------------------------------------------------
# batch normalisation


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    epsilon: float = 1e-5
    batches_seen: int = 0

    TENSORS = ("gamma", "beta")

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if np.any(self.running_var < 0):
            raise ValueError("running_var must be >= 0")

    @classmethod
    def create(cls, channels: int, dtype=np.float64, momentum=0.9, epsilon=1e-5):
        return cls(np.ones(channels, dtype), np.zeros(channels, dtype),
                   np.zeros(channels, dtype), np.ones(channels, dtype), momentum, epsilon)

    def tensors(self) -> dict[str, np.ndarray]:
        return {"gamma": self.gamma, "beta": self.beta}


@dataclass
class BatchNormCache:
    params: BatchNormParams
    x_hat: np.ndarray
    inv_std: np.ndarray
    mode: str
    new_running_mean: Optional[np.ndarray] = None
    new_running_var: Optional[np.ndarray] = None
    used: bool = False


def batchnorm_forward(p: BatchNormParams, x, mode: str = "train"):
    """Normalise ``[B, C]`` over the batch (train) or with running statistics (infer).

    Train mode does not mutate ``p``; the updated running statistics are
    returned in the cache (see :func:`commit_running_stats`).
    """
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != len(p.gamma):
        raise ShapeMismatch(f"batchnorm expects [B, {len(p.gamma)}], got {x.shape}")
    if mode == "train":
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        new_mean = p.momentum * p.running_mean + (1.0 - p.momentum) * mean
        new_var = p.momentum * p.running_var + (1.0 - p.momentum) * var
    elif mode == "infer":
        if p.batches_seen == 0:
            raise InferBeforeTrain("batchnorm running statistics are uninitialised")
        mean, var = p.running_mean, p.running_var
        new_mean = new_var = None
    else:
        raise ValueError("mode must be 'train' or 'infer'")
    inv_std = 1.0 / np.sqrt(var + p.epsilon)
    x_hat = (x - mean) * inv_std
    y = p.gamma * x_hat + p.beta
    return y, BatchNormCache(p, x_hat, inv_std, mode, new_mean, new_var)


def batchnorm_backward(cache: BatchNormCache, dy):
    if cache.used:
        raise StaleCache("batchnorm cache was already consumed by a backward pass")
    cache.used = True
    p = cache.params
    dy = np.asarray(dy)
    grads = {"gamma": np.sum(dy * cache.x_hat, axis=0), "beta": dy.sum(axis=0)}
    dx_hat = dy * p.gamma
    if cache.mode == "infer":
        return grads, dx_hat * cache.inv_std
    n = dy.shape[0]
    dx = cache.inv_std / n * (
        n * dx_hat - dx_hat.sum(axis=0) - cache.x_hat * np.sum(dx_hat * cache.x_hat, axis=0)
    )
    return grads, dx


def commit_running_stats(p: BatchNormParams, cache: BatchNormCache) -> None:
    if cache.mode != "train":
        return
    p.running_mean[...] = cache.new_running_mean
    p.running_var[...] = cache.new_running_var
    p.batches_seen += 1


# ---------------------------------------------------------------------------
# repeat vector


def repeat_vector(h, n: int):
    """``[H] -> [n, H]`` or ``[B, H] -> [B, n, H]``."""
    h = np.asarray(h)
    if h.ndim == 1:
        return np.repeat(h[None], n, axis=0)
    return np.repeat(h[:, None], n, axis=1)


def repeat_vector_backward(d_rep):
    d_rep = np.asarray(d_rep)
    return d_rep.sum(axis=-2)
