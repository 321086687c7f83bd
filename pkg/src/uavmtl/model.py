"""Shared-trunk network with a state-classification head and a trajectory head.

    input [B, WS, F]
      -> LSTM(shared_units, full sequence) -> LSTM(second_units, last state) = z
    classification:  batchnorm(z) -> dense(cls_dense_units) -> dense(5, sigmoid)
    trajectory:      repeat(z, HS) [+ per-step embedding] -> TD dense(traj_td_units, relu)
                     -> TD dense(3, linear)

Both heads backpropagate into the same trunk (hard parameter sharing).
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import nn
from .errors import NonFiniteActivation, ShapeMismatch, StaleCache

BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class ArchConfig:
    """Layer sizes and window geometry.

    ``horizon_embedding`` adds a learned ``[HS, second_units]`` offset to the
    repeated trunk state so the time-distributed decoder can emit a different
    position per horizon step; without it every step gets the same prediction.

    ``position_skip`` names the input features holding the (scaled) position;
    when set, the decoder output is added to the last observed position, so the
    trajectory head learns displacements instead of absolute coordinates.
    """

    shared_units: int = 256
    second_units: int = 128
    cls_dense_units: int = 64
    traj_td_units: int = 64
    num_states: int = 5
    ws: int = 30
    hs: int = 30
    n_features: int = 21
    lstm_output_mode: str = "relu_post"
    horizon_embedding: bool = True
    position_skip: Optional[tuple[int, ...]] = None
    bn_momentum: float = 0.9
    bn_epsilon: float = 1e-5

    def __post_init__(self):
        sizes = (self.shared_units, self.second_units, self.cls_dense_units, self.traj_td_units,
                 self.ws, self.hs, self.n_features)
        if not all(isinstance(v, (int, np.integer)) and v > 0 for v in sizes):
            raise ValueError("all layer sizes and window lengths must be positive integers")
        if self.num_states != 5:
            raise ValueError("num_states must be 5")
        if self.position_skip is not None:
            idx = tuple(int(i) for i in self.position_skip)
            if len(idx) != 3 or not all(0 <= i < self.n_features for i in idx):
                raise ValueError("position_skip must be three feature indices")
            object.__setattr__(self, "position_skip", idx)
        if self.lstm_output_mode not in nn.LSTM_MODES:
            raise ValueError(f"lstm_output_mode must be one of {nn.LSTM_MODES}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LossWeights:
    w_traj: float = 1.0
    w_cls: float = 1.0

    def __post_init__(self):
        if self.w_traj < 0 or self.w_cls < 0 or self.w_traj + self.w_cls <= 0:
            raise ValueError("loss weights must be >= 0 with a positive sum")


@dataclass
class ModelParams:
    shared_lstm: nn.LstmParams
    second_lstm: nn.LstmParams
    cls_bn: nn.BatchNormParams
    cls_dense: nn.DenseParams
    cls_out: nn.DenseParams
    traj_td: nn.DenseParams
    traj_out: nn.DenseParams
    traj_step: Optional[np.ndarray]
    arch: ArchConfig
    version: int = 0

    LAYERS = ("shared_lstm", "second_lstm", "cls_bn", "cls_dense", "cls_out", "traj_td", "traj_out")

    @property
    def dtype(self):
        return self.shared_lstm.W_f.dtype

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)


def named_tensors(m: ModelParams) -> dict[str, np.ndarray]:
    """Trainable tensors keyed ``layer.tensor`` (arrays are shared, not copied)."""
    out = {}
    for layer in ModelParams.LAYERS:
        for k, v in getattr(m, layer).tensors().items():
            out[f"{layer}.{k}"] = v
    if m.traj_step is not None:
        out["traj_step"] = m.traj_step
    return out


def state_tensors(m: ModelParams) -> dict[str, np.ndarray]:
    """Non-trainable state (batchnorm running statistics)."""
    return {"cls_bn.running_mean": m.cls_bn.running_mean, "cls_bn.running_var": m.cls_bn.running_var}


def expected_param_count(arch: ArchConfig) -> int:
    """Closed-form number of trainable scalars.

    LSTM: 4 (H F + H^2 + H); batchnorm: 2 C; dense: out * in + out;
    horizon embedding: HS * H2.
    """
    F, H1, H2 = arch.n_features, arch.shared_units, arch.second_units
    D, T = arch.cls_dense_units, arch.traj_td_units

    def lstm(f, h):
        return 4 * (h * f + h * h + h)

    def dense(i, o):
        return o * i + o

    n = lstm(F, H1) + lstm(H1, H2) + 2 * H2
    n += dense(H2, D) + dense(D, arch.num_states)
    n += dense(H2, T) + dense(T, 3)
    if arch.horizon_embedding:
        n += arch.hs * H2
    return n


def param_count(m: ModelParams) -> int:
    return int(sum(v.size for v in named_tensors(m).values()))


def build_model(arch: ArchConfig, seed: int = 0, dtype=np.float64) -> ModelParams:
    rng = np.random.default_rng(seed)
    mode = arch.lstm_output_mode
    return ModelParams(
        shared_lstm=nn.init_lstm(arch.n_features, arch.shared_units, rng, dtype, mode),
        second_lstm=nn.init_lstm(arch.shared_units, arch.second_units, rng, dtype, mode),
        cls_bn=nn.BatchNormParams.create(arch.second_units, dtype, arch.bn_momentum, arch.bn_epsilon),
        cls_dense=nn.init_dense(arch.second_units, arch.cls_dense_units, rng, "none", dtype),
        cls_out=nn.init_dense(arch.cls_dense_units, arch.num_states, rng, "sigmoid", dtype),
        traj_td=nn.init_dense(arch.second_units, arch.traj_td_units, rng, "relu", dtype),
        traj_out=nn.init_dense(arch.traj_td_units, 3, rng, "linear", dtype),
        traj_step=(rng.normal(scale=0.1, size=(arch.hs, arch.second_units)).astype(dtype)
                   if arch.horizon_embedding else None),
        arch=arch,
    )


def cast_model(m: ModelParams, dtype) -> ModelParams:
    out = m.copy()
    for name, t in list(named_tensors(out).items()) + list(state_tensors(out).items()):
        layer, _, attr = name.partition(".")
        if attr:
            setattr(getattr(out, layer), attr, t.astype(dtype))
        else:
            setattr(out, layer, t.astype(dtype))
    return out


@dataclass
class ForwardCache:
    version: int
    mode: str
    lstm1: nn.LstmCache
    lstm2: nn.LstmCache
    bn: nn.BatchNormCache
    cls_dense: nn.DenseCache
    cls_out: nn.DenseCache
    traj_td: nn.DenseCache
    traj_out: nn.DenseCache
    used: bool = False


def forward(m: ModelParams, batch, mode: str = "infer"):
    """Returns ``(traj_pred [B, HS, 3], state_probs [B, 5], cache)``.

    ``traj_pred`` is in scaled units.  In train mode the batchnorm running
    statistics are not touched; call :func:`commit_running_stats` afterwards.
    """
    a = m.arch
    x = np.asarray(batch)
    if x.ndim != 3 or x.shape[1:] != (a.ws, a.n_features):
        raise ShapeMismatch(f"batch must be [B, {a.ws}, {a.n_features}], got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ShapeMismatch("batch contains non-finite values")
    x = x.astype(m.dtype, copy=False)

    seq, c1 = nn.lstm_layer_forward(m.shared_lstm, x, return_sequence=True)
    z, c2 = nn.lstm_layer_forward(m.second_lstm, seq, return_sequence=False)

    bn_out, cbn = nn.batchnorm_forward(m.cls_bn, z, mode)
    d1, cd1 = nn.dense_forward(m.cls_dense, bn_out)
    probs, cd2 = nn.dense_forward(m.cls_out, d1)

    rep = nn.repeat_vector(z, a.hs)
    if m.traj_step is not None:
        rep = rep + m.traj_step
    t1, ct1 = nn.time_distributed_forward(m.traj_td, rep)
    traj, ct2 = nn.time_distributed_forward(m.traj_out, t1)
    if a.position_skip is not None:
        traj = traj + x[:, -1, list(a.position_skip)][:, None, :]

    if not (np.all(np.isfinite(traj)) and np.all(np.isfinite(probs))):
        raise NonFiniteActivation("non-finite model output")
    return traj, probs, ForwardCache(m.version, mode, c1, c2, cbn, cd1, cd2, ct1, ct2)


def commit_running_stats(m: ModelParams, cache: ForwardCache) -> None:
    nn.commit_running_stats(m.cls_bn, cache.bn)


def combined_loss(traj_pred, traj_true, state_probs, state_true, w: LossWeights = LossWeights()):
    """``(total, mse, bce)`` with ``total = w_traj * mse + w_cls * bce``."""
    traj_pred, traj_true = np.asarray(traj_pred), np.asarray(traj_true)
    state_probs, state_true = np.asarray(state_probs), np.asarray(state_true)
    if traj_pred.shape != traj_true.shape or state_probs.shape != state_true.shape:
        raise ShapeMismatch(
            f"prediction/target shapes differ: {traj_pred.shape} vs {traj_true.shape}, "
            f"{state_probs.shape} vs {state_true.shape}"
        )
    mse = float(np.mean(np.square(traj_pred - traj_true, dtype=np.float64)))
    p = np.clip(state_probs.astype(np.float64), BCE_CLAMP, 1.0 - BCE_CLAMP)
    y = state_true.astype(np.float64)
    bce = float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))
    total = w.w_traj * mse + w.w_cls * bce
    return total, mse, bce


def loss_gradients(traj_pred, traj_true, state_probs, state_true, w: LossWeights = LossWeights()):
    """Gradients of :func:`combined_loss` w.r.t. ``traj_pred`` and ``state_probs``."""
    traj_pred, state_probs = np.asarray(traj_pred), np.asarray(state_probs)
    d_traj = w.w_traj * 2.0 * (traj_pred - traj_true) / traj_pred.size
    p = state_probs
    y = np.asarray(state_true, dtype=p.dtype)
    inside = (p > BCE_CLAMP) & (p < 1.0 - BCE_CLAMP)
    pc = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    d_probs = w.w_cls * inside * (-(y / pc) + (1.0 - y) / (1.0 - pc)) / p.size
    return d_traj.astype(traj_pred.dtype), d_probs.astype(p.dtype)


def backward(m: ModelParams, cache: ForwardCache, d_traj, d_probs) -> dict[str, np.ndarray]:
    """Gradients of every trainable tensor, keyed as in :func:`named_tensors`."""
    if cache.used or cache.version != m.version:
        raise StaleCache("forward cache does not belong to the current parameters")
    cache.used = True
    grads = {}

    def put(layer, g):
        for k, v in g.items():
            grads[f"{layer}.{k}"] = v

    # classification head
    g, d = nn.dense_backward(cache.cls_out, d_probs)
    put("cls_out", g)
    g, d = nn.dense_backward(cache.cls_dense, d)
    put("cls_dense", g)
    g, dz_cls = nn.batchnorm_backward(cache.bn, d)
    put("cls_bn", g)

    # trajectory head
    g, d = nn.time_distributed_backward(cache.traj_out, d_traj)
    put("traj_out", g)
    g, d_rep = nn.time_distributed_backward(cache.traj_td, d)
    put("traj_td", g)
    if m.traj_step is not None:
        grads["traj_step"] = d_rep.sum(axis=0)
    dz_traj = nn.repeat_vector_backward(d_rep)

    # shared trunk: heads sum here
    g, d_seq = nn.lstm_layer_backward(cache.lstm2, dz_cls + dz_traj)
    put("second_lstm", g)
    g, _ = nn.lstm_layer_backward(cache.lstm1, d_seq)
    put("shared_lstm", g)
    return grads


def predict(m: ModelParams, inputs, batch_size: int = 512):
    """Infer-mode predictions over an array of windows, in batches."""
    trajs, probs = [], []
    for s in range(0, len(inputs), batch_size):
        t, p, _ = forward(m, inputs[s:s + batch_size], "infer")
        trajs.append(t)
        probs.append(p)
    return np.concatenate(trajs), np.concatenate(probs)
