"""Adam, the mini-batch training loop with early stopping, and checkpoints."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import model as M
from .errors import CorruptCheckpoint, EmptyDataset, IoFailure, NonFiniteActivation, NonFiniteLoss, ShapeMismatch
from .pipeline import ScalerParams, WindowedDataset

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], s: AdamState, lr: float):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    s.t += 1
    bc1 = 1.0 - s.beta1 ** s.t
    bc2 = 1.0 - s.beta2 ** s.t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient {k} has shape {g.shape}, parameter {p.shape}")
        if k not in s.m:
            s.m[k] = np.zeros_like(p)
            s.v[k] = np.zeros_like(p)
        m, v = s.m[k], s.v[k]
        m *= s.beta1
        m += (1.0 - s.beta1) * g
        v *= s.beta2
        v += (1.0 - s.beta2) * (g * g)
        p -= (lr * (m / bc1) / (np.sqrt(v / bc2) + s.epsilon)).astype(p.dtype, copy=False)
    return params, s


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 64
    max_epochs: int = 100
    early_stop_patience: int = 10
    min_delta: float = 1e-6
    loss_weights: M.LossWeights = field(default_factory=M.LossWeights)
    seed: int = 0
    shuffle: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        if isinstance(self.loss_weights, dict):
            self.loss_weights = M.LossWeights(**self.loss_weights)
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1 or self.max_epochs < 1 or self.early_stop_patience < 1:
            raise ValueError("batch_size, max_epochs and early_stop_patience must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    train_total: float
    train_mse: float
    train_bce: float
    val_total: float
    val_mse: float
    val_bce: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    @property
    def best_val_total(self) -> float:
        return self.epochs[self.best_epoch].val_total

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(e, name) for e in self.epochs])


def evaluate_loss(m: M.ModelParams, ds: WindowedDataset, w: M.LossWeights, batch_size: int = 512):
    """Infer-mode ``(total, mse, bce)`` over a whole dataset."""
    traj, probs = M.predict(m, ds.inputs, batch_size)
    return M.combined_loss(traj, ds.traj_targets.astype(traj.dtype), probs, ds.state_targets, w)


def _check_finite(loss, traj, probs, grads=None):
    if np.isfinite(loss):
        return
    for name, arr in (("traj_pred", traj), ("state_probs", probs), *((grads or {}).items())):
        if not np.all(np.isfinite(arr)):
            raise NonFiniteLoss(f"non-finite loss; first non-finite tensor: {name}")
    raise NonFiniteLoss("non-finite loss")


def train_step(m: M.ModelParams, opt: AdamState, x, y_traj, y_state, cfg: TrainConfig):
    try:
        traj, probs, cache = M.forward(m, x, "train")
    except NonFiniteActivation as e:
        raise NonFiniteLoss(f"non-finite training forward pass: {e}") from e
    total, mse, bce = M.combined_loss(traj, y_traj, probs, y_state, cfg.loss_weights)
    _check_finite(total, traj, probs)
    d_traj, d_probs = M.loss_gradients(traj, y_traj, probs, y_state, cfg.loss_weights)
    grads = M.backward(m, cache, d_traj, d_probs)
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteLoss(f"non-finite gradient in {k}")
    adam_step(M.named_tensors(m), grads, opt, cfg.learning_rate)
    M.commit_running_stats(m, cache)
    m.version += 1
    return total, mse, bce


def train(
    m: M.ModelParams,
    train_set: WindowedDataset,
    val_set: WindowedDataset,
    cfg: TrainConfig = TrainConfig(),
    log_path: Optional[str] = None,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
):
    """Fit on ``train_set`` and return ``(best_params, history)``.

    Each epoch runs seeded shuffled mini-batches (the last partial batch is
    kept), then scores the validation set in infer mode.  The parameters of the
    best validation epoch are returned; training stops after
    ``early_stop_patience`` epochs without an improvement larger than
    ``min_delta``.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise EmptyDataset("training and validation sets must be non-empty")
    dtype = np.dtype(cfg.dtype)
    m = M.cast_model(m, dtype)
    x_all = train_set.inputs.astype(dtype)
    yt_all = train_set.traj_targets.astype(dtype)
    ys_all = train_set.state_targets.astype(dtype)
    val = WindowedDataset(
        val_set.inputs.astype(dtype), val_set.traj_targets.astype(dtype), val_set.state_targets,
        val_set.state_counts, val_set.flight_ids, val_set.starts, val_set.ws, val_set.hs,
        val_set.feature_names, val_set.scaled,
    )

    rng = np.random.default_rng([cfg.seed, 2])
    opt = AdamState()
    history = TrainHistory()
    best, best_loss, waited = None, np.inf, 0
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        n = len(x_all)
        for epoch in range(cfg.max_epochs):
            order = rng.permutation(n) if cfg.shuffle else np.arange(n)
            sums = np.zeros(3)
            for s in range(0, n, cfg.batch_size):
                idx = order[s:s + cfg.batch_size]
                losses = train_step(m, opt, x_all[idx], yt_all[idx], ys_all[idx], cfg)
                sums += np.array(losses) * len(idx)
            tr = sums / n
            try:
                va = evaluate_loss(m, val, cfg.loss_weights)
            except NonFiniteActivation as e:
                raise NonFiniteLoss(f"non-finite validation loss in epoch {epoch}: {e}") from e
            if not np.isfinite(va[0]):
                raise NonFiniteLoss(f"non-finite validation loss in epoch {epoch}")
            rec = EpochRecord(epoch, *map(float, tr), *map(float, va))
            history.epochs.append(rec)
            if log_fh:
                log_fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")
                log_fh.flush()
            if on_epoch:
                on_epoch(rec)
            log.info("epoch %d train %.5f val %.5f", epoch, rec.train_total, rec.val_total)

            if rec.val_total < best_loss - cfg.min_delta:
                best_loss, best, waited = rec.val_total, m.copy(), 0
                history.best_epoch = epoch
            else:
                waited += 1
                if waited >= cfg.early_stop_patience:
                    history.stopped_early = epoch < cfg.max_epochs - 1
                    break
    finally:
        if log_fh:
            log_fh.close()
    return best, history


# ---------------------------------------------------------------------------
# checkpoints
#
# layout (little endian):
#   b"MLFS" | u32 version | u32 meta_len | meta (utf-8 JSON) | u32 n_tensors
#   per tensor: u16 name_len | name | u8 dtype | u8 ndim | u32 * ndim shape
#               | u64 nbytes | row-major payload

MAGIC = b"MLFS"
FORMAT_VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8")}
_DTYPE_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2, np.dtype("int64"): 3}


@dataclass
class Checkpoint:
    model: M.ModelParams
    scaler: ScalerParams
    config: TrainConfig
    meta: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.model, self.scaler, self.config))


def save_checkpoint(m: M.ModelParams, scaler: ScalerParams, cfg: TrainConfig, path, meta: Optional[dict] = None) -> None:
    tensors = dict(M.named_tensors(m))
    tensors.update(M.state_tensors(m))
    tensors["scaler.mean"] = np.asarray(scaler.mean, dtype=np.float64)
    tensors["scaler.std"] = np.asarray(scaler.std, dtype=np.float64)
    header = {
        "arch": m.arch.to_dict(),
        "model_version": m.version,
        "bn_batches_seen": m.cls_bn.batches_seen,
        "scaler": {"feature_names": list(scaler.feature_names), "position_idx": list(scaler.position_idx)},
        "train_config": cfg.to_dict(),
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(blob)), blob, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        code = _DTYPE_CODES.get(arr.dtype)
        if code is None:
            raise ValueError(f"unsupported dtype {arr.dtype} for {name}")
        payload = arr.astype(_DTYPES[code], copy=False).tobytes(order="C")
        bname = name.encode("utf-8")
        parts.append(struct.pack("<H", len(bname)) + bname)
        parts.append(struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(struct.pack("<Q", len(payload)) + payload)
    try:
        with open(path, "wb") as fh:
            fh.write(b"".join(parts))
    except OSError as e:
        raise IoFailure(f"cannot write checkpoint {path}: {e}") from e


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptCheckpoint(f"truncated checkpoint: need {n} bytes at offset {self.pos}, file has {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as e:
        raise IoFailure(f"cannot read checkpoint {path}: {e}") from e
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise CorruptCheckpoint("bad magic; not a checkpoint file")
    version, meta_len = r.unpack("<II")
    if version != FORMAT_VERSION:
        raise CorruptCheckpoint(f"checkpoint version mismatch: expected {FORMAT_VERSION}, found {version}")
    try:
        header = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptCheckpoint(f"unreadable metadata block: {e}") from e
    (n_tensors,) = r.unpack("<I")
    tensors = {}
    for _ in range(n_tensors):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        code, ndim = r.unpack("<BB")
        if code not in _DTYPES:
            raise CorruptCheckpoint(f"unknown dtype code {code} for {name}")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        (nbytes,) = r.unpack("<Q")
        dt = _DTYPES[code]
        if nbytes != int(np.prod(shape, dtype=np.int64)) * dt.itemsize:
            raise CorruptCheckpoint(f"length mismatch for {name}: {nbytes} bytes for shape {shape}")
        tensors[name] = np.frombuffer(r.take(nbytes), dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    if r.pos != len(buf):
        raise CorruptCheckpoint(f"length mismatch: {len(buf) - r.pos} trailing bytes")

    try:
        arch = M.ArchConfig(**header["arch"])
        dtype = tensors["shared_lstm.W_f"].dtype
        m = M.build_model(arch, 0, dtype)
        for name, arr in {**M.named_tensors(m), **M.state_tensors(m)}.items():
            if tensors[name].shape != arr.shape:
                raise ValueError(f"{name} has shape {tensors[name].shape}, arch needs {arr.shape}")
            arr[...] = tensors[name]
        m.cls_bn.batches_seen = int(header["bn_batches_seen"])
        m.version = int(header["model_version"])
        sc = header["scaler"]
        scaler = ScalerParams(tensors["scaler.mean"], tensors["scaler.std"],
                              tuple(sc["feature_names"]), tuple(sc["position_idx"]))
        cfg = TrainConfig(**header["train_config"])
    except (KeyError, TypeError, ValueError) as e:
        raise CorruptCheckpoint(f"inconsistent checkpoint contents: {e}") from e
    return Checkpoint(m, scaler, cfg, header.get("meta", {}))
