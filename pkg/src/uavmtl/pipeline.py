"""Sliding-window segmentation, standard scaling and train/val/test splitting."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateSplit, EmptyTrainingSet, NoUsableFlights, ShapeMismatch
from .labeler import NUM_STATES
from .telemetry import FEATURE_COLUMNS, POSITION_COLUMNS, FlightSeries

log = logging.getLogger(__name__)

POSITION_FEATURE_IDX = tuple(FEATURE_COLUMNS.index(c) for c in POSITION_COLUMNS)


def window_count(length: int, ws: int, hs: int) -> int:
    return max(0, length - ws - hs + 1)


@dataclass
class WindowedDataset:
    """Aligned (input window, trajectory target, state target) triples.

    ``state_counts`` holds, per window, how many horizon steps carry each state;
    ``state_targets`` is its multi-hot indicator.
    """

    inputs: np.ndarray  # [N, WS, F]
    traj_targets: np.ndarray  # [N, HS, 3]
    state_targets: np.ndarray  # [N, 5]
    state_counts: np.ndarray  # [N, 5]
    flight_ids: np.ndarray  # [N] source flight of each window
    starts: np.ndarray  # [N] window start index within its flight
    ws: int
    hs: int
    feature_names: tuple[str, ...] = FEATURE_COLUMNS
    scaled: bool = False

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def n_features(self) -> int:
        return self.inputs.shape[2]

    def subset(self, idx) -> "WindowedDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return WindowedDataset(
            self.inputs[idx], self.traj_targets[idx], self.state_targets[idx], self.state_counts[idx],
            self.flight_ids[idx], self.starts[idx], self.ws, self.hs, self.feature_names, self.scaled,
        )

    def flights(self) -> list[str]:
        # first-occurrence order
        _, first = np.unique(self.flight_ids, return_index=True)
        return [str(self.flight_ids[i]) for i in sorted(first)]


def _flight_windows(series: FlightSeries, ws: int, hs: int):
    n = window_count(len(series), ws, hs)
    feats = series.features
    pos = series.positions
    one_hot = np.eye(NUM_STATES, dtype=np.int64)[series.labels]
    # prefix sums give per-window horizon label counts in O(len)
    csum = np.vstack([np.zeros((1, NUM_STATES), dtype=np.int64), np.cumsum(one_hot, axis=0)])
    i = np.arange(n)
    inputs = feats[i[:, None] + np.arange(ws)]
    traj = pos[i[:, None] + ws + np.arange(hs)]
    counts = csum[i + ws + hs] - csum[i + ws]
    return inputs, traj, counts


def input_windows(series: FlightSeries, ws: int, hs: int) -> np.ndarray:
    """Input windows ``[len - WS - HS + 1, WS, F]`` of an unlabelled flight (same starts as training)."""
    n = window_count(len(series), ws, hs)
    return series.features[np.arange(n)[:, None] + np.arange(ws)]


def slide_windows(flights: Sequence[FlightSeries], ws: int, hs: int) -> WindowedDataset:
    """Cut every annotated flight into windows ``i = 0 .. len - WS - HS``.

    Inputs are features ``[i, i+WS)``; targets are positions and the multi-hot
    union of states over ``[i+WS, i+WS+HS)``.  Flights shorter than ``WS + HS``
    are skipped with a warning.
    """
    if ws < 1 or hs < 1:
        raise ValueError("WS and HS must be >= 1")
    parts = []
    for s in flights:
        if s.labels is None:
            raise ValueError(f"flight {s.flight_id} has no state labels; annotate it first")
        if window_count(len(s), ws, hs) == 0:
            log.warning("skipping flight %s: %d records < WS + HS = %d", s.flight_id, len(s), ws + hs)
            continue
        x, y, c = _flight_windows(s, ws, hs)
        parts.append((s.flight_id, x, y, c))
    if not parts:
        raise NoUsableFlights(f"no flight has at least WS + HS = {ws + hs} records")

    inputs = np.concatenate([p[1] for p in parts])
    traj = np.concatenate([p[2] for p in parts])
    counts = np.concatenate([p[3] for p in parts])
    ids = np.concatenate([np.full(len(p[1]), p[0], dtype=object) for p in parts])
    starts = np.concatenate([np.arange(len(p[1])) for p in parts])
    return WindowedDataset(inputs, traj, (counts > 0).astype(np.float64), counts, ids, starts, ws, hs)


# ---------------------------------------------------------------------------
# scaling


@dataclass
class ScalerParams:
    """Per-feature mean and population (1/N) standard deviation."""

    mean: np.ndarray
    std: np.ndarray
    feature_names: tuple[str, ...] = FEATURE_COLUMNS
    position_idx: tuple[int, ...] = POSITION_FEATURE_IDX

    @property
    def position_mean(self) -> np.ndarray:
        return self.mean[list(self.position_idx)]

    @property
    def position_std(self) -> np.ndarray:
        return self.std[list(self.position_idx)]


def fit_scaler(train_inputs, feature_names=FEATURE_COLUMNS) -> ScalerParams:
    """Fit on training windows only; zero-variance features get std 1 and a warning."""
    x = np.asarray(train_inputs, dtype=np.float64)
    if x.size == 0:
        raise EmptyTrainingSet("cannot fit a scaler on an empty training set")
    flat = x.reshape(-1, x.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    flat_cols = std == 0
    if np.any(flat_cols):
        names = [feature_names[i] if i < len(feature_names) else str(i) for i in np.flatnonzero(flat_cols)]
        log.warning("zero-variance features get std = 1: %s", ", ".join(names))
        std = np.where(flat_cols, 1.0, std)
    pos_idx = tuple(feature_names.index(c) for c in POSITION_COLUMNS) if set(POSITION_COLUMNS) <= set(feature_names) else ()
    return ScalerParams(mean, std, tuple(feature_names), pos_idx)


def apply_scaler(x, p: ScalerParams) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != len(p.mean):
        raise ShapeMismatch(f"expected {len(p.mean)} features, got {x.shape[-1]}")
    return (x - p.mean) / p.std


def invert_scaler(x_hat, p: ScalerParams) -> np.ndarray:
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x_hat.shape[-1] != len(p.mean):
        raise ShapeMismatch(f"expected {len(p.mean)} features, got {x_hat.shape[-1]}")
    return x_hat * p.std + p.mean


def scale_positions(pos, p: ScalerParams) -> np.ndarray:
    return (np.asarray(pos, dtype=np.float64) - p.position_mean) / p.position_std


def unscale_positions(pos_hat, p: ScalerParams) -> np.ndarray:
    return np.asarray(pos_hat, dtype=np.float64) * p.position_std + p.position_mean


def scale_dataset(ds: WindowedDataset, p: ScalerParams) -> WindowedDataset:
    if ds.scaled:
        raise ValueError("dataset is already scaled")
    return WindowedDataset(
        apply_scaler(ds.inputs, p), scale_positions(ds.traj_targets, p), ds.state_targets, ds.state_counts,
        ds.flight_ids, ds.starts, ds.ws, ds.hs, ds.feature_names, scaled=True,
    )


# ---------------------------------------------------------------------------
# splitting


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.70
    val_frac: float = 0.15
    test_frac: float = 0.15
    mode: str = "by_flight"
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if not all(0 < f < 1 for f in fracs):
            raise ValueError("split fractions must lie in (0, 1)")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fracs)}")
        if self.mode not in ("by_flight", "by_window"):
            raise ValueError("mode must be 'by_flight' or 'by_window'")


def split_counts(n: int, fracs: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of ``n`` items."""
    raw = np.asarray(fracs) * n
    counts = np.floor(raw).astype(int)
    order = np.argsort(-(raw - counts), kind="stable")
    for k in order[: n - counts.sum()]:
        counts[k] += 1
    return counts.tolist()


def split_dataset(ds: WindowedDataset, spec: SplitSpec = SplitSpec()):
    """Disjoint (train, val, test) partition; whole flights per split in ``by_flight`` mode."""
    if len(ds) < 3:
        raise DegenerateSplit(f"need at least 3 windows, got {len(ds)}")
    rng = np.random.default_rng(spec.seed)
    fracs = (spec.train_frac, spec.val_frac, spec.test_frac)
    if spec.mode == "by_flight":
        flights = ds.flights()
        counts = split_counts(len(flights), fracs)
        if min(counts) == 0:
            raise DegenerateSplit(f"{len(flights)} flights cannot fill splits {fracs}")
        order = rng.permutation(len(flights))
        groups = np.split(np.array(flights, dtype=object)[order], np.cumsum(counts)[:-1])
        parts = []
        for g in groups:
            members = set(g.tolist())
            parts.append(np.flatnonzero([f in members for f in ds.flight_ids]))
    else:
        counts = split_counts(len(ds), fracs)
        if min(counts) == 0:
            raise DegenerateSplit(f"{len(ds)} windows cannot fill splits {fracs}")
        order = rng.permutation(len(ds))
        parts = [np.sort(p) for p in np.split(order, np.cumsum(counts)[:-1])]
    return tuple(ds.subset(p) for p in parts)
