"""Rule-based flight-state annotation from position and yaw deltas."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import SeriesTooShort, ZeroNormQuaternion


class DroneState(enum.IntEnum):
    IDLE_HOVER = 0
    ASCEND = 1
    TURN = 2
    HMSL = 3
    DESCEND = 4


NUM_STATES = len(DroneState)
STATE_NAMES = tuple(s.name for s in DroneState)

DEFAULT_PRECEDENCE = ("vertical", "turn", "horizontal")


@dataclass(frozen=True)
class LabelThresholds:
    """Per-step change tolerances (nominal 0.1 s step)."""

    eps_xy: float = 0.05
    eps_z: float = 0.03
    eps_yaw: float = 0.02

    def __post_init__(self):
        if not (self.eps_xy > 0 and self.eps_z > 0 and self.eps_yaw > 0):
            raise ValueError("label thresholds must be strictly positive")


def yaw_from_quaternion(q) -> np.ndarray:
    """Yaw (rotation about Z) in (-pi, pi] of (x, y, z, w) quaternions.

    Accepts a single quaternion or an ``[..., 4]`` array; inputs are normalised.
    """
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise ZeroNormQuaternion("quaternion with zero norm")
    x, y, z, w = np.moveaxis(q / norm, -1, 0)
    yaw = np.arctan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
    # atan2 returns -pi for the (-0.0) branch; map to the closed end
    yaw = np.where(yaw <= -math.pi, math.pi, yaw)
    return yaw if yaw.ndim else float(yaw)


def wrap_angle(a):
    """Wrap to [-pi, pi)."""
    return (np.asarray(a) + math.pi) % (2 * math.pi) - math.pi


def horizontal_deltas(positions: np.ndarray, coord_mode: str) -> np.ndarray:
    from .evaluation import haversine_m

    if coord_mode == "geodetic":
        lon, lat = positions[:, 0], positions[:, 1]
        return haversine_m(lat[:-1], lon[:-1], lat[1:], lon[1:])
    return np.hypot(np.diff(positions[:, 0]), np.diff(positions[:, 1]))


def annotate_states(series, th: LabelThresholds = LabelThresholds(), precedence=DEFAULT_PRECEDENCE) -> np.ndarray:
    """One :class:`DroneState` index per record.

    Step ``t`` is labelled from the change between records ``t-1`` and ``t``;
    ``precedence`` orders the vertical / turn / horizontal checks and anything
    that passes none of them is IDLE_HOVER.  Record 0 copies record 1.
    """
    if len(series) < 2:
        raise SeriesTooShort(f"need at least 2 records, got {len(series)}")
    if sorted(precedence) != sorted(DEFAULT_PRECEDENCE):
        raise ValueError(f"precedence must be a permutation of {DEFAULT_PRECEDENCE}")

    pos = series.positions
    d_xy = horizontal_deltas(pos, series.coord_mode)
    d_z = np.diff(pos[:, 2])
    d_yaw = wrap_angle(np.diff(yaw_from_quaternion(series.quaternions)))

    checks = {
        "vertical": (
            np.abs(d_z) > th.eps_z,
            np.where(d_z > 0, int(DroneState.ASCEND), int(DroneState.DESCEND)),
        ),
        "turn": (np.abs(d_yaw) > th.eps_yaw, np.full(len(d_z), int(DroneState.TURN))),
        "horizontal": (d_xy > th.eps_xy, np.full(len(d_z), int(DroneState.HMSL))),
    }
    steps = np.full(len(d_z), int(DroneState.IDLE_HOVER), dtype=np.int64)
    # apply lowest precedence first so higher ones overwrite
    for name in reversed(precedence):
        mask, value = checks[name]
        steps = np.where(mask, value, steps)

    return np.concatenate([steps[:1], steps])


def annotate(series, th: LabelThresholds = LabelThresholds(), precedence=DEFAULT_PRECEDENCE):
    """Return a copy of ``series`` carrying its annotated labels."""
    return series.with_labels(annotate_states(series, th, precedence))
