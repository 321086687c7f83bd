"""Synthetic multirotor missions in the telemetry schema.

A mission is a fixed sequence of segments: idle on the ground, ascend, a
series of straight legs separated by in-place yaw turns, descend, idle.  Every
motion segment ramps its rate up and down with a smooth acceleration bump and
holds a constant "cruise" rate in between.  Kinematics are integrated with the
trapezoidal rule (acceleration -> velocity -> position), so the noise-free
series is exactly self-consistent under that rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .labeler import DroneState
from .telemetry import COL, COLUMNS, FlightSeries, local_to_geodetic, quaternion_from_euler

PATTERNS = ("triangular", "square", "polygonal", "random")
GRAVITY = 9.80665

_PATTERN_LEGS = {"triangular": 3, "square": 4, "polygonal": 5}


def default_noise() -> dict[str, float]:
    # GPS-grade horizontal noise, barometric altitude noise, IMU-grade rest
    return {
        "position_xy": 0.01,
        "position_z": 0.005,
        "orientation": 0.002,
        "velocity": 0.02,
        "angular": 0.005,
        "acceleration": 0.05,
        "battery_voltage": 0.02,
        "battery_current": 0.1,
        "wind_speed": 0.1,
        "wind_angle": 1.0,
    }


@dataclass
class SynthConfig:
    pattern: str = "triangular"
    duration_s: float = 120.0
    altitude_m: float = 20.0
    speed_mps: float = 5.0
    payload_g: float = 0.0
    wind_mean_mps: float = 3.0
    noise_std: dict = field(default_factory=default_noise)
    seed: int = 0
    sample_rate_hz: float = 10.0
    climb_rate_mps: float = 2.0
    yaw_rate_rps: float = 0.3
    ramp_s: float = 2.0
    initial_heading_rad: float = 0.0
    coord_mode: str = "geodetic"
    origin_lat: float = 35.1456
    origin_lon: float = 33.4120
    ground_elevation_m: float = 150.0

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"pattern must be one of {PATTERNS}")
        if not self.duration_s > 0:
            raise ValueError("duration_s must be > 0")
        if not self.speed_mps >= 0:
            raise ValueError("speed_mps must be >= 0")
        if self.altitude_m <= 0 or self.climb_rate_mps <= 0 or self.yaw_rate_rps <= 0:
            raise ValueError("altitude, climb rate and yaw rate must be > 0")
        if self.payload_g < 0:
            raise ValueError("payload_g must be >= 0")


@dataclass(frozen=True)
class Segment:
    """One mission segment over samples ``[start, stop)``.

    ``cruise`` is the sample span ``[c0, c1]`` over which the rate is held
    constant (empty for idle segments); ``rate`` is m/s for translations and
    rad/s for turns, ``heading`` the yaw held during translations.
    """

    state: DroneState
    start: int
    stop: int
    cruise: tuple[int, int]
    rate: float = 0.0
    heading: float = 0.0


# ---------------------------------------------------------------------------
# schedule


def _motion_steps(amount: float, rate: float, ramp_steps: int, dt: float) -> int:
    """Cruise intervals so that ramps + cruise cover ``amount`` at ``rate``."""
    # each ramp covers rate * ramp_steps * dt / 2
    cruise = amount / (rate * dt) - ramp_steps
    return max(int(round(cruise)), 1)


def mission_schedule(cfg: SynthConfig) -> list[Segment]:
    dt = 1.0 / cfg.sample_rate_hz
    n_total = int(round(cfg.duration_s * cfg.sample_rate_hz))
    n_r = max(int(round(cfg.ramp_s * cfg.sample_rate_hz)), 2)
    rng = np.random.default_rng([cfg.seed, 1])

    if cfg.pattern == "random":
        n_legs = int(rng.integers(2, 5))
        turns = [float(rng.uniform(math.radians(45), math.radians(150)) * rng.choice([-1, 1]))
                 for _ in range(n_legs - 1)]
        weights = rng.uniform(0.6, 1.4, size=n_legs)
    else:
        n_legs = _PATTERN_LEGS[cfg.pattern]
        turns = [2 * math.pi / n_legs] * (n_legs - 1)
        weights = np.ones(n_legs)

    climb = _motion_steps(cfg.altitude_m, cfg.climb_rate_mps, n_r, dt)
    turn_cruise = [_motion_steps(abs(a), cfg.yaw_rate_rps, n_r, dt) for a in turns]
    fixed = 2 * (climb + 2 * n_r + 1) + sum(c + 2 * n_r + 1 for c in turn_cruise)
    remaining = n_total - fixed
    hover_start = int(round(0.12 * remaining))
    hover_end = int(round(0.08 * remaining))
    leg_budget = remaining - hover_start - hover_end
    leg_steps = np.floor(leg_budget * weights / weights.sum()).astype(int)
    leg_steps[-1] += leg_budget - leg_steps.sum()
    if (cfg.speed_mps > 0 and np.any(leg_steps < 2 * n_r + 2)) or hover_start < 1 or hover_end < 1:
        raise ValueError(
            f"duration_s={cfg.duration_s} too short for a {cfg.pattern} mission at "
            f"altitude {cfg.altitude_m} m"
        )

    plan: list[tuple[DroneState, int, float]] = [
        (DroneState.IDLE_HOVER, hover_start, 0.0),
        (DroneState.ASCEND, climb, cfg.climb_rate_mps),
    ]
    for k in range(n_legs):
        if cfg.speed_mps > 0:
            plan.append((DroneState.HMSL, int(leg_steps[k]) - 2 * n_r - 1, cfg.speed_mps))
        else:
            plan.append((DroneState.IDLE_HOVER, int(leg_steps[k]), 0.0))
        if k < n_legs - 1:
            plan.append((DroneState.TURN, turn_cruise[k], math.copysign(cfg.yaw_rate_rps, turns[k])))
    plan.append((DroneState.DESCEND, climb, -cfg.climb_rate_mps))
    plan.append((DroneState.IDLE_HOVER, hover_end, 0.0))
    segments = schedule_from_plan(plan, cfg)
    assert segments[-1].stop == n_total
    return segments


def schedule_from_plan(plan, cfg: SynthConfig) -> list[Segment]:
    """Lay out ``(state, steps, rate)`` entries back to back.

    For idle entries ``steps`` is the segment length; for motion entries it is
    the number of constant-rate cruise intervals, and ramps of ``cfg.ramp_s``
    are added on both sides.  Turn rates are signed (positive = left).
    """
    dt = 1.0 / cfg.sample_rate_hz
    n_r = max(int(round(cfg.ramp_s * cfg.sample_rate_hz)), 2)
    heading = cfg.initial_heading_rad
    segments: list[Segment] = []
    pos = 0
    for state, steps, rate in plan:
        state = DroneState(state)
        if state == DroneState.IDLE_HOVER:
            seg = Segment(state, pos, pos + steps, (pos, pos - 1))
        else:
            length = steps + 2 * n_r + 1
            seg = Segment(state, pos, pos + length, (pos + n_r, pos + n_r + steps), rate, heading)
            if state == DroneState.TURN:
                heading += rate * dt * (steps + n_r)
        segments.append(seg)
        pos = seg.stop
    return segments


def schedule_labels(segments: list[Segment]) -> np.ndarray:
    labels = np.empty(segments[-1].stop, dtype=np.int64)
    for s in segments:
        labels[s.start:s.stop] = int(s.state)
    return labels


# ---------------------------------------------------------------------------
# kinematics


def _bump(n: int) -> np.ndarray:
    """Acceleration bump over ``n`` intervals whose trapezoidal integral is 1."""
    k = np.arange(n + 1)
    shape = np.sin(np.pi * k / n) ** 2
    return shape / (shape.sum() - 0.5 * (shape[0] + shape[-1]))


def cumtrapz(y: np.ndarray, dt: float, initial=0.0) -> np.ndarray:
    out = np.empty_like(y, dtype=np.float64)
    out[0] = initial
    out[1:] = initial + np.cumsum(0.5 * (y[1:] + y[:-1]) * dt, axis=0)
    return out


def _rate_profile(segments, n_total, dt, which):
    """Per-sample derivative of the commanded rate for one kind of motion."""
    acc = np.zeros(n_total)
    for s in segments:
        if s.state not in which:
            continue
        c0, c1 = s.cruise
        n_r = c0 - s.start
        bump = _bump(n_r) * s.rate / dt
        acc[s.start:c0 + 1] += bump
        acc[c1:s.stop] -= bump
    return acc


def generate_synthetic_flight(
    cfg: SynthConfig, flight_id: Optional[str] = None, segments: Optional[list[Segment]] = None
) -> FlightSeries:
    """Generate one noise-perturbed mission; deterministic for a given config.

    ``segments`` overrides the pattern-derived schedule (see :func:`schedule_from_plan`).
    The schedule used is returned in ``series.meta["schedule"]``.
    """
    rng = np.random.default_rng([cfg.seed, 0])
    dt = 1.0 / cfg.sample_rate_hz
    if segments is None:
        segments = mission_schedule(cfg)
    n = segments[-1].stop
    t = np.arange(n) * dt

    # vertical and yaw channels
    az = _rate_profile(segments, n, dt, {DroneState.ASCEND, DroneState.DESCEND})
    vz = cumtrapz(az, dt)
    up = cumtrapz(vz, dt)
    yaw_acc = _rate_profile(segments, n, dt, {DroneState.TURN})
    yaw_rate = cumtrapz(yaw_acc, dt)
    yaw = cumtrapz(yaw_rate, dt, initial=cfg.initial_heading_rad)

    # horizontal speed along the heading held by each leg
    a_fwd = _rate_profile(segments, n, dt, {DroneState.HMSL})
    ax = np.zeros(n)
    ay = np.zeros(n)
    for s in segments:
        if s.state == DroneState.HMSL:
            ax[s.start:s.stop] = a_fwd[s.start:s.stop] * math.cos(s.heading)
            ay[s.start:s.stop] = a_fwd[s.start:s.stop] * math.sin(s.heading)
    vx, vy = cumtrapz(ax, dt), cumtrapz(ay, dt)
    east, north = cumtrapz(vx, dt), cumtrapz(vy, dt)

    # attitude: nose-down pitch proportional to forward acceleration
    pitch = np.arctan2(a_fwd, GRAVITY)
    roll = np.zeros(n)

    # ground contact: motors idle on the ground, spin up 2 s before take-off
    moving = [s for s in segments if s.state != DroneState.IDLE_HOVER]
    thrust = np.zeros(n)
    if moving:
        first, last = moving[0].start, moving[-1].stop
        thrust[first:last] = 1.0
        spin = int(round(2.0 * cfg.sample_rate_hz))
        lo = max(first - spin, 0)
        thrust[lo:first] = np.linspace(0.0, 1.0, first - lo, endpoint=False)
        tail = min(spin, n - last)
        thrust[last:last + tail] = np.linspace(1.0, 0.0, tail)

    payload_kg = cfg.payload_g / 1000.0
    current = (
        1.5
        + thrust * (14.0 + 9.0 * payload_kg)
        + 3.0 * np.clip(vz, 0, None)
        - 1.5 * np.clip(-vz, 0, None)
        + 0.4 * np.hypot(vx, vy)
    )
    charge_ah = cumtrapz(current, dt) / 3600.0
    voltage = 25.2 - 0.9 * charge_ah - 0.012 * current

    # wind: Ornstein-Uhlenbeck speed, slowly wandering direction
    wind = np.empty(n)
    wind[0] = cfg.wind_mean_mps
    shocks = rng.normal(size=n)
    for k in range(1, n):
        wind[k] = wind[k - 1] + 0.05 * (cfg.wind_mean_mps - wind[k - 1]) * dt * 10 + 0.05 * shocks[k]
    wind = np.abs(wind)
    wind_dir = (rng.uniform(0, 360) + np.cumsum(rng.normal(scale=0.2, size=n))) % 360.0

    angular = np.stack([np.gradient(roll, dt), np.gradient(pitch, dt), yaw_rate], axis=1)

    def noise(key, size):
        std = float(cfg.noise_std.get(key, 0.0))
        return rng.normal(scale=std, size=size) if std > 0 else np.zeros(size)

    east = east + noise("position_xy", n)
    north = north + noise("position_xy", n)
    up = up + noise("position_z", n)
    att = noise("orientation", (n, 3))
    quat = quaternion_from_euler(roll + att[:, 0], pitch + att[:, 1], yaw + att[:, 2])

    data = np.zeros((n, len(COLUMNS)))
    data[:, COL["timestamp"]] = t
    data[:, COL["wind_speed"]] = np.abs(wind + noise("wind_speed", n))
    data[:, COL["wind_angle"]] = (wind_dir + noise("wind_angle", n)) % 360.0
    data[:, COL["battery_voltage"]] = voltage + noise("battery_voltage", n)
    data[:, COL["battery_current"]] = current + noise("battery_current", n)
    if cfg.coord_mode == "geodetic":
        lon, lat = local_to_geodetic(east, north, cfg.origin_lat, cfg.origin_lon)
        data[:, COL["position_x"]] = lon
        data[:, COL["position_y"]] = lat
    else:
        data[:, COL["position_x"]] = east
        data[:, COL["position_y"]] = north
    data[:, COL["position_z"]] = cfg.ground_elevation_m + up
    data[:, [COL[c] for c in ("orientation_x", "orientation_y", "orientation_z", "orientation_w")]] = quat
    data[:, COL["velocity_x"]] = vx + noise("velocity", n)
    data[:, COL["velocity_y"]] = vy + noise("velocity", n)
    data[:, COL["velocity_z"]] = vz + noise("velocity", n)
    data[:, [COL["angular_x"], COL["angular_y"], COL["angular_z"]]] = angular + noise("angular", (n, 3))
    data[:, COL["linear_acceleration_x"]] = ax + noise("acceleration", n)
    data[:, COL["linear_acceleration_y"]] = ay + noise("acceleration", n)
    data[:, COL["linear_acceleration_z"]] = az + noise("acceleration", n)
    data[:, COL["payload"]] = cfg.payload_g

    return FlightSeries(
        flight_id or f"synth_{cfg.pattern}_{cfg.seed}",
        data,
        sample_rate_hz=cfg.sample_rate_hz,
        coord_mode=cfg.coord_mode,
        meta={"schedule": segments, "origin": (cfg.origin_lat, cfg.origin_lon)},
    )
