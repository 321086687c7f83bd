"""End-to-end helpers: annotated flights -> scaled splits -> trained model -> report."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import model as M
from .evaluation import EvalReport, build_report
from .labeler import LabelThresholds, annotate
from .optim import TrainConfig, TrainHistory, train
from .pipeline import (
    ScalerParams,
    SplitSpec,
    WindowedDataset,
    fit_scaler,
    scale_dataset,
    slide_windows,
    split_dataset,
    unscale_positions,
)
from .synth import SynthConfig, generate_synthetic_flight
from .telemetry import FlightSeries


@dataclass
class PreparedData:
    train: WindowedDataset
    val: WindowedDataset
    test: WindowedDataset
    scaler: ScalerParams


def ensure_labels(flights: Sequence[FlightSeries], th: LabelThresholds = LabelThresholds()) -> list[FlightSeries]:
    return [f if f.labels is not None else annotate(f, th) for f in flights]


def prepare_data(flights, ws: int, hs: int, split: SplitSpec = SplitSpec()) -> PreparedData:
    """Window, split, then fit the scaler on the training split only."""
    ds = slide_windows(flights, ws, hs)
    tr, va, te = split_dataset(ds, split)
    scaler = fit_scaler(tr.inputs, ds.feature_names)
    return PreparedData(scale_dataset(tr, scaler), scale_dataset(va, scaler), scale_dataset(te, scaler), scaler)


def predict_original_units(m: M.ModelParams, scaler: ScalerParams, inputs_scaled, batch_size: int = 512):
    traj, probs = M.predict(m, inputs_scaled, batch_size)
    return unscale_positions(traj.astype(np.float64), scaler), probs.astype(np.float64)


def evaluate_model(m: M.ModelParams, scaler: ScalerParams, ds: WindowedDataset,
                   coord_mode: str = "geodetic", sample_rate_hz: float = 10.0) -> EvalReport:
    traj, probs = predict_original_units(m, scaler, ds.inputs)
    truth = unscale_positions(ds.traj_targets, scaler) if ds.scaled else ds.traj_targets
    return build_report(traj, truth, probs, ds.state_targets, state_counts=ds.state_counts,
                        coord_mode=coord_mode, sample_rate_hz=sample_rate_hz)


def desk_scale_configs(n_flights: int = 12, duration_s: float = 120.0, seed: int = 0) -> list[SynthConfig]:
    """Varied triangular missions (altitude, speed, payload, wind) for desk-scale runs."""
    rng = np.random.default_rng([seed, 3])
    cfgs = []
    for k in range(n_flights):
        cfgs.append(SynthConfig(
            pattern="triangular",
            duration_s=duration_s,
            altitude_m=float(rng.choice([15.0, 20.0, 25.0])),
            speed_mps=float(rng.uniform(4.0, 7.0)),
            payload_g=float(rng.choice([0.0, 250.0, 500.0])),
            wind_mean_mps=float(rng.uniform(1.0, 6.0)),
            seed=seed * 1000 + k,
        ))
    return cfgs


@dataclass
class RunResult:
    model: M.ModelParams
    history: TrainHistory
    data: PreparedData
    report: EvalReport


def run_synthetic_experiment(
    n_flights: int = 12,
    duration_s: float = 120.0,
    ws: int = 30,
    hs: int = 30,
    arch_overrides: Optional[dict] = None,
    train_cfg: TrainConfig = TrainConfig(),
    split: SplitSpec = SplitSpec(),
    seed: int = 0,
    log_path: Optional[str] = None,
) -> RunResult:
    flights = [generate_synthetic_flight(c, f"flight_{i:03d}")
               for i, c in enumerate(desk_scale_configs(n_flights, duration_s, seed))]
    flights = ensure_labels(flights)
    data = prepare_data(flights, ws, hs, split)
    arch = M.ArchConfig(ws=ws, hs=hs, n_features=data.train.n_features, **(arch_overrides or {}))
    m = M.build_model(arch, train_cfg.seed)
    best, history = train(m, data.train, data.val, train_cfg, log_path=log_path)
    report = evaluate_model(best, data.scaler, data.test, flights[0].coord_mode, flights[0].sample_rate_hz)
    return RunResult(best, history, data, report)
