"""Command-line entry point: ``uavmtl {synth,annotate,train,evaluate,predict}``.

Exit codes: 0 success, 1 unexpected failure, 2 invalid configuration or usage,
3 unusable input data, 4 checkpoint problems.  Failures print one line to
stderr: ``error: <ErrorType>: <message>``.  ``UAVMTL_LOG_LEVEL`` sets the log
verbosity (default WARNING).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import glob
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import errors as E
from . import model as M
from .evaluation import build_report
from .labeler import STATE_NAMES, LabelThresholds, annotate
from .optim import TrainConfig, load_checkpoint, save_checkpoint, train
from .pipeline import (
    POSITION_FEATURE_IDX,
    SplitSpec,
    apply_scaler,
    fit_scaler,
    input_windows,
    scale_dataset,
    slide_windows,
    split_dataset,
)
from .synth import PATTERNS, SynthConfig, generate_synthetic_flight
from .telemetry import COORD_MODES, SCHEMAS, parse_flight_csv, write_flight_csv
from .workflow import desk_scale_configs, predict_original_units

log = logging.getLogger(__name__)

EXIT_OK, EXIT_UNEXPECTED, EXIT_CONFIG, EXIT_DATA, EXIT_CHECKPOINT = 0, 1, 2, 3, 4

DATA_ERRORS = (
    E.MissingColumn, E.UnparseableRow, E.EmptyFile, E.ZeroNormQuaternion, E.SeriesTooShort,
    E.NoUsableFlights, E.EmptyTrainingSet, E.DegenerateSplit, E.EmptyDataset, E.EmptyInput, E.IoFailure,
)
CHECKPOINT_ERRORS = (E.CorruptCheckpoint, E.CheckpointMismatch)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    data_dir: Optional[str] = None
    checkpoint: Optional[str] = None
    report_dir: Optional[str] = None
    schema: str = "dataset1"
    coord_mode: str = "geodetic"
    sample_rate_hz: float = 10.0
    ws: int = 30
    hs: int = 30
    thresholds: LabelThresholds = field(default_factory=LabelThresholds)
    split: SplitSpec = field(default_factory=SplitSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    arch: dict = field(default_factory=dict)  # ArchConfig overrides; WS, HS and F come from the data

    def __post_init__(self):
        if self.schema not in SCHEMAS:
            raise ValueError(f"schema must be one of {SCHEMAS}")
        if self.coord_mode not in COORD_MODES:
            raise ValueError(f"coord_mode must be one of {COORD_MODES}")
        if self.ws < 1 or self.hs < 1:
            raise ValueError("ws and hs must be >= 1")
        bad = set(self.arch) & {"ws", "hs", "n_features"}
        if bad:
            raise ValueError(f"arch must not set {sorted(bad)}; use ws/hs at the top level")

    def arch_config(self, n_features: int) -> M.ArchConfig:
        kw = dict(self.arch)
        if kw.get("position_skip") is True:
            kw["position_skip"] = POSITION_FEATURE_IDX
        elif kw.get("position_skip") is False:
            kw["position_skip"] = None
        return M.ArchConfig(ws=self.ws, hs=self.hs, n_features=n_features, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {"thresholds": LabelThresholds, "split": SplitSpec, "train": TrainConfig}


def _coerce(raw: dict) -> RunConfig:
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise E.ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
    kw = dict(raw)
    try:
        for key, cls in _SECTIONS.items():
            if key in kw and isinstance(kw[key], dict):
                kw[key] = cls(**kw[key])
        cfg = RunConfig(**kw)
        cfg.arch_config(21)  # validate overrides early
    except (TypeError, ValueError) as e:
        raise E.ConfigInvalid(str(e)) from e
    return cfg


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_run_config(path: Optional[str], overrides: list[str] = ()) -> RunConfig:
    """Read a JSON config file, then apply ``section.key=value`` overrides."""
    raw: dict = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as e:
            raise E.ConfigInvalid(f"cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise E.ConfigInvalid(f"config {path} is not valid JSON: {e}") from e
        if not isinstance(raw, dict):
            raise E.ConfigInvalid("config file must hold a JSON object")
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise E.ConfigInvalid(f"override {item!r} is not key=value")
        node = raw
        *parents, leaf = key.split(".")
        for part in parents:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise E.ConfigInvalid(f"override {key!r} descends into a non-section")
        node[leaf] = _parse_value(value)
    return _coerce(raw)


# ---------------------------------------------------------------------------
# data access


def _csv_paths(path: str) -> list[str]:
    if os.path.isdir(path):
        paths = sorted(glob.glob(os.path.join(path, "*.csv")))
        if not paths:
            raise E.NoUsableFlights(f"no .csv files in {path}")
        return paths
    if os.path.isfile(path):
        return [path]
    raise E.IoFailure(f"no such file or directory: {path}")


def read_flights(path: str, cfg: RunConfig):
    flights = []
    for p in _csv_paths(path):
        try:
            flights.append(parse_flight_csv(p, cfg.schema, coord_mode=cfg.coord_mode,
                                            sample_rate_hz=cfg.sample_rate_hz))
        except OSError as e:
            raise E.IoFailure(f"cannot read {p}: {e}") from e
    return flights


def _labelled(flights, th: LabelThresholds):
    return [f if f.labels is not None else annotate(f, th) for f in flights]


def _require(value, what: str):
    if not value:
        raise E.ConfigInvalid(f"{what} is required (flag or config file)")
    return value


def _load(path):
    try:
        return load_checkpoint(path)
    except E.IoFailure as e:
        e.exit_code = EXIT_CHECKPOINT
        raise


def _check_features(arch: M.ArchConfig, found: int):
    if arch.n_features != found:
        raise E.CheckpointMismatch(f"checkpoint expects F = {arch.n_features} features, data has F = {found}")


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    try:
        if args.pattern == "desk":
            cfgs = desk_scale_configs(args.count, args.duration, args.seed)
        else:
            cfgs = [SynthConfig(pattern=args.pattern, duration_s=args.duration, seed=args.seed * 1000 + k)
                    for k in range(args.count)]
    except ValueError as e:
        raise E.ConfigInvalid(str(e)) from e
    for k, c in enumerate(cfgs):
        try:
            c = dataclasses.replace(c, coord_mode=args.coord_mode)
            series = generate_synthetic_flight(c, f"flight_{k:03d}")
        except ValueError as e:
            raise E.ConfigInvalid(str(e)) from e
        write_flight_csv(series, os.path.join(args.out, f"flight_{k:03d}.csv"), args.schema)
    log.info("wrote %d flights to %s", len(cfgs), args.out)
    return EXIT_OK


def cmd_annotate(args) -> int:
    cfg = load_run_config(args.config, args.set)
    th = cfg.thresholds
    paths = _csv_paths(args.input)
    multi = os.path.isdir(args.input)
    if multi:
        os.makedirs(args.output, exist_ok=True)
    for p in paths:
        series = parse_flight_csv(p, cfg.schema, coord_mode=cfg.coord_mode, sample_rate_hz=cfg.sample_rate_hz)
        out = os.path.join(args.output, os.path.basename(p)) if multi else args.output
        write_flight_csv(annotate(series, th), out, "dataset2")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.set)
    data_dir = _require(args.data or cfg.data_dir, "data directory")
    ckpt = _require(args.checkpoint or cfg.checkpoint, "checkpoint path")
    cfg = dataclasses.replace(cfg, data_dir=data_dir, checkpoint=ckpt)
    flights = _labelled(read_flights(data_dir, cfg), cfg.thresholds)

    ds = slide_windows(flights, cfg.ws, cfg.hs)
    tr, va, te = split_dataset(ds, cfg.split)
    scaler = fit_scaler(tr.inputs, ds.feature_names)
    tr, va = scale_dataset(tr, scaler), scale_dataset(va, scaler)

    try:
        arch = cfg.arch_config(tr.n_features)
    except ValueError as e:
        raise E.ConfigInvalid(str(e)) from e
    m = M.build_model(arch, cfg.train.seed)
    history_path = args.history or ckpt + ".history.jsonl"
    best, history = train(m, tr, va, cfg.train, log_path=history_path)
    meta = {
        "run_config": cfg.to_dict(),
        "splits": {"train": tr.flights(), "val": va.flights(), "test": te.flights()},
        "best_epoch": history.best_epoch,
        "best_val_total": history.best_val_total,
        "stopped_early": history.stopped_early,
    }
    save_checkpoint(best, scaler, cfg.train, ckpt, meta=meta)
    log.info("best epoch %d, val loss %.6f; checkpoint %s", history.best_epoch, history.best_val_total, ckpt)
    return EXIT_OK


def _checkpoint_run(ck) -> RunConfig:
    raw = ck.meta.get("run_config")
    if raw is None:
        return RunConfig(ws=ck.model.arch.ws, hs=ck.model.arch.hs)
    return _coerce(raw)


def cmd_evaluate(args) -> int:
    ck = _load(_require(args.checkpoint, "checkpoint path"))
    cfg = _checkpoint_run(ck)
    arch = ck.model.arch
    flights = read_flights(_require(args.data or cfg.data_dir, "data directory"), cfg)
    _check_features(arch, flights[0].features.shape[1])
    if args.split != "all":
        wanted = ck.meta.get("splits", {}).get(args.split)
        if wanted is None:
            raise E.ConfigInvalid(f"checkpoint records no {args.split!r} split; use --split all")
        flights = [f for f in flights if f.flight_id in set(wanted)]
        if not flights:
            raise E.NoUsableFlights(f"none of the {args.split} flights {wanted} are in the data directory")
    flights = _labelled(flights, cfg.thresholds)
    raw = slide_windows(flights, arch.ws, arch.hs)
    ds = scale_dataset(raw, ck.scaler)

    traj, probs = predict_original_units(ck.model, ck.scaler, ds.inputs)
    report = build_report(traj, raw.traj_targets, probs, ds.state_targets, state_counts=ds.state_counts,
                          coord_mode=cfg.coord_mode, sample_rate_hz=cfg.sample_rate_hz)
    report.write(_require(args.report or cfg.report_dir, "report directory"))
    summary = report.summary()
    print(json.dumps({"mean_error_m": summary["mean_error_m"], "p90_error_m": summary["p90_error_m"],
                      "micro_f1": summary["averages"]["micro_f1"], "macro_f1": summary["averages"]["macro_f1"]},
                     sort_keys=True))
    return EXIT_OK


def cmd_predict(args) -> int:
    ck = _load(_require(args.checkpoint, "checkpoint path"))
    cfg = _checkpoint_run(ck)
    arch = ck.model.arch
    series = read_flights(args.input, cfg)
    if len(series) != 1:
        raise E.ConfigInvalid("predict takes a single flight csv")
    series = series[0]
    _check_features(arch, series.features.shape[1])
    x = input_windows(series, arch.ws, arch.hs)
    if len(x) == 0:
        raise E.SeriesTooShort(f"flight has {len(series)} records, needs at least WS + HS = {arch.ws + arch.hs}")
    traj, probs = predict_original_units(ck.model, ck.scaler, apply_scaler(x, ck.scaler))

    header = ["flight_id", "window_start", "timestamp", *(f"p_{n}" for n in STATE_NAMES), "predicted_state"]
    for k in range(1, arch.hs + 1):
        header += [f"x_{k}", f"y_{k}", f"z_{k}"]
    stream = open(args.output, "w", newline="", encoding="utf-8") if args.output != "-" else sys.stdout
    try:
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(header)
        for i in range(len(x)):
            row = [series.flight_id, i, repr(float(series.timestamps[i + arch.ws - 1]))]
            row += [repr(float(v)) for v in probs[i]]
            row.append(STATE_NAMES[int(np.argmax(probs[i]))])
            row += [repr(float(v)) for v in traj[i].ravel()]
            w.writerow(row)
    finally:
        if stream is not sys.stdout:
            stream.close()
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="uavmtl", description="Drone state identification and trajectory prediction.")
    sub = ap.add_subparsers(dest="command", required=True)

    def config_flags(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. train.learning_rate=1e-3 (repeatable)")

    p = sub.add_parser("synth", help="generate synthetic flights as CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=12)
    p.add_argument("--duration", type=float, default=120.0, help="seconds per flight")
    p.add_argument("--pattern", choices=("desk", *PATTERNS), default="desk",
                   help="'desk' varies altitude, speed, payload and wind over triangular missions")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coord-mode", choices=COORD_MODES, default="geodetic")
    p.add_argument("--schema", choices=SCHEMAS, default="dataset1")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("annotate", help="label every record with its flight state")
    p.add_argument("input", help="flight csv or directory of csvs")
    p.add_argument("-o", "--output", required=True, help="output csv (or directory when input is one)")
    config_flags(p)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--data", help="directory of flight csvs")
    p.add_argument("--checkpoint", help="output checkpoint path")
    p.add_argument("--history", help="per-epoch JSONL log (default: <checkpoint>.history.jsonl)")
    config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint and write report files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="directory of flight csvs (default: the training data dir)")
    p.add_argument("--report", help="output directory for report files")
    p.add_argument("--split", choices=("test", "val", "train", "all"), default="test",
                   help="which recorded split to score (default: test)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="per-window states and horizon trajectories for one flight")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="flight csv")
    p.add_argument("-o", "--output", default="-", help="output csv (default: stdout)")
    p.set_defaults(func=cmd_predict)
    return ap


def _exit_code(exc: BaseException) -> int:
    if getattr(exc, "exit_code", None) is not None:
        return exc.exit_code
    if isinstance(exc, E.ConfigInvalid):
        return EXIT_CONFIG
    if isinstance(exc, CHECKPOINT_ERRORS):
        return EXIT_CHECKPOINT
    if isinstance(exc, DATA_ERRORS):
        return EXIT_DATA
    return EXIT_UNEXPECTED


def _configure_logging() -> None:
    level = os.environ.get("UAVMTL_LOG_LEVEL", "WARNING").upper()
    root = logging.getLogger("uavmtl")
    for h in list(root.handlers):
        if getattr(h, "_uavmtl", False):
            root.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    handler._uavmtl = True
    root.addHandler(handler)
    root.setLevel(getattr(logging, level, logging.WARNING))


def main(argv: Optional[list[str]] = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # one machine-parsable line, no traceback
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
