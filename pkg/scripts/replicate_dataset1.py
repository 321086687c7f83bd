"""Reduced-scale replication on the public real-flight dataset.

    python scripts/replicate_dataset1.py /path/to/flights --flights 20 --out runs/dataset1

Reads the first ``--flights`` CSV files (sorted by path), annotates them,
trains the full-size network and writes the report files to ``--out``.
"""

import argparse
import glob
import json
import os

from uavmtl.model import ArchConfig, build_model
from uavmtl.optim import TrainConfig, save_checkpoint, train
from uavmtl.pipeline import SplitSpec
from uavmtl.telemetry import parse_flight_csv
from uavmtl.workflow import ensure_labels, evaluate_model, prepare_data


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("data_dir")
    ap.add_argument("--out", default="runs/dataset1")
    ap.add_argument("--flights", type=int, default=20)
    ap.add_argument("--coord-mode", choices=("geodetic", "local"), default="geodetic")
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--patience", type=int, default=10)
    ap.add_argument("--lr", type=float, default=1e-4)
    ap.add_argument("--batch-size", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    paths = sorted(glob.glob(os.path.join(args.data_dir, "**", "*.csv"), recursive=True))[: args.flights]
    if not paths:
        raise SystemExit(f"no csv files under {args.data_dir}")
    flights = ensure_labels([parse_flight_csv(p, coord_mode=args.coord_mode) for p in paths])
    data = prepare_data(flights, 30, 30, SplitSpec(seed=args.seed))
    cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, max_epochs=args.epochs,
                      early_stop_patience=args.patience, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    model, history = train(build_model(ArchConfig(n_features=data.train.n_features), args.seed),
                           data.train, data.val, cfg, log_path=os.path.join(args.out, "history.jsonl"))
    report = evaluate_model(model, data.scaler, data.test, args.coord_mode)
    report.write(args.out)
    save_checkpoint(model, data.scaler, cfg, os.path.join(args.out, "model.ckpt"))
    s = report.summary()
    print(json.dumps({"flights": len(paths), "best_epoch": history.best_epoch, "mean_error_m": s["mean_error_m"],
                      "p90_error_m": s["p90_error_m"], "micro_f1": s["averages"]["micro_f1"],
                      "macro_f1": s["averages"]["macro_f1"]}, indent=2))


if __name__ == "__main__":
    main()
