"""Desk-scale reproduction on synthetic flights.

    python scripts/run_synthetic_reproduction.py --out runs/desk

Generates seeded flights, annotates them, trains the small network and writes
the evaluation report files plus the per-epoch history to ``--out``.
"""

import argparse
import json
import os
import time

from uavmtl.model import LossWeights
from uavmtl.optim import TrainConfig, save_checkpoint
from uavmtl.pipeline import POSITION_FEATURE_IDX, SplitSpec
from uavmtl.workflow import run_synthetic_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--flights", type=int, default=12)
    ap.add_argument("--duration", type=float, default=120.0)
    ap.add_argument("--ws", type=int, default=30)
    ap.add_argument("--hs", type=int, default=30)
    ap.add_argument("--shared-units", type=int, default=32)
    ap.add_argument("--second-units", type=int, default=16)
    ap.add_argument("--no-position-skip", action="store_true", help="predict absolute positions")
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--patience", type=int, default=30)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--batch-size", type=int, default=64)
    ap.add_argument("--w-traj", type=float, default=1.0)
    ap.add_argument("--w-cls", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    arch = dict(shared_units=args.shared_units, second_units=args.second_units,
                position_skip=None if args.no_position_skip else POSITION_FEATURE_IDX)
    cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, max_epochs=args.epochs,
                      early_stop_patience=args.patience, loss_weights=LossWeights(args.w_traj, args.w_cls),
                      seed=args.seed)
    t0 = time.perf_counter()
    res = run_synthetic_experiment(args.flights, args.duration, args.ws, args.hs, arch, cfg,
                                   SplitSpec(seed=args.seed), seed=args.seed,
                                   log_path=os.path.join(args.out, "history.jsonl"))
    elapsed = time.perf_counter() - t0
    res.report.write(args.out)
    save_checkpoint(res.model, res.data.scaler, cfg, os.path.join(args.out, "model.ckpt"),
                    meta={"best_epoch": res.history.best_epoch})

    s = res.report.summary()
    print(json.dumps({
        "seconds": round(elapsed, 1),
        "best_epoch": res.history.best_epoch,
        "test_flights": sorted(set(res.data.test.flight_ids)),
        "mean_error_m": s["mean_error_m"],
        "p90_error_m": s["p90_error_m"],
        "micro_f1": s["averages"]["micro_f1"],
        "macro_f1": s["averages"]["macro_f1"],
    }, indent=2))


if __name__ == "__main__":
    main()
