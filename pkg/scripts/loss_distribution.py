"""Loss distribution of the samples each strategy selects, at fixed training stages.

Trains Random, Online Batch and Recency Bias with the same seed and writes
one histogram row per (stage, strategy, bin), plus the mean selected loss.

    python3 scripts/loss_distribution.py --dataset mnist:10000 --seed 0 --out runs/loss_dist
"""

import argparse
import csv
from dataclasses import replace
from pathlib import Path

from batchsel.cli import load_dataset
from batchsel.trainer import HIST_EDGES, TrainConfig, loss_distribution_probe, run

STRATEGIES = ("random", "online-batch", "recency-bias")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--dataset", default="mnist:10000")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--lr", type=float, default=0.01)
    ap.add_argument("--stages", default="0.3,0.7")
    ap.add_argument("--out", type=Path, default=Path("runs/loss_dist"))
    args = ap.parse_args()

    stages = tuple(float(s) for s in args.stages.split(","))
    train, test = load_dataset(args.dataset)
    base = TrainConfig(epochs=args.epochs, base_lr=args.lr, probe_stages=stages).with_seed(args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / f"loss_hist_seed{args.seed}.csv"
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["stage", "strategy", "bin_lo", "bin_hi", "count"])
        for strategy in STRATEGIES:
            result = run(replace(base, strategy=strategy), train, test)
            for stage in stages:
                h = loss_distribution_probe(result, stage)
                for lo, hi, c in zip(HIST_EDGES[:-1], HIST_EDGES[1:], h.counts):
                    w.writerow([stage, strategy, repr(float(lo)), repr(float(hi)), int(c)])
                print(f"{strategy:>13} stage {stage:.1f}: mean selected loss {h.mean:.4f}")
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
