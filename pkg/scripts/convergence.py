"""Best-test-error curves and iterations needed to match Random Batch.

For each seed, trains every requested strategy and reports the iteration at
which it first reaches Random's final best test error.  Curves go to
``curves_seed{s}.csv`` (iteration, strategy, test_error, best_test_error).

    python3 scripts/convergence.py --dataset mnist:10000 --seeds 0,1,2
"""

import argparse
import csv
from dataclasses import replace
from pathlib import Path

from batchsel.cli import load_dataset
from batchsel.trainer import TrainConfig, iterations_to_reach, run


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--dataset", default="mnist:10000")
    ap.add_argument("--strategies", default="random,online-batch,active-bias,recency-bias")
    ap.add_argument("--seeds", default="0")
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--lr", type=float, default=0.01)
    ap.add_argument("--out", type=Path, default=Path("runs/convergence"))
    args = ap.parse_args()

    strategies = args.strategies.split(",")
    if "random" not in strategies:
        strategies.insert(0, "random")
    train, test = load_dataset(args.dataset)
    args.out.mkdir(parents=True, exist_ok=True)
    for seed in (int(s) for s in args.seeds.split(",")):
        base = TrainConfig(epochs=args.epochs, base_lr=args.lr).with_seed(seed)
        results = {s: run(replace(base, strategy=s), train, test) for s in strategies}
        target = results["random"].records[-1].best_test_error
        ref = iterations_to_reach(results["random"].records, target)
        with (args.out / f"curves_seed{seed}.csv").open("w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["iteration", "strategy", "test_error", "best_test_error"])
            for s, res in results.items():
                for r in res.records:
                    w.writerow([r.iteration, s, repr(r.test_error), repr(r.best_test_error)])
        print(f"seed {seed}: random best {target:.2f}% first at iteration {ref}")
        for s, res in results.items():
            it = iterations_to_reach(res.records, target)
            frac = f"{it / ref:.2f}x" if it is not None else "never"
            print(f"  {s:>13}: best {res.records[-1].best_test_error:.2f}%, reaches random's best at {it} ({frac})")


if __name__ == "__main__":
    main()
