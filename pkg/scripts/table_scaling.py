"""Time one recency-bias table build (uncertainty + quantization + normalization) versus N.

Prints the per-size minimum over repeats and the least-squares slope of
log(time) against log(N); a slope near 1 means linear cost.
"""

import argparse
import time

import numpy as np

from batchsel.history import HistoryBank
from batchsel.selection import recency_bias_table


def build_time(n: int, q: int, k: int, repeats: int) -> float:
    rng = np.random.default_rng(0)
    bank = HistoryBank(n, q, k)
    for _ in range(q):
        bank.record_batch(np.arange(n), rng.integers(0, k, size=n))
    recency_bias_table(bank, 50.0)
    best = np.inf
    for _ in range(repeats):
        t = time.perf_counter()
        recency_bias_table(bank, 50.0)
        best = min(best, time.perf_counter() - t)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="10000,100000,1000000")
    ap.add_argument("--window", type=int, default=10)
    ap.add_argument("--classes", type=int, default=10)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    sizes = [int(s) for s in args.sizes.split(",")]
    times = []
    for n in sizes:
        times.append(build_time(n, args.window, args.classes, args.repeats))
        print(f"N={n:>9}: {times[-1] * 1e3:8.2f} ms")
    slope = np.polyfit(np.log(sizes), np.log(times), 1)[0]
    print(f"log-log slope: {slope:.3f}")


if __name__ == "__main__":
    main()
