"""Experiment runner: ``batchsel {run,ablation,grid}``.

Settings come from an optional flat ``key = value`` config file (``--config``)
and command-line flags; flags win.  Every run writes a metrics CSV; each
subcommand adds a summary table.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .data import Dataset, load_mnist, subset, synth_blobs
from .selection import STRATEGIES
from .trainer import HIST_EDGES, ConfigError, RunResult, TrainConfig, batches_per_epoch, run

log = logging.getLogger("batchsel")

METRICS_HEADER = ["epoch", "iteration", "train_loss", "test_error", "elapsed_sec", "best_test_error"]
HIST_HEADER = ["stage", "strategy", "bin_lo", "bin_hi", "count"]
SUMMARY_HEADER = ["strategy", "runs", "best_test_error_mean", "best_test_error_stderr",
                  "final_train_loss_mean", "final_train_loss_stderr"]
ABLATION_HEADER = ["dataset", "strategy_id", "label", "s_e0", "pressure_mode", "runs",
                   "train_loss_mean", "train_loss_stderr", "best_test_error_mean", "best_test_error_stderr"]
GRID_HEADER = ["strategy", "s_e0", "window", "warmup", "runs", "best_test_error_mean", "best_test_error_stderr"]

# the four selection-pressure strategies compared in the ablation
ABLATION_STRATEGIES = [
    (1, "s_e=10", 10.0, "constant"),
    (2, "s_e=100", 100.0, "constant"),
    (3, "s_e=10->1", 10.0, "decay"),
    (4, "s_e=100->1", 100.0, "decay"),
]
GRID_PRESSURES = (1.0, 10.0, 100.0, 1000.0)
GRID_WINDOWS = (5, 10, 15)

# named synthetic presets: keyword arguments for synth_blobs
SYNTH_PRESETS = {
    "blobs": dict(num_per_class=250, k=4, d=2, spread=0.3, seed=0, center_scale=3.0),
    # 10 overlapping classes, three sub-clusters each
    "blobs-hard": dict(num_per_class=1000, k=10, d=10, spread=0.8, seed=0, center_scale=1.0,
                       clusters_per_class=3),
}


@dataclass
class ExperimentConfig:
    dataset: str = "blobs"
    strategies: tuple[str, ...] = STRATEGIES
    train: TrainConfig = field(default_factory=TrainConfig)
    out: Path = Path("runs")
    repeat: int = 3
    seed: int = 0
    jobs: int = 1
    dump_tables: bool = False
    clock: str = "none"

    def seeds(self) -> list[int]:
        return [self.seed + r for r in range(self.repeat)]


# ---------------------------------------------------------------------------
# datasets


def _parse_kv(text: str) -> dict[str, str]:
    out = {}
    for part in filter(None, text.split(",")):
        k, _, v = part.partition("=")
        out[k.strip()] = v.strip()
    return out


@lru_cache(maxsize=4)
def load_dataset(spec: str) -> tuple[Dataset, Dataset]:
    """Resolve a dataset spec string.

    ``mnist`` / ``mnist:N`` (stratified N-sample training subset, full test
    split), a synthetic preset name (``blobs``, ``blobs-hard``), or
    ``synth:k=..,d=..,n=..,spread=..,seed=..,scale=..,m=..`` (``m`` clusters per class).
    """
    name, _, arg = spec.partition(":")
    if name == "mnist":
        train, test = load_mnist("train"), load_mnist("test")
        if arg:
            train = subset(train, int(arg), 0)
        return train, test
    if name in SYNTH_PRESETS:
        params = dict(SYNTH_PRESETS[name])
        params.update({k: type(params[k])(v) for k, v in _parse_kv(arg).items()})
        return synth_blobs(**params, name=name)
    if name == "synth":
        kv = _parse_kv(arg)
        return synth_blobs(int(kv.get("n", 250)), int(kv.get("k", 4)), int(kv.get("d", 2)),
                           float(kv.get("spread", 0.5)), int(kv.get("seed", 0)),
                           float(kv.get("scale", 1.0)), name="synth",
                           clusters_per_class=int(kv.get("m", 1)))
    raise ConfigError(f"unknown dataset {spec!r}")


# ---------------------------------------------------------------------------
# configuration


_TRAIN_FIELDS = {f.name: f for f in fields(TrainConfig)}
# flag/config-file key -> TrainConfig field
_ALIASES = {
    "batch_size": "batch_size", "epochs": "epochs", "warmup": "warmup", "window": "window",
    "pressure": "s_e0", "pressure_mode": "pressure_mode", "lr": "base_lr", "lr_mode": "lr_mode",
    "optimizer": "optimizer", "model": "model", "hidden": "hidden_dim", "epsilon": "epsilon",
    "momentum": "momentum",
}


def read_config_file(path) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        k, v = line.split("=", 1)
        values[k.strip().replace("-", "_")] = v.strip()
    return values


def _coerce(value: str, typ):
    if typ in (int, "int"):
        return int(value)
    if typ in (float, "float"):
        return float(value)
    return value


def build_config(values: dict[str, object]) -> ExperimentConfig:
    train_kwargs = {}
    exp = ExperimentConfig()
    for key, value in values.items():
        if value is None:
            continue
        if key in _ALIASES:
            fname = _ALIASES[key]
            ftype = _TRAIN_FIELDS[fname].type
            train_kwargs[fname] = _coerce(str(value), "float" if fname in ("s_e0", "base_lr", "epsilon", "momentum")
                                          else "int" if ftype == "int" else "str")
        elif key == "dataset":
            exp.dataset = str(value)
        elif key == "strategy":
            names = tuple(s.strip() for s in str(value).split(",") if s.strip())
            if names == ("all",):
                names = STRATEGIES
            for s in names:
                if s not in STRATEGIES:
                    raise ConfigError(f"unknown strategy {s!r}; choose from {', '.join(STRATEGIES)}")
            exp.strategies = names
        elif key == "out":
            exp.out = Path(str(value))
        elif key in ("repeat", "seed", "jobs"):
            setattr(exp, key, int(value))
        elif key == "dump_tables":
            exp.dump_tables = value in (True, "1", "true", "yes", "on")
        elif key == "clock":
            if value not in ("none", "wall"):
                raise ConfigError("clock must be 'none' or 'wall'")
            exp.clock = str(value)
        else:
            raise ConfigError(f"unknown setting {key!r}")
    exp.train = replace(exp.train, **train_kwargs)
    if exp.repeat < 1:
        raise ConfigError("repeat must be >= 1")
    exp.train.validate()
    return exp


# ---------------------------------------------------------------------------
# running and writing


@dataclass
class RunSpec:
    dataset: str
    config: TrainConfig
    tag: str
    table_dir: Path | None = None


def _fmt(x: float) -> str:
    return repr(float(x))


def execute(spec: RunSpec) -> RunResult:
    train, test = load_dataset(spec.dataset)
    hook = None
    if spec.table_dir is not None:
        spec.table_dir.mkdir(parents=True, exist_ok=True)

        def hook(epoch, table):
            table.dump_csv(spec.table_dir / f"table_{spec.tag}_epoch{epoch:04d}.csv")
    result = run(spec.config, train, test, table_hook=hook)
    # histories and model state are not needed by the caller; keep results light for IPC
    result.state = None
    return result


def execute_all(specs: list[RunSpec], jobs: int) -> list[RunResult]:
    if jobs <= 1 or len(specs) == 1:
        return [execute(s) for s in specs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(execute, specs))


def write_metrics(path: Path, result: RunResult, clock: str) -> None:
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in result.records:
            w.writerow([r.epoch, r.iteration, _fmt(r.train_loss), _fmt(r.test_error),
                        _fmt(r.elapsed_sec) if clock == "wall" else "", _fmt(r.best_test_error)])


def write_timing(path: Path, result: RunResult) -> None:
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "elapsed_sec"])
        for r in result.records:
            w.writerow([r.epoch, _fmt(r.elapsed_sec)])


def write_histograms(path: Path, results: list[RunResult]) -> None:
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(HIST_HEADER)
        for res in results:
            for stage in sorted(res.probes):
                counts = np.histogram(np.minimum(res.probes[stage].losses, HIST_EDGES[-1]), bins=HIST_EDGES)[0]
                for lo, hi, c in zip(HIST_EDGES[:-1], HIST_EDGES[1:], counts):
                    w.writerow([stage, res.config.strategy, _fmt(lo), _fmt(hi), int(c)])


def mean_stderr(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return float(v.mean()), 0.0
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def check_invariants(result: RunResult, n_train: int) -> list[str]:
    """Post-run sweep; returns a list of violations (empty when clean)."""
    problems = []
    cfg = result.config
    per_epoch = batches_per_epoch(n_train, cfg.batch_size)
    best = [r.best_test_error for r in result.records]
    if any(b2 > b1 for b1, b2 in zip(best, best[1:])):
        problems.append("best test error increased")
    for r in result.records:
        if r.iteration != r.epoch * per_epoch:
            problems.append(f"epoch {r.epoch}: {r.iteration} iterations, expected {r.epoch * per_epoch}")
    for t in result.tables:
        if not (t.min_prob > 0 and t.sum_error <= 1e-9):
            problems.append(f"epoch {t.epoch}: invalid sampling table")
    return problems


def _run_and_report(specs: list[RunSpec], exp: ExperimentConfig) -> tuple[list[RunResult], int]:
    exp.out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    results = execute_all(specs, exp.jobs)
    n_train = len(load_dataset(exp.dataset)[0])
    status = 0
    for spec, res in zip(specs, results):
        write_metrics(exp.out / f"metrics_{spec.tag}.csv", res, exp.clock)
        write_timing(exp.out / f"timing_{spec.tag}.csv", res)
        for msg in check_invariants(res, n_train):
            log.error("%s: %s", spec.tag, msg)
            status = 1
    log.info("%d runs finished in %.1fs", len(specs), time.perf_counter() - t0)
    return results, status


def cmd_run(exp: ExperimentConfig) -> int:
    specs = []
    for strategy in exp.strategies:
        for seed in exp.seeds():
            cfg = replace(exp.train, strategy=strategy).with_seed(seed)
            tag = f"{strategy}_seed{seed}"
            specs.append(RunSpec(exp.dataset, cfg, tag, exp.out / "tables" if exp.dump_tables else None))
    results, status = _run_and_report(specs, exp)
    for seed in exp.seeds():
        write_histograms(exp.out / f"loss_hist_seed{seed}.csv",
                         [r for s, r in zip(specs, results) if s.config.init_seed == seed])
    with (exp.out / "summary.csv").open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for strategy in exp.strategies:
            rs = [r for s, r in zip(specs, results) if s.config.strategy == strategy]
            be = mean_stderr([r.records[-1].best_test_error for r in rs])
            tl = mean_stderr([r.records[-1].train_loss for r in rs])
            w.writerow([strategy, len(rs), _fmt(be[0]), _fmt(be[1]), _fmt(tl[0]), _fmt(tl[1])])
            print(f"{strategy:>13}: best test error {be[0]:.2f} +- {be[1]:.2f} %")
    return status


def cmd_ablation(exp: ExperimentConfig) -> int:
    specs = []
    for sid, label, s_e0, mode in ABLATION_STRATEGIES:
        for seed in exp.seeds():
            cfg = replace(exp.train, strategy="recency-bias", s_e0=s_e0, pressure_mode=mode).with_seed(seed)
            specs.append(RunSpec(exp.dataset, cfg, f"ablation{sid}_seed{seed}"))
    results, status = _run_and_report(specs, exp)
    with (exp.out / "ablation.csv").open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(ABLATION_HEADER)
        for sid, label, s_e0, mode in ABLATION_STRATEGIES:
            rs = [r for s, r in zip(specs, results) if s.tag.startswith(f"ablation{sid}_")]
            tl = mean_stderr([r.records[-1].train_loss for r in rs])
            be = mean_stderr([r.records[-1].best_test_error for r in rs])
            w.writerow([exp.dataset, sid, label, _fmt(s_e0), mode, len(rs),
                        _fmt(tl[0]), _fmt(tl[1]), _fmt(be[0]), _fmt(be[1])])
            print(f"strategy {sid} ({label:>10}): train loss {tl[0]:.4f}  best test error {be[0]:.2f} +- {be[1]:.2f} %")
    return status


def cmd_grid(exp: ExperimentConfig) -> int:
    cells = [("random", None, exp.train.window)]
    cells += [("recency-bias", s, q) for s in GRID_PRESSURES for q in GRID_WINDOWS]
    specs = []
    for strategy, s_e0, q in cells:
        for seed in exp.seeds():
            cfg = replace(exp.train, strategy=strategy, window=q, warmup=max(exp.train.warmup, q))
            if s_e0 is not None:
                cfg = replace(cfg, s_e0=s_e0)
            tag = "grid_random" if s_e0 is None else f"grid_se{s_e0:g}_q{q}"
            specs.append(RunSpec(exp.dataset, cfg.with_seed(seed), f"{tag}_seed{seed}"))
    results, status = _run_and_report(specs, exp)
    with (exp.out / "grid.csv").open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(GRID_HEADER)
        for strategy, s_e0, q in cells:
            tag = "grid_random" if s_e0 is None else f"grid_se{s_e0:g}_q{q}"
            rs = [r for s, r in zip(specs, results) if s.tag.rsplit("_seed", 1)[0] == tag]
            be = mean_stderr([r.records[-1].best_test_error for r in rs])
            warm = max(exp.train.warmup, q)
            w.writerow([strategy, "" if s_e0 is None else _fmt(s_e0), q, warm, len(rs), _fmt(be[0]), _fmt(be[1])])
            print(f"{tag:>20}: best test error {be[0]:.2f} +- {be[1]:.2f} %")
    return status


COMMANDS = {"run": cmd_run, "ablation": cmd_ablation, "grid": cmd_grid}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="batchsel", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=Path, help="flat key = value settings file")
    parser.add_argument("--dataset", help="mnist, mnist:N, blobs, blobs-hard, synth:k=..,d=..")
    parser.add_argument("--strategy", help="comma-separated strategies or 'all'")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--warmup", type=int)
    parser.add_argument("--window", type=int)
    parser.add_argument("--pressure", type=float, help="initial selection pressure s_e0")
    parser.add_argument("--pressure-mode", choices=["constant", "decay"])
    parser.add_argument("--lr", type=float)
    parser.add_argument("--lr-mode", choices=["step", "constant"])
    parser.add_argument("--optimizer", choices=["sgd", "momentum"])
    parser.add_argument("--model", choices=["softmax-regression", "mlp-1hidden"])
    parser.add_argument("--hidden", type=int)
    parser.add_argument("--epsilon", type=float, help="active-bias smoothing constant")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--repeat", type=int)
    parser.add_argument("--jobs", type=int)
    parser.add_argument("--out", type=Path)
    parser.add_argument("--dump-tables", action="store_true", default=None)
    parser.add_argument("--clock", choices=["none", "wall"],
                        help="fill elapsed_sec in metrics CSVs (wall) or leave it blank (none)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        values = read_config_file(args.config) if args.config else {}
        flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose") and v is not None}
        values.update(flags)
        exp = build_config(values)
        return COMMANDS[args.command](exp)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"batchsel: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
