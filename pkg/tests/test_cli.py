import csv
import math

import pytest

from batchsel.cli import (
    ABLATION_HEADER,
    GRID_HEADER,
    METRICS_HEADER,
    SUMMARY_HEADER,
    build_config,
    main,
    mean_stderr,
    read_config_file,
)
from batchsel.trainer import ConfigError

FAST = ["--dataset", "synth:k=3,d=2,n=40,spread=0.8", "--model", "softmax-regression",
        "--batch-size", "8", "--epochs", "8", "--warmup", "3", "--window", "3", "--lr", "0.05"]


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_run_writes_twelve_metrics_files_and_summary(tmp_path):
    assert main(["run", *FAST, "--out", str(tmp_path)]) == 0
    metrics = sorted(tmp_path.glob("metrics_*.csv"))
    assert len(metrics) == 12
    assert (tmp_path / "summary.csv").exists()
    for m in metrics:
        rows = read_rows(m)
        assert rows[0] == METRICS_HEADER
        assert len(rows) == 9
        assert all(r[4] == "" for r in rows[1:])  # no wall clock by default
    summary = read_rows(tmp_path / "summary.csv")
    assert summary[0] == SUMMARY_HEADER
    assert [r[0] for r in summary[1:]] == ["random", "online-batch", "active-bias", "recency-bias"]
    assert all(r[1] == "3" for r in summary[1:])
    assert read_rows(tmp_path / "loss_hist_seed0.csv")[0] == ["stage", "strategy", "bin_lo", "bin_hi", "count"]


def test_summary_stderr_is_sample_standard_error(tmp_path):
    main(["run", *FAST, "--strategy", "random", "--out", str(tmp_path)])
    best = [float(read_rows(tmp_path / f"metrics_random_seed{s}.csv")[-1][5]) for s in range(3)]
    row = read_rows(tmp_path / "summary.csv")[1]
    m = sum(best) / 3
    se = math.sqrt(sum((b - m) ** 2 for b in best) / 2) / math.sqrt(3)
    assert float(row[2]) == pytest.approx(m, abs=1e-12)
    assert float(row[3]) == pytest.approx(se, abs=1e-12)


def test_rerun_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["run", *FAST, "--repeat", "2", "--out", str(out)]) == 0
    names = sorted(p.name for p in a.glob("*.csv") if not p.name.startswith("timing_"))
    assert names == sorted(p.name for p in b.glob("*.csv") if not p.name.startswith("timing_"))
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_parallel_jobs_match_serial(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", *FAST, "--repeat", "1", "--out", str(a)])
    main(["run", *FAST, "--repeat", "1", "--jobs", "2", "--out", str(b)])
    for p in a.glob("metrics_*.csv"):
        assert p.read_bytes() == (b / p.name).read_bytes()


def test_wall_clock_fills_elapsed(tmp_path):
    main(["run", *FAST, "--strategy", "random", "--repeat", "1", "--clock", "wall", "--out", str(tmp_path)])
    rows = read_rows(tmp_path / "metrics_random_seed0.csv")
    assert all(float(r[4]) >= 0 for r in rows[1:])


def test_ablation_has_four_rows(tmp_path):
    assert main(["ablation", *FAST, "--repeat", "2", "--out", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "ablation.csv")
    assert rows[0] == ABLATION_HEADER
    assert [(r[1], r[3], r[4]) for r in rows[1:]] == [
        ("1", "10.0", "constant"), ("2", "100.0", "constant"), ("3", "10.0", "decay"), ("4", "100.0", "decay")]


def test_grid_cells(tmp_path):
    argv = ["grid", *FAST, "--epochs", "17", "--warmup", "10", "--window", "10", "--repeat", "1", "--out", str(tmp_path)]
    assert main(argv) == 0
    rows = read_rows(tmp_path / "grid.csv")
    assert rows[0] == GRID_HEADER
    cells = [(r[0], r[1], r[2]) for r in rows[1:]]
    assert len(cells) == 13 and cells[0][0] == "random"
    assert ("recency-bias", "100.0", "10") in cells
    assert all(int(r[3]) == max(10, int(r[2])) for r in rows[1:])
    assert len(list(tmp_path.glob("metrics_grid_*.csv"))) == 13
    # unit pressure selects uniformly, exactly like the random baseline
    unit = read_rows(tmp_path / "metrics_grid_se1_q10_seed0.csv")
    base = read_rows(tmp_path / "metrics_grid_random_seed0.csv")
    assert unit == base


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("# experiment\nepochs = 5\nlr = 0.2\nstrategy = random, recency-bias\nrepeat = 2\n")
    values = read_config_file(cfg)
    exp = build_config({**values, "epochs": 7})
    assert exp.train.epochs == 7 and exp.train.base_lr == 0.2
    assert exp.strategies == ("random", "recency-bias") and exp.repeat == 2


def test_config_errors_exit_nonzero(tmp_path, capsys):
    assert main(["run", "--strategy", "bogus", "--out", str(tmp_path)]) == 2
    assert "unknown strategy" in capsys.readouterr().err
    assert main(["run", *FAST, "--warmup", "2", "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("epochs 5\n")
    assert main(["run", "--config", str(bad)]) == 2
    with pytest.raises(ConfigError):
        build_config({"colour": "blue"})
    with pytest.raises(ConfigError):
        build_config({"repeat": 0})


def test_unknown_dataset(tmp_path):
    assert main(["run", "--dataset", "imagenet", "--out", str(tmp_path)]) == 2


def test_mean_stderr():
    assert mean_stderr([2.0]) == (2.0, 0.0)
    m, s = mean_stderr([1.0, 2.0, 3.0])
    assert m == 2.0 and s == pytest.approx(1 / math.sqrt(3))
