"""Training loop with warm-up and per-epoch adaptive batch selection."""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset
from .history import HistoryBank
from .model import (
    ModelSpec,
    ParameterSet,
    backward,
    forward,
    forward_backward,
    init_params,
    lr_schedule,
    momentum_step,
    sgd_step,
)
from .selection import (
    STRATEGIES,
    PressureSchedule,
    SamplingTable,
    Strategy,
    draw_batch,
    make_strategy,
    pressure_at,
)

# selected-sample loss histogram bins; losses beyond the last edge land in the last bin
HIST_EDGES = np.linspace(0.0, 10.0, 51)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    strategy: str = "recency-bias"
    batch_size: int = 128
    epochs: int = 50
    warmup: int = 10
    window: int = 10
    s_e0: float = 100.0
    pressure_mode: str = "decay"
    base_lr: float = 0.1
    lr_mode: str = "step"
    optimizer: str = "momentum"
    momentum: float = 0.9
    model: str = "mlp-1hidden"
    hidden_dim: int = 128
    init_seed: int = 0
    shuffle_seed: int = 0
    draw_seed: int = 0
    epsilon: float = 0.01
    delta: float | None = None
    probe_stages: tuple[float, ...] = (0.3, 0.7)

    def validate(self, num_samples: int | None = None) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.window < 1 or self.warmup < self.window:
            raise ConfigError(f"warm-up ({self.warmup}) must be at least the window size ({self.window})")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch size must be positive")
        if num_samples is not None and self.batch_size > num_samples:
            raise ConfigError(f"batch size {self.batch_size} exceeds dataset size {num_samples}")
        if self.s_e0 < 1:
            raise ConfigError("selection pressure must be >= 1")
        if self.pressure_mode not in ("constant", "decay"):
            raise ConfigError(f"unknown pressure mode {self.pressure_mode!r}")
        if self.optimizer not in ("sgd", "momentum"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.lr_mode not in ("step", "constant"):
            raise ConfigError(f"unknown lr mode {self.lr_mode!r}")

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, init_seed=seed, shuffle_seed=seed, draw_seed=seed)

    def schedule(self) -> PressureSchedule:
        e_0 = self.warmup + 1
        mode = self.pressure_mode if self.epochs > e_0 else "constant"
        return PressureSchedule(self.s_e0, e_0, max(self.epochs, e_0), mode)


@dataclass
class MetricsRecord:
    epoch: int
    iteration: int
    train_loss: float
    test_error: float
    elapsed_sec: float
    best_test_error: float
    selected_mean_loss: float
    selected_hist: np.ndarray = field(repr=False)
    pressure: float = float("nan")


@dataclass
class LossProbe:
    stage: float
    epoch: int
    losses: np.ndarray = field(repr=False)


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    mean: float

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class TableStats:
    epoch: int
    pressure: float
    min_prob: float
    max_prob: float
    sum_error: float
    max_dev_uniform: float

    @property
    def ratio(self) -> float:
        return self.max_prob / self.min_prob


@dataclass
class TrainState:
    config: TrainConfig
    params: ParameterSet
    bank: HistoryBank
    strategy: Strategy
    shuffle_rng: np.random.Generator
    draw_rng: np.random.Generator
    total_iterations: int
    epoch: int = 0
    iteration: int = 0


@dataclass
class RunResult:
    config: TrainConfig
    records: list[MetricsRecord]
    probes: dict[float, LossProbe]
    tables: list[TableStats]
    state: TrainState


def batches_per_epoch(n: int, b: int) -> int:
    return n // b


def loss_histogram(losses) -> np.ndarray:
    losses = np.minimum(np.asarray(losses, dtype=np.float64), HIST_EDGES[-1])
    return np.histogram(losses, bins=HIST_EDGES)[0]


def init_state(config: TrainConfig, train: Dataset) -> TrainState:
    config.validate(len(train))
    spec = ModelSpec(config.model, train.dim, train.num_classes,
                     config.hidden_dim if config.model == "mlp-1hidden" else 0, config.init_seed)
    bank = HistoryBank(len(train), config.window, train.num_classes)
    strategy = make_strategy(config.strategy, len(train), bank, config.epsilon, config.delta)
    return TrainState(
        config=config,
        params=init_params(spec),
        bank=bank,
        strategy=strategy,
        shuffle_rng=np.random.default_rng([config.shuffle_seed, 0]),
        draw_rng=np.random.default_rng([config.draw_seed, 1]),
        total_iterations=config.epochs * batches_per_epoch(len(train), config.batch_size),
    )


def train_step(state: TrainState, train: Dataset, indices: np.ndarray, event_log=None):
    """Forward, update, then record predicted labels and losses for the batch."""
    cfg = state.config
    x, y = train.inputs[indices], train.labels[indices]
    result, grad = forward_backward(state.params, x, y)
    lr = lr_schedule(cfg.base_lr, state.iteration, state.total_iterations, cfg.lr_mode)
    if cfg.optimizer == "momentum":
        momentum_step(state.params, grad, lr, cfg.momentum)
    else:
        sgd_step(state.params, grad, lr)
    state.bank.record_batch(indices, result.predicted)
    state.strategy.observe(indices, result.losses, result.predicted, result.true_prob)
    if event_log is not None:
        batch_no = state.iteration
        for i, loss, lab in zip(indices.tolist(), result.losses.tolist(), result.predicted.tolist()):
            event_log.write(f"{state.epoch},{batch_no},{i},{loss!r},{lab}\n")
    state.iteration += 1
    return result


def warmup_epoch(state: TrainState, train: Dataset, event_log=None) -> np.ndarray:
    """One shuffle-partition pass; the last ``N mod b`` samples of the permutation sit out."""
    b = state.config.batch_size
    perm = state.shuffle_rng.permutation(len(train))
    losses = []
    for j in range(batches_per_epoch(len(train), b)):
        idx = perm[j * b:(j + 1) * b]
        losses.append(train_step(state, train, idx, event_log).losses)
    return np.concatenate(losses) if losses else np.empty(0)


def adaptive_epoch(state: TrainState, train: Dataset, table: SamplingTable, event_log=None) -> np.ndarray:
    b = state.config.batch_size
    losses = []
    for _ in range(batches_per_epoch(len(train), b)):
        idx = draw_batch(table, b, state.draw_rng)
        losses.append(train_step(state, train, idx, event_log).losses)
    return np.concatenate(losses) if losses else np.empty(0)


def evaluate(params: ParameterSet, ds: Dataset, chunk: int = 8192) -> tuple[float, float]:
    """Mean loss and error percentage over the whole dataset."""
    loss_sum, wrong = 0.0, 0
    for s in range(0, len(ds), chunk):
        r = forward(params, ds.inputs[s:s + chunk], ds.labels[s:s + chunk])
        loss_sum += float(r.losses.sum())
        wrong += int((r.predicted != ds.labels[s:s + chunk]).sum())
    return loss_sum / len(ds), 100.0 * wrong / len(ds)


def _probe_epochs(config: TrainConfig) -> dict[int, float]:
    return {max(1, min(config.epochs, int(round(s * config.epochs)))): s for s in config.probe_stages}


def run(config: TrainConfig, train: Dataset, test: Dataset, event_log=None, table_hook=None,
        clock=time.perf_counter) -> RunResult:
    """Train for ``config.epochs`` epochs and return per-epoch metrics.

    Epochs ``1..warmup`` are shuffle-partition passes; afterwards the
    strategy's table is rebuilt at the start of every epoch and ``N // b``
    batches are drawn from it with replacement.
    """
    state = init_state(config, train)
    schedule = config.schedule()
    probe_at = _probe_epochs(config)
    records, tables, probes = [], [], {}
    best = math.inf
    n = len(train)
    start = clock()
    for epoch in range(1, config.epochs + 1):
        state.epoch = epoch
        s_e = float("nan")
        if epoch <= config.warmup:
            selected = warmup_epoch(state, train, event_log)
        else:
            s_e = pressure_at(schedule, epoch)
            table = state.strategy.build_table(s_e, epoch)
            p = table.probabilities
            tables.append(TableStats(epoch, s_e, float(p.min()), float(p.max()),
                                     abs(math.fsum(p) - 1.0), float(np.abs(p - 1.0 / n).max())))
            if table_hook is not None:
                table_hook(epoch, table)
            selected = adaptive_epoch(state, train, table, event_log)
        train_loss, _ = evaluate(state.params, train)
        _, test_error = evaluate(state.params, test)
        best = min(best, test_error)
        elapsed = clock() - start
        records.append(MetricsRecord(epoch, state.iteration, train_loss, test_error, elapsed, best,
                                     float(selected.mean()) if selected.size else float("nan"),
                                     loss_histogram(selected), s_e))
        if epoch in probe_at:
            probes[probe_at[epoch]] = LossProbe(probe_at[epoch], epoch, selected)
    return RunResult(config, records, probes, tables, state)


def loss_distribution_probe(result: RunResult, stage_fraction: float) -> Histogram:
    """Histogram of the losses of every sample selected during the epoch at ``stage_fraction``."""
    probe = result.probes.get(stage_fraction)
    if probe is None:
        raise KeyError(f"run did not probe stage {stage_fraction}; set TrainConfig.probe_stages")
    return Histogram(HIST_EDGES, loss_histogram(probe.losses), float(probe.losses.mean()))


def iterations_to_reach(records: list[MetricsRecord], target_error: float) -> int | None:
    """First cumulative iteration count at which test error is at or below ``target_error``."""
    for r in records:
        if r.test_error <= target_error + 1e-12:
            return r.iteration
    return None


# ---------------------------------------------------------------------------
# unbiasedness check by exhaustive enumeration


@dataclass
class WeightedEstimateReport:
    num_batches: int
    max_weight_sum_error: float
    full_gradient: np.ndarray = field(repr=False)
    expected_plain: np.ndarray = field(repr=False)
    expected_weighted: np.ndarray = field(repr=False)
    expected_weighted_uniform_batches: np.ndarray = field(repr=False)
    expected_importance: np.ndarray = field(repr=False)

    @property
    def plain_deviation(self) -> float:
        return float(np.abs(self.expected_plain - self.full_gradient).max())

    @property
    def weighted_deviation(self) -> float:
        return float(np.abs(self.expected_weighted - self.full_gradient).max())

    @property
    def weighted_uniform_deviation(self) -> float:
        return float(np.abs(self.expected_weighted_uniform_batches - self.full_gradient).max())

    @property
    def importance_deviation(self) -> float:
        return float(np.abs(self.expected_importance - self.full_gradient).max())


def weighted_estimate_check(params: ParameterSet, table: SamplingTable, dataset: Dataset, b: int) -> WeightedEstimateReport:
    """Exact expectations of several batch-gradient estimators over all ``N**b`` ordered batches.

    * plain: batch-mean gradient with the batch drawn from ``table``;
    * weighted: ``sum_i w_i g_i`` with ``w_i = P_i / sum_B P_j``, batch drawn from ``table``;
    * weighted, uniform batches: the same weights with uniformly drawn batches;
    * importance: ``mean_i g_i / (N P_i)``, batch drawn from ``table``.
    """
    n = len(dataset)
    if n > 8 or b > 3:
        raise ValueError(f"enumeration limited to N <= 8 and b <= 3, got N={n}, b={b}")
    if len(table) != n:
        raise ValueError("table size does not match dataset")
    p = table.probabilities
    per_sample = np.stack([backward(params, dataset.inputs[i:i + 1], dataset.labels[i:i + 1]) for i in range(n)])
    full = backward(params, dataset.inputs, dataset.labels)
    plain = np.zeros_like(full)
    weighted = np.zeros_like(full)
    weighted_u = np.zeros_like(full)
    importance = np.zeros_like(full)
    worst = 0.0
    count = 0
    for batch in itertools.product(range(n), repeat=b):
        idx = np.array(batch)
        prob = float(np.prod(p[idx]))
        w = p[idx] / p[idx].sum()
        worst = max(worst, abs(math.fsum(w) - 1.0))
        g_plain = backward(params, dataset.inputs[idx], dataset.labels[idx])
        g_weighted = w @ per_sample[idx]
        plain += prob * g_plain
        weighted += prob * g_weighted
        weighted_u += g_weighted / n**b
        importance += prob * (per_sample[idx] / (n * p[idx])[:, None]).mean(axis=0)
        count += 1
    return WeightedEstimateReport(count, worst, full, plain, weighted, weighted_u, importance)
