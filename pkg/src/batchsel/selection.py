"""Per-epoch sampling distributions for the four batch-selection strategies.

All tables are built in log space and normalized after subtracting the
maximum log-weight, so every probability stays strictly positive even when
``base ** -N`` would underflow.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .history import HistoryBank

STRATEGIES = ("random", "online-batch", "active-bias", "recency-bias")

# relative slack when snapping (1 - u) / delta onto an integer
_SNAP = 1e-9


class TableError(ValueError):
    """A sampling table violates positivity or normalization."""


# ---------------------------------------------------------------------------
# quantizer and selection pressure


def quantize(u, delta: float):
    """Quantization index ``ceil((1 - u) / delta)``.

    Works on scalars and arrays.  Quotients within ``1e-9`` (relative) of an
    integer are snapped to it, so rounding noise in ``u`` cannot push a sample
    into the next bucket.
    """
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    arr = np.asarray(u, dtype=np.float64)
    if np.any(np.isnan(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError("uncertainty must lie in [0, 1]")
    x = (1.0 - arr) / delta
    r = np.rint(x)
    near = np.abs(x - r) <= _SNAP * np.maximum(1.0, np.abs(x))
    q = np.where(near, r, np.ceil(x)).astype(np.int64)
    if np.ndim(u) == 0:
        return int(q)
    return q


@dataclass(frozen=True)
class PressureSchedule:
    """Selection pressure over the adaptive epochs ``[e_0, e_end]``.

    ``mode="decay"`` shrinks the pressure geometrically from ``s_e0`` at
    ``e_0`` to 1 at ``e_end``; ``mode="constant"`` holds ``s_e0``.
    """

    s_e0: float
    e_0: int
    e_end: int
    mode: str = "decay"

    def __post_init__(self):
        if self.s_e0 < 1:
            raise ValueError(f"selection pressure must be >= 1, got {self.s_e0}")
        if self.mode not in ("constant", "decay"):
            raise ValueError(f"unknown pressure mode {self.mode!r}")
        if self.mode == "decay" and self.e_end <= self.e_0:
            raise ValueError("decay mode needs e_end > e_0")


def pressure_at(sched: PressureSchedule, epoch: int) -> float:
    """Selection pressure at ``epoch``; epochs outside ``[e_0, e_end]`` are clamped."""
    if sched.mode == "constant":
        return float(sched.s_e0)
    e = min(max(epoch, sched.e_0), sched.e_end)
    if e == sched.e_end:
        return 1.0
    # s_e0 * (exp(log(1/s_e0) / span)) ** (e - e_0), folded into one exp for accuracy
    span = sched.e_end - sched.e_0
    return float(sched.s_e0 * math.exp(math.log(1.0 / sched.s_e0) * (e - sched.e_0) / span))


# ---------------------------------------------------------------------------
# sampling table


@dataclass(frozen=True)
class SamplingTable:
    """Immutable categorical distribution over the ``N`` training samples."""

    probabilities: np.ndarray
    cumulative: np.ndarray = field(init=False, repr=False)
    epoch_built: int = -1
    quant_index: np.ndarray | None = field(default=None, repr=False)
    uncertainty: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        p = np.ascontiguousarray(self.probabilities, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise TableError("probabilities must be a non-empty vector")
        if not np.all(np.isfinite(p)) or not np.all(p > 0.0):
            raise TableError("every sampling probability must be strictly positive")
        total = math.fsum(p)
        if abs(total - 1.0) > 1e-9:
            raise TableError(f"probabilities sum to {total!r}, not 1")
        p.setflags(write=False)
        cum = np.cumsum(p)
        cum.setflags(write=False)
        object.__setattr__(self, "probabilities", p)
        object.__setattr__(self, "cumulative", cum)

    def __len__(self) -> int:
        return self.probabilities.size

    @classmethod
    def from_log_weights(cls, log_w, epoch_built: int = -1, **extra) -> "SamplingTable":
        log_w = np.asarray(log_w, dtype=np.float64)
        w = np.exp(log_w - log_w.max())
        return cls(w / w.sum(), epoch_built=epoch_built, **extra)

    @classmethod
    def uniform(cls, n: int, epoch_built: int = -1) -> "SamplingTable":
        return cls(np.full(n, 1.0 / n), epoch_built=epoch_built)

    @property
    def alias(self) -> tuple[np.ndarray, np.ndarray]:
        """Vose alias tables ``(accept, alias)``, built on first use."""
        cached = self.__dict__.get("_alias")
        if cached is None:
            cached = build_alias(self.probabilities)
            object.__setattr__(self, "_alias", cached)
        return cached

    def max_min_ratio(self) -> float:
        return float(self.probabilities.max() / self.probabilities.min())

    def dump_csv(self, path) -> None:
        n = len(self)
        u = self.uncertainty if self.uncertainty is not None else np.full(n, np.nan)
        qi = self.quant_index
        with Path(path).open("w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["sample_index", "uncertainty", "quant_index", "probability"])
            for i in range(n):
                w.writerow([
                    i,
                    "" if np.isnan(u[i]) else repr(float(u[i])),
                    "" if qi is None else int(qi[i]),
                    repr(float(self.probabilities[i])),
                ])


def build_alias(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vose's method: O(N) construction, O(1) per draw."""
    n = p.size
    scaled = p * n
    accept = np.ones(n)
    alias = np.arange(n)
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    scaled = scaled.tolist()
    while small and large:
        s = small.pop()
        g = large.pop()
        accept[s] = scaled[s]
        alias[s] = g
        scaled[g] = (scaled[g] + scaled[s]) - 1.0
        (small if scaled[g] < 1.0 else large).append(g)
    # leftovers carry probability 1 up to rounding
    for i in small + large:
        accept[i] = 1.0
        alias[i] = i
    return accept, alias


def indices_from_uniforms(table: SamplingTable, uniforms, method: str = "prefix") -> np.ndarray:
    """Map uniform variates in ``[0, 1)`` to sample indices.

    ``prefix``: index ``i`` with ``cumulative[i-1] <= u * total < cumulative[i]``
    (binary search).  ``alias``: column ``floor(u * N)`` keeps itself when the
    fractional part is below its acceptance probability, else its alias.
    """
    u = np.asarray(uniforms, dtype=np.float64)
    n = len(table)
    if method == "prefix":
        cum = table.cumulative
        idx = np.searchsorted(cum, u * cum[-1], side="right")
        return np.minimum(idx, n - 1)
    if method == "alias":
        accept, alias = table.alias
        scaled = u * n
        col = np.minimum(scaled.astype(np.int64), n - 1)
        frac = scaled - col
        return np.where(frac < accept[col], col, alias[col])
    raise ValueError(f"unknown draw method {method!r}")


def draw_batch(table: SamplingTable, b: int, rng: np.random.Generator, method: str = "prefix") -> np.ndarray:
    """``b`` independent draws with replacement."""
    if b < 1:
        raise ValueError(f"batch size must be >= 1, got {b}")
    return indices_from_uniforms(table, rng.random(b), method)


# ---------------------------------------------------------------------------
# table builders


def recency_bias_table(bank: HistoryBank, s_e: float, delta: float | None = None, epoch: int = -1) -> SamplingTable:
    """Probability of sample i proportional to ``base ** -Q(U_i)``, ``base = exp(log(s_e) / N)``."""
    if s_e < 1:
        raise ValueError(f"selection pressure must be >= 1, got {s_e}")
    n = bank.num_samples
    if delta is None:
        delta = 1.0 / n
    u = bank.uncertainties()
    q = quantize(u, delta)
    log_w = -q * (math.log(s_e) / n)
    return SamplingTable.from_log_weights(log_w, epoch_built=epoch, quant_index=q, uncertainty=u)


def positivity_lower_bound(s_e: float, n: int, delta: float | None = None) -> float:
    """Worst-case minimum probability of a recency-bias table.

    Every index lies in ``[0, ceil(1/delta)]``, so each weight ``base ** -Q``
    is in ``[base ** -qmax, 1]`` and each probability is at least
    ``base ** -qmax / n``.  With ``delta = 1/n`` that is ``1 / (n * s_e)``.
    """
    if delta is None:
        delta = 1.0 / n
    qmax = math.ceil(1.0 / delta - _SNAP * max(1.0, 1.0 / delta))
    return math.exp(-qmax * math.log(s_e) / n) / n


@dataclass
class OnlineBatchState:
    """Most recent training loss of every sample (NaN until first seen)."""

    last_loss: np.ndarray

    @classmethod
    def empty(cls, n: int) -> "OnlineBatchState":
        return cls(np.full(n, np.nan))

    def update(self, indices, losses) -> None:
        # later duplicates win, matching sequential application
        self.last_loss[np.asarray(indices)] = np.asarray(losses, dtype=np.float64)

    def rank(self) -> np.ndarray:
        """Rank (1 = largest loss) of every sample; ties go to the lower index."""
        if np.isnan(self.last_loss).any():
            missing = int(np.isnan(self.last_loss).sum())
            raise ValueError(f"{missing} samples have no recorded loss")
        order = np.lexsort((np.arange(self.last_loss.size), -self.last_loss))
        ranks = np.empty_like(order)
        ranks[order] = np.arange(1, order.size + 1)
        return ranks


def online_batch_table(state: OnlineBatchState, s_e: float, epoch: int = -1) -> SamplingTable:
    """Probability of the rank-r sample proportional to ``base ** -r``."""
    if s_e < 1:
        raise ValueError(f"selection pressure must be >= 1, got {s_e}")
    ranks = state.rank()
    n = ranks.size
    return SamplingTable.from_log_weights(-ranks * (math.log(s_e) / n), epoch_built=epoch)


@dataclass
class ActiveBiasState:
    """Growing-window statistics of each sample's true-class probability.

    Keeps Welford accumulators (count, mean, sum of squared deviations)
    instead of the raw sequences; the population variance is all the score
    needs.
    """

    count: np.ndarray
    mean: np.ndarray
    m2: np.ndarray
    epsilon: float = 0.01

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")

    @classmethod
    def empty(cls, n: int, epsilon: float = 0.01) -> "ActiveBiasState":
        return cls(np.zeros(n, dtype=np.int64), np.zeros(n), np.zeros(n), epsilon)

    def record(self, sample_index: int, true_prob: float) -> None:
        i = sample_index
        self.count[i] += 1
        d = true_prob - self.mean[i]
        self.mean[i] += d / self.count[i]
        self.m2[i] += d * (true_prob - self.mean[i])

    def update(self, indices, true_probs) -> None:
        idx = np.asarray(indices, dtype=np.int64)
        x = np.asarray(true_probs, dtype=np.float64)
        if np.unique(idx).size == idx.size:
            self.count[idx] += 1
            d = x - self.mean[idx]
            self.mean[idx] += d / self.count[idx]
            self.m2[idx] += d * (x - self.mean[idx])
        else:
            for i, v in zip(idx.tolist(), x.tolist()):
                self.record(i, v)

    def std_hat(self) -> np.ndarray:
        """``sqrt(var + var**2 / (n - 1))``; zero for samples seen fewer than twice."""
        out = np.zeros(self.count.size)
        ok = self.count >= 2
        n = self.count[ok].astype(np.float64)
        var = np.maximum(self.m2[ok] / n, 0.0)
        out[ok] = np.sqrt(var + var * var / (n - 1.0))
        return out


def active_bias_table(state: ActiveBiasState, epoch: int = -1) -> SamplingTable:
    w = state.std_hat() + state.epsilon
    return SamplingTable(w / w.sum(), epoch_built=epoch)


# ---------------------------------------------------------------------------
# strategies


class Strategy:
    """Per-strategy state fed by each mini-batch forward pass."""

    name = "random"

    def __init__(self, num_samples: int):
        self.num_samples = num_samples

    def observe(self, indices, losses, predicted, true_prob) -> None:
        pass

    def build_table(self, s_e: float, epoch: int) -> SamplingTable:
        return SamplingTable.uniform(self.num_samples, epoch_built=epoch)


class RandomBatch(Strategy):
    name = "random"


class OnlineBatch(Strategy):
    name = "online-batch"

    def __init__(self, num_samples: int):
        super().__init__(num_samples)
        self.state = OnlineBatchState.empty(num_samples)

    def observe(self, indices, losses, predicted, true_prob) -> None:
        self.state.update(indices, losses)

    def build_table(self, s_e: float, epoch: int) -> SamplingTable:
        return online_batch_table(self.state, s_e, epoch)


class ActiveBias(Strategy):
    name = "active-bias"

    def __init__(self, num_samples: int, epsilon: float = 0.01):
        super().__init__(num_samples)
        self.state = ActiveBiasState.empty(num_samples, epsilon)

    def observe(self, indices, losses, predicted, true_prob) -> None:
        self.state.update(indices, true_prob)

    def build_table(self, s_e: float, epoch: int) -> SamplingTable:
        return active_bias_table(self.state, epoch)


class RecencyBias(Strategy):
    """Reads the shared label-history bank; histories are recorded by the trainer."""

    name = "recency-bias"

    def __init__(self, num_samples: int, bank: HistoryBank, delta: float | None = None):
        super().__init__(num_samples)
        self.bank = bank
        self.delta = delta

    def build_table(self, s_e: float, epoch: int) -> SamplingTable:
        return recency_bias_table(self.bank, s_e, self.delta, epoch)


def make_strategy(name: str, num_samples: int, bank: HistoryBank, epsilon: float = 0.01,
                  delta: float | None = None) -> Strategy:
    if name == "random":
        return RandomBatch(num_samples)
    if name == "online-batch":
        return OnlineBatch(num_samples)
    if name == "active-bias":
        return ActiveBias(num_samples, epsilon)
    if name == "recency-bias":
        return RecencyBias(num_samples, bank, delta)
    raise ValueError(f"unknown strategy {name!r}; expected one of {STRATEGIES}")
