"""Sliding-window label histories and predictive uncertainty.

Each training sample keeps the ``q`` most recent labels the network predicted
for it.  The normalized entropy of the empirical label distribution over that
window is the sample's predictive uncertainty, in ``[0, 1]``.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class EmptyHistoryError(ValueError):
    """Raised when uncertainty is requested for a sample with no observations."""


@dataclass
class LabelHistory:
    """Ring buffer of the most recent predicted labels of one sample (newest last)."""

    capacity: int
    entries: deque = field(default_factory=deque)
    recorded_count: int = 0

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError(f"capacity must be positive, got {self.capacity}")
        self.entries = deque(self.entries, maxlen=self.capacity)

    def record(self, label: int) -> None:
        self.entries.append(int(label))
        self.recorded_count += 1

    def __len__(self) -> int:
        return len(self.entries)


def label_probability(h: LabelHistory, k: int) -> np.ndarray:
    """Fraction of the window occupied by each of the ``k`` labels."""
    n = len(h.entries)
    if n == 0:
        raise EmptyHistoryError("no observations in label history")
    counts = np.bincount(np.fromiter(h.entries, dtype=np.int64, count=n), minlength=k)
    if counts.shape[0] > k:
        raise ValueError(f"label outside [0, {k})")
    return counts / n


def _normalized_entropy(counts: np.ndarray, n: np.ndarray, k: int) -> np.ndarray:
    # counts: (..., k) integer-valued; n: (...,) window lengths, all >= 1.
    # H = log n - sum(c log c) / n, with c log c looked up for the small integer counts
    c = counts.astype(np.int64)
    top = int(c.max()) if c.size else 0
    clogc = np.zeros(top + 1)
    clogc[1:] = np.arange(1, top + 1) * np.log(np.arange(1, top + 1))
    h = np.log(n) - np.take(clogc, c).sum(axis=-1) / n
    u = h / math.log(k)
    return np.clip(u, 0.0, 1.0) + 0.0  # no negative zero


def predictive_uncertainty(h: LabelHistory, k: int) -> float:
    """Entropy of the window's label distribution divided by ``log(k)``."""
    if k < 2:
        raise ValueError(f"need at least 2 classes, got k={k}")
    n = len(h.entries)
    if n == 0:
        raise EmptyHistoryError("no observations in label history")
    counts = np.bincount(np.fromiter(h.entries, dtype=np.int64, count=n), minlength=k)
    return float(_normalized_entropy(counts[None, :].astype(np.float64), np.array([n], dtype=np.float64), k)[0])


class HistoryBank:
    """Label histories for all ``N`` training samples, stored as one ``(N, q)`` array.

    Row ``i`` is a ring buffer for sample ``i``; the write slot is
    ``recorded_count[i] % q``.
    """

    def __init__(self, num_samples: int, capacity: int, num_classes: int):
        if num_samples < 1 or capacity < 1:
            raise ValueError("num_samples and capacity must be positive")
        if num_classes < 2:
            raise ValueError(f"need at least 2 classes, got k={num_classes}")
        self.num_samples = num_samples
        self.capacity = capacity
        self.num_classes = num_classes
        dtype = np.int16 if num_classes < 2**15 else np.int32
        self._labels = np.zeros((num_samples, capacity), dtype=dtype)
        self.recorded_count = np.zeros(num_samples, dtype=np.int64)

    def __len__(self) -> int:
        return self.num_samples

    def record(self, sample_index: int, predicted_label: int) -> None:
        if not 0 <= sample_index < self.num_samples:
            raise IndexError(f"sample index {sample_index} outside [0, {self.num_samples})")
        if not 0 <= predicted_label < self.num_classes:
            raise ValueError(f"label {predicted_label} outside [0, {self.num_classes})")
        slot = self.recorded_count[sample_index] % self.capacity
        self._labels[sample_index, slot] = predicted_label
        self.recorded_count[sample_index] += 1

    def record_batch(self, sample_indices, predicted_labels) -> None:
        """Record labels in order; repeated indices within a batch are applied sequentially."""
        idx = np.asarray(sample_indices, dtype=np.int64)
        lab = np.asarray(predicted_labels, dtype=np.int64)
        if idx.shape != lab.shape:
            raise ValueError("indices and labels differ in length")
        if idx.size == 0:
            return
        if idx.min() < 0 or idx.max() >= self.num_samples:
            raise IndexError("sample index out of range")
        if lab.min() < 0 or lab.max() >= self.num_classes:
            raise ValueError("predicted label out of range")
        if np.unique(idx).size == idx.size:
            slots = self.recorded_count[idx] % self.capacity
            self._labels[idx, slots] = lab
            self.recorded_count[idx] += 1
        else:
            for i, y in zip(idx.tolist(), lab.tolist()):
                self.record(i, y)

    def window_lengths(self) -> np.ndarray:
        return np.minimum(self.recorded_count, self.capacity)

    def entries(self, sample_index: int) -> list[int]:
        """Window contents for one sample, oldest first."""
        c = int(self.recorded_count[sample_index])
        row = self._labels[sample_index]
        if c <= self.capacity:
            return row[:c].tolist()
        start = c % self.capacity
        return np.concatenate([row[start:], row[:start]]).tolist()

    def history(self, sample_index: int) -> LabelHistory:
        h = LabelHistory(self.capacity, deque(self.entries(sample_index)))
        h.recorded_count = int(self.recorded_count[sample_index])
        return h

    def label_counts(self) -> np.ndarray:
        """``(N, k)`` count of each label inside each window."""
        n = self.window_lengths()
        k = self.num_classes
        flat = np.arange(self.num_samples, dtype=np.int64)[:, None] * k + self._labels
        if (n == self.capacity).all():
            flat = flat.ravel()
        else:
            flat = flat[np.arange(self.capacity)[None, :] < n[:, None]]
        counts = np.bincount(flat, minlength=self.num_samples * k)
        return counts.reshape(self.num_samples, k).astype(np.float64)

    def uncertainties(self) -> np.ndarray:
        """Predictive uncertainty of every sample, one vectorized pass."""
        n = self.window_lengths()
        if (n == 0).any():
            missing = int((n == 0).sum())
            raise EmptyHistoryError(
                f"{missing} samples have empty label histories; run warm-up epochs first"
            )
        return _normalized_entropy(self.label_counts(), n.astype(np.float64), self.num_classes)

    def dump_csv(self, path) -> None:
        """Write ``sample_index,window_len,u_value`` rows (blank u for empty windows)."""
        n = self.window_lengths()
        u = np.full(self.num_samples, np.nan)
        filled = n > 0
        if filled.any():
            u[filled] = _normalized_entropy(
                self.label_counts()[filled], n[filled].astype(np.float64), self.num_classes
            )
        with Path(path).open("w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["sample_index", "window_len", "u_value"])
            for i in range(self.num_samples):
                w.writerow([i, int(n[i]), "" if np.isnan(u[i]) else repr(float(u[i]))])
