"""Independent reference implementations used to check the fast code paths.

Nothing here imports from ``history``, ``selection`` or ``model``: the
oracles are plain-Python (``math``, ``fractions``) loops so that a shared bug
cannot hide in a shared kernel.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction

from scipy.special import gammaincc

# every oracle tolerance in one place
TOLERANCES = {
    "formula_abs": 1e-12,
    "table_sum": 1e-9,
    "weight_sum": 1e-12,
    "uniform_expectation": 1e-10,
    "gradient_rel": 1e-5,
    "fd_step": 1e-5,
    "chi_square_alpha": 1e-3,
    "uniform_table_dev": 1e-12,
}


@dataclass
class OracleReport:
    name: str
    max_abs_error: float
    max_rel_error: float
    tolerance: float
    relative: bool = False

    @property
    def passed(self) -> bool:
        err = self.max_rel_error if self.relative else self.max_abs_error
        return err <= self.tolerance

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"[{status}] {self.name}: max_abs={self.max_abs_error:.3e} "
                f"max_rel={self.max_rel_error:.3e} tol={self.tolerance:.1e}")


def compare(name: str, got, expected, tolerance: float, relative: bool = False) -> OracleReport:
    got, expected = list(map(float, got)), list(map(float, expected))
    if len(got) != len(expected):
        raise ValueError(f"{name}: length mismatch {len(got)} vs {len(expected)}")
    abs_err = max((abs(a - b) for a, b in zip(got, expected)), default=0.0)
    rel_err = max((abs(a - b) / max(abs(b), 1e-300) for a, b in zip(got, expected)), default=0.0)
    return OracleReport(name, abs_err, rel_err, tolerance, relative)


# ---------------------------------------------------------------------------
# formula oracles


def naive_uncertainty(entries, k: int) -> float:
    """Normalized empirical entropy of the labels in ``entries``."""
    n = len(entries)
    h = 0.0
    for c in Counter(entries).values():
        p = c / n
        h -= p * math.log(p)
    return h / math.log(k)


def naive_quantize(u: float, delta: float) -> int:
    """``ceil((1 - u) / delta)`` in exact rational arithmetic, snapping within 1e-9 relative."""
    x = (1 - Fraction(u)) / Fraction(delta)
    r = round(x)
    if abs(x - r) <= Fraction(1, 10**9) * max(1, abs(x)):
        return int(r)
    return math.ceil(x)


def naive_pressure(s_e0: float, e_0: int, e_end: int, epoch: int, mode: str = "decay") -> float:
    if mode == "constant":
        return s_e0
    epoch = min(max(epoch, e_0), e_end)
    return s_e0 ** (1.0 - (epoch - e_0) / (e_end - e_0))


def naive_exponential_table(indices, s_e: float, n: int) -> list[float]:
    """Probability ``base**-q / sum_j base**-q_j`` with ``base = exp(log(s_e)/n)``."""
    base = math.exp(math.log(s_e) / n)
    w = [1.0 / base ** q for q in indices]
    total = math.fsum(w)
    return [x / total for x in w]


def naive_recency_table(histories, k: int, s_e: float) -> list[float]:
    n = len(histories)
    q = [naive_quantize(naive_uncertainty(h, k), 1 / n) for h in histories]
    return naive_exponential_table(q, s_e, n)


def naive_online_table(losses, s_e: float) -> list[float]:
    n = len(losses)
    order = sorted(range(n), key=lambda i: (-losses[i], i))
    rank = [0] * n
    for r, i in enumerate(order, start=1):
        rank[i] = r
    return naive_exponential_table(rank, s_e, n)


def naive_std_hat(values) -> float:
    n = len(values)
    if n < 2:
        return 0.0
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / n
    return math.sqrt(var + var * var / (n - 1))


def naive_active_table(value_lists, epsilon: float) -> list[float]:
    w = [naive_std_hat(v) + epsilon for v in value_lists]
    total = math.fsum(w)
    return [x / total for x in w]


# ---------------------------------------------------------------------------
# statistics


def pool_cells(observed, probs, min_expected: float, total: float) -> tuple[list[float], list[float]]:
    """Merge consecutive cells until each expects at least ``min_expected`` counts.

    A short tail is folded into the last complete group.
    """
    obs_out, p_out = [], []
    o_acc = p_acc = 0.0
    for o, p in zip(observed, probs):
        o_acc += o
        p_acc += p
        if total * p_acc >= min_expected:
            obs_out.append(o_acc)
            p_out.append(p_acc)
            o_acc = p_acc = 0.0
    if p_acc > 0:
        if obs_out:
            obs_out[-1] += o_acc
            p_out[-1] += p_acc
        else:
            obs_out, p_out = [o_acc], [p_acc]
    return obs_out, p_out


def chi_square_gof(observed_counts, expected_probs, min_expected: float = 5.0) -> tuple[float, float]:
    """Pearson statistic and upper-tail p-value, ``cells - 1`` degrees of freedom.

    Cells expecting fewer than ``min_expected`` counts are pooled with their
    neighbours first (pass 0 to disable).
    """
    observed = [float(c) for c in observed_counts]
    probs = [float(p) for p in expected_probs]
    if len(observed) != len(probs) or len(probs) < 2:
        raise ValueError("need matching observed/expected vectors with at least 2 cells")
    if any(not p > 0 for p in probs):
        raise ValueError("expected probabilities must be strictly positive")
    total = math.fsum(observed)
    if total < 1000:
        raise ValueError(f"need at least 1000 observations, got {total}")
    psum = math.fsum(probs)
    probs = [p / psum for p in probs]
    if min_expected > 0:
        observed, probs = pool_cells(observed, probs, min_expected, total)
    if len(probs) < 2:
        raise ValueError("fewer than 2 cells left after pooling")
    stat = math.fsum((o - total * p) ** 2 / (total * p) for o, p in zip(observed, probs))
    return stat, chi_square_sf(stat, len(probs) - 1)


def chi_square_sf(stat: float, df: int) -> float:
    """Upper tail ``Q(df/2, stat/2)`` of the chi-square distribution."""
    if stat <= 0:
        return 1.0
    return float(gammaincc(df / 2.0, stat / 2.0))


# ---------------------------------------------------------------------------
# gradients


def finite_difference_grad(loss_fn, params, step: float = 1e-5) -> list[float]:
    """Central differences, one coordinate at a time."""
    if step <= 0:
        raise ValueError("step must be positive")
    theta = [float(v) for v in params]
    grad = []
    for i in range(len(theta)):
        orig = theta[i]
        theta[i] = orig + step
        up = loss_fn(theta)
        theta[i] = orig - step
        down = loss_fn(theta)
        theta[i] = orig
        grad.append((up - down) / (2 * step))
    return grad


def naive_cross_entropy(logits_row, label: int) -> float:
    m = max(logits_row)
    lse = m + math.log(math.fsum(math.exp(z - m) for z in logits_row))
    return lse - logits_row[label]


def naive_mlp_losses(x_rows, labels, w1, b1, w2, b2) -> list[float]:
    """Per-sample cross-entropy of a ReLU MLP written with nested loops."""
    out = []
    for x, y in zip(x_rows, labels):
        hidden = [max(0.0, math.fsum(x[a] * w1[a][j] for a in range(len(x))) + b1[j]) for j in range(len(b1))]
        logits = [math.fsum(hidden[j] * w2[j][c] for j in range(len(hidden))) + b2[c] for c in range(len(b2))]
        out.append(naive_cross_entropy(logits, int(y)))
    return out


def naive_softmax_losses(x_rows, labels, w, b) -> list[float]:
    out = []
    for x, y in zip(x_rows, labels):
        logits = [math.fsum(x[a] * w[a][c] for a in range(len(x))) + b[c] for c in range(len(b))]
        out.append(naive_cross_entropy(logits, int(y)))
    return out
