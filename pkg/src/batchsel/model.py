"""Small numpy classifiers with hand-written gradients.

Parameters live in one flat float64 vector; named views into it give the
weight matrices, so optimizers work on the flat vector directly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

MODEL_KINDS = ("softmax-regression", "mlp-1hidden")


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    input_dim: int
    num_classes: int
    hidden_dim: int = 0
    init_seed: int = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.kind == "mlp-1hidden" and self.hidden_dim < 1:
            raise ValueError("mlp needs a positive hidden_dim")

    def shapes(self) -> dict[str, tuple[int, ...]]:
        d, k, h = self.input_dim, self.num_classes, self.hidden_dim
        if self.kind == "softmax-regression":
            return {"W": (d, k), "b": (k,)}
        return {"W1": (d, h), "b1": (h,), "W2": (h, k), "b2": (k,)}


@dataclass
class ParameterSet:
    spec: ModelSpec
    theta: np.ndarray
    velocity: np.ndarray = field(default=None)

    def __post_init__(self):
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        expected = sum(int(np.prod(s)) for s in self.spec.shapes().values())
        if self.theta.shape != (expected,):
            raise ValueError(f"expected {expected} parameters, got shape {self.theta.shape}")
        if self.velocity is None:
            self.velocity = np.zeros_like(self.theta)

    def views(self, vec: np.ndarray | None = None) -> dict[str, np.ndarray]:
        """Named reshaped views into ``vec`` (default: ``theta``)."""
        vec = self.theta if vec is None else vec
        out, pos = {}, 0
        for name, shape in self.spec.shapes().items():
            size = int(np.prod(shape))
            out[name] = vec[pos:pos + size].reshape(shape)
            pos += size
        return out

    def copy(self) -> "ParameterSet":
        return ParameterSet(self.spec, self.theta.copy(), self.velocity.copy())


def init_params(spec: ModelSpec) -> ParameterSet:
    """Glorot-uniform weights, zero biases, deterministic in ``spec.init_seed``."""
    rng = np.random.default_rng(spec.init_seed)
    params = ParameterSet(spec, np.zeros(sum(int(np.prod(s)) for s in spec.shapes().values())))
    for name, w in params.views().items():
        if w.ndim == 2:
            a = np.sqrt(6.0 / (w.shape[0] + w.shape[1]))
            w[...] = rng.uniform(-a, a, size=w.shape)
    return params


@dataclass
class ForwardResult:
    losses: np.ndarray
    predicted: np.ndarray
    true_prob: np.ndarray


def _check_inputs(params: ParameterSet, x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[1] != params.spec.input_dim:
        raise ValueError(f"inputs must have shape (B, {params.spec.input_dim}), got {x.shape}")
    if y.shape != (x.shape[0],):
        raise ValueError("labels must be a vector matching the batch")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    if y.size and (y.min() < 0 or y.max() >= params.spec.num_classes):
        raise ValueError("label out of range")
    return x, y


def _logits(params: ParameterSet, x):
    v = params.views()
    if params.spec.kind == "softmax-regression":
        return x @ v["W"] + v["b"], None
    pre = x @ v["W1"] + v["b1"]
    hidden = np.maximum(pre, 0.0)
    return hidden @ v["W2"] + v["b2"], hidden


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def forward(params: ParameterSet, x, y) -> ForwardResult:
    """Per-sample cross-entropy, argmax prediction, and true-class probability."""
    x, y = _check_inputs(params, x, y)
    z, _ = _logits(params, x)
    logp = _log_softmax(z)
    ll = logp[np.arange(y.size), y]
    return ForwardResult(losses=-ll, predicted=z.argmax(axis=1), true_prob=np.exp(ll))


def forward_backward(params: ParameterSet, x, y) -> tuple[ForwardResult, np.ndarray]:
    """Forward pass plus the gradient of the batch-mean loss w.r.t. ``theta``."""
    x, y = _check_inputs(params, x, y)
    z, hidden = _logits(params, x)
    logp = _log_softmax(z)
    rows = np.arange(y.size)
    ll = logp[rows, y]
    result = ForwardResult(losses=-ll, predicted=z.argmax(axis=1), true_prob=np.exp(ll))

    dz = np.exp(logp)
    dz[rows, y] -= 1.0
    dz /= y.size
    grad = np.zeros_like(params.theta)
    g = params.views(grad)
    if params.spec.kind == "softmax-regression":
        g["W"][...] = x.T @ dz
        g["b"][...] = dz.sum(axis=0)
    else:
        v = params.views()
        g["W2"][...] = hidden.T @ dz
        g["b2"][...] = dz.sum(axis=0)
        dh = (dz @ v["W2"].T) * (hidden > 0.0)
        g["W1"][...] = x.T @ dh
        g["b1"][...] = dh.sum(axis=0)
    return result, grad


def backward(params: ParameterSet, x, y) -> np.ndarray:
    return forward_backward(params, x, y)[1]


def mean_loss(params: ParameterSet, x, y) -> float:
    return float(forward(params, x, y).losses.mean())


def sgd_step(params: ParameterSet, grad, lr: float) -> None:
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient")
    params.theta -= lr * grad


def momentum_step(params: ParameterSet, grad, lr: float, mu: float = 0.9) -> None:
    """Heavy ball: ``v <- mu * v + grad``; ``theta <- theta - lr * v``."""
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient")
    params.velocity *= mu
    params.velocity += grad
    params.theta -= lr * params.velocity


def lr_schedule(base_lr: float, iteration: int, total_iterations: int, mode: str = "step") -> float:
    """Step mode divides by 10 at 50% and again at 75% of the total iterations."""
    if mode == "constant":
        return base_lr
    if mode != "step":
        raise ValueError(f"unknown lr mode {mode!r}")
    if 4 * iteration >= 3 * total_iterations:
        return base_lr / 100.0
    if 2 * iteration >= total_iterations:
        return base_lr / 10.0
    return base_lr


def save_params(params: ParameterSet, path) -> None:
    """Flat little-endian float64 ``<path>.bin`` plus a ``<path>.json`` shape sidecar."""
    path = Path(path)
    params.theta.astype("<f8").tofile(path.with_suffix(".bin"))
    meta = {
        "spec": asdict(params.spec),
        "shapes": {k: list(v) for k, v in params.spec.shapes().items()},
        "dtype": "<f8",
        "size": int(params.theta.size),
    }
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2))


def load_params(path) -> ParameterSet:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    theta = np.fromfile(path.with_suffix(".bin"), dtype="<f8")
    if theta.size != meta["size"]:
        raise ValueError(f"checkpoint holds {theta.size} values, sidecar says {meta['size']}")
    return ParameterSet(ModelSpec(**meta["spec"]), theta.astype(np.float64))
