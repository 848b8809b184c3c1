"""Datasets: IDX (MNIST) parsing, synthetic Gaussian blobs, stratified subsets."""

from __future__ import annotations

import gzip
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


class BadMagicError(IdxFormatError):
    pass


class TruncatedFileError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    pass


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"
    name: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise ValueError(f"inconsistent shapes {x.shape} / {y.shape}")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ValueError("label outside [0, num_classes)")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite feature")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.size

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def save(self, path) -> None:
        np.savez(path, inputs=self.inputs, labels=self.labels,
                 info=json.dumps({"num_classes": self.num_classes, "split": self.split,
                                  "name": self.name, "meta": self.meta}))

    @classmethod
    def load(cls, path) -> "Dataset":
        with np.load(path) as f:
            info = json.loads(str(f["info"]))
            return cls(f["inputs"], f["labels"], info["num_classes"], info["split"],
                       info["name"], info["meta"])


# ---------------------------------------------------------------------------
# IDX


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _check_magic(raw: bytes, expected: int, what: str) -> None:
    if len(raw) < 4:
        raise TruncatedFileError(f"{what} file shorter than its magic number")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected:
        raise BadMagicError(f"{what} magic {magic:#010x}, expected {expected:#010x}")


def parse_idx_images(raw: bytes) -> np.ndarray:
    """``(n, rows, cols)`` uint8 array from an IDX image file."""
    _check_magic(raw, IMAGE_MAGIC, "image")
    if len(raw) < 16:
        raise TruncatedFileError("image header shorter than 16 bytes")
    _, n, rows, cols = struct.unpack(">IIII", raw[:16])
    need = 16 + n * rows * cols
    if len(raw) < need:
        raise TruncatedFileError(f"image file has {len(raw)} bytes, header implies {need}")
    return np.frombuffer(raw, dtype=np.uint8, count=n * rows * cols, offset=16).reshape(n, rows, cols)


def parse_idx_labels(raw: bytes) -> np.ndarray:
    _check_magic(raw, LABEL_MAGIC, "label")
    if len(raw) < 8:
        raise TruncatedFileError("label header shorter than 8 bytes")
    _, n = struct.unpack(">II", raw[:8])
    if len(raw) < 8 + n:
        raise TruncatedFileError(f"label file has {len(raw)} bytes, header implies {8 + n}")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=8)


def load_idx(images_path, labels_path, split: str = "train", name: str = "mnist",
             num_classes: int = 10) -> Dataset:
    """Flattened images scaled to ``[0, 1]`` by dividing by 255; gzip is sniffed."""
    images = parse_idx_images(_read_bytes(images_path))
    labels = parse_idx_labels(_read_bytes(labels_path))
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(x, labels.astype(np.int64), num_classes, split, name)


def write_idx_images(path, images: np.ndarray, compress: bool = False) -> None:
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    raw = struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols) + images.tobytes()
    Path(path).write_bytes(gzip.compress(raw, mtime=0) if compress else raw)


def write_idx_labels(path, labels: np.ndarray, compress: bool = False) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    raw = struct.pack(">II", LABEL_MAGIC, labels.size) + labels.tobytes()
    Path(path).write_bytes(gzip.compress(raw, mtime=0) if compress else raw)


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def data_dir() -> Path:
    return Path(os.environ.get("BATCHSEL_DATA_DIR", Path.cwd() / "data"))


def _find(root: Path, stem: str) -> Path:
    for cand in (root / stem, root / f"{stem}.gz", root / "mnist" / stem, root / "mnist" / f"{stem}.gz"):
        if cand.exists():
            return cand
    raise FileNotFoundError(f"{stem}[.gz] not found under {root} (set BATCHSEL_DATA_DIR or run scripts/fetch_mnist.py)")


def load_mnist(split: str = "train", root=None) -> Dataset:
    root = Path(root) if root is not None else data_dir()
    img, lab = MNIST_FILES[split]
    return load_idx(_find(root, img), _find(root, lab), split=split, name="mnist")


def mnist_available(root=None) -> bool:
    try:
        root = Path(root) if root is not None else data_dir()
        for img, lab in MNIST_FILES.values():
            _find(root, img), _find(root, lab)
    except FileNotFoundError:
        return False
    return True


# ---------------------------------------------------------------------------
# synthetic data


def synth_blobs(num_per_class: int, k: int, d: int, spread: float, seed: int,
                center_scale: float = 1.0, name: str = "blobs",
                clusters_per_class: int = 1) -> tuple[Dataset, Dataset]:
    """Isotropic Gaussian clusters, ``clusters_per_class`` of them per class; 80/20 split per class.

    Centers are drawn from ``N(0, center_scale**2)``; each point picks one of
    its class's centers uniformly and adds ``N(0, spread**2)`` noise.  With
    several clusters per class the class regions are not convex, so a linear
    model cannot fit them.  Everything derives from ``seed``.
    """
    m = clusters_per_class
    if min(num_per_class, k, d, m) < 1 or spread < 0:
        raise ValueError("num_per_class, k, d, clusters_per_class must be positive and spread non-negative")
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, center_scale, size=(k, m, d))
    n_train = int(round(0.8 * num_per_class))
    xs_tr, ys_tr, xs_te, ys_te = [], [], [], []
    for c in range(k):
        comp = rng.integers(0, m, size=num_per_class) if m > 1 else np.zeros(num_per_class, dtype=np.int64)
        pts = centers[c, comp] + spread * rng.normal(size=(num_per_class, d))
        xs_tr.append(pts[:n_train])
        xs_te.append(pts[n_train:])
        ys_tr.append(np.full(n_train, c))
        ys_te.append(np.full(num_per_class - n_train, c))
    x_tr, y_tr = np.concatenate(xs_tr), np.concatenate(ys_tr)
    x_te, y_te = np.concatenate(xs_te), np.concatenate(ys_te)
    perm_tr = rng.permutation(y_tr.size)
    perm_te = rng.permutation(y_te.size)
    meta = {"num_per_class": num_per_class, "d": d, "spread": spread, "seed": seed,
            "center_scale": center_scale, "clusters_per_class": m}
    return (Dataset(x_tr[perm_tr], y_tr[perm_tr], k, "train", name, meta),
            Dataset(x_te[perm_te], y_te[perm_te], k, "test", name, meta))


def subset(ds: Dataset, n: int, seed: int) -> Dataset:
    """Subset of size ``n`` with (as near as possible) equal samples per class.

    Shares are filled level by level: every class with spare samples gets one
    more until ``n`` is reached, lower class ids first within a level.  So
    ``n`` divisible by ``k`` gives exactly ``n / k`` per class whenever every
    class is large enough.  Achieved counts go to ``meta["class_counts"]``.
    Samples within a class are chosen uniformly; the result keeps the
    original relative order.
    """
    total = len(ds)
    if not 0 < n <= total:
        raise ValueError(f"subset size {n} outside (0, {total}]")
    counts = np.bincount(ds.labels, minlength=ds.num_classes)
    take = np.zeros(ds.num_classes, dtype=np.int64)
    remaining = n
    while remaining:
        open_classes = np.flatnonzero(take < counts)
        level = remaining // open_classes.size
        if level == 0:
            take[open_classes[:remaining]] += 1
            break
        add = np.minimum(level, counts[open_classes] - take[open_classes])
        take[open_classes] += add
        remaining -= int(add.sum())
    rng = np.random.default_rng(seed)
    chosen = []
    for c in range(ds.num_classes):
        members = np.flatnonzero(ds.labels == c)
        chosen.append(rng.choice(members, size=int(take[c]), replace=False))
    idx = np.sort(np.concatenate(chosen))
    meta = dict(ds.meta, class_counts=take.tolist(), subset_seed=seed, parent_size=total)
    return Dataset(ds.inputs[idx], ds.labels[idx], ds.num_classes, ds.split, f"{ds.name}-{n}", meta)
