"""Materialize the MNIST IDX files under $BATCHSEL_DATA_DIR/mnist (default ./data/mnist).

Tries the canonical mirrors first.  When they are unreachable, rebuilds the
four IDX files from the ``mnist.pkl.gz`` bundled in the ``mnist-hub`` wheel on
PyPI: that pickle stores the original 60k training images (as 50k train + 10k
validation, original order) and the 10k test images with pixel values
``byte / 256``, so the raw bytes are recovered exactly.
"""

import argparse
import gzip
import pickle
import subprocess
import sys
import tempfile
import urllib.request
import zipfile
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))
from batchsel.data import MNIST_FILES, data_dir, load_mnist, write_idx_images, write_idx_labels  # noqa: E402

MIRRORS = [
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
]
# per-class counts of the official splits, used as a sanity check
TRAIN_COUNTS = [5923, 6742, 5958, 6131, 5842, 5421, 5918, 6265, 5851, 5949]
TEST_COUNTS = [980, 1135, 1032, 1010, 982, 892, 958, 1028, 974, 1009]


def from_mirrors(out: Path) -> bool:
    for base in MIRRORS:
        try:
            for img, lab in MNIST_FILES.values():
                for stem in (img, lab):
                    with urllib.request.urlopen(base + stem + ".gz", timeout=20) as r:
                        (out / f"{stem}.gz").write_bytes(r.read())
            return True
        except OSError as exc:
            print(f"mirror {base} failed: {exc}")
    return False


def from_pypi_pickle(out: Path) -> None:
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "-q",
                        "-d", tmp, "mnist-hub==0.1.4"], check=True)
        wheel = next(Path(tmp).glob("mnist_hub-*.whl"))
        with zipfile.ZipFile(wheel) as zf:
            blob = zf.read("mnist/data/mnist.pkl.gz")
    train, valid, test = pickle.loads(gzip.decompress(blob), encoding="latin1")

    def to_bytes(x):
        b = np.asarray(x, dtype=np.float64) * 256.0
        if np.abs(b - np.round(b)).max() > 0:
            raise ValueError("pickle pixels are not multiples of 1/256")
        return np.round(b).astype(np.uint8).reshape(-1, 28, 28)

    x_train = np.concatenate([to_bytes(train[0]), to_bytes(valid[0])])
    y_train = np.concatenate([train[1], valid[1]]).astype(np.uint8)
    x_test, y_test = to_bytes(test[0]), np.asarray(test[1], dtype=np.uint8)
    for (img, lab), x, y in ((MNIST_FILES["train"], x_train, y_train), (MNIST_FILES["test"], x_test, y_test)):
        write_idx_images(out / f"{img}.gz", x, compress=True)
        write_idx_labels(out / f"{lab}.gz", y, compress=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=None)
    ap.add_argument("--skip-mirrors", action="store_true")
    args = ap.parse_args()
    out = args.out or data_dir() / "mnist"
    out.mkdir(parents=True, exist_ok=True)
    if args.skip_mirrors or not from_mirrors(out):
        print("rebuilding IDX files from the mnist-hub pickle")
        from_pypi_pickle(out)
    train, test = load_mnist("train", out), load_mnist("test", out)
    assert np.bincount(train.labels).tolist() == TRAIN_COUNTS
    assert np.bincount(test.labels).tolist() == TEST_COUNTS
    print(f"wrote {out}: train {train.inputs.shape}, test {test.inputs.shape}")


if __name__ == "__main__":
    main()
