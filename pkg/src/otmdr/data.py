"""Datasets, batching, IDX files and the two-moons generator."""

from __future__ import annotations

import dataclasses
import gzip
import importlib.util
import os
import struct
from pathlib import Path

import numpy as np

from otmdr.errors import BadMagicError, CountMismatchError, IdxFormatError, TruncatedFileError
from otmdr.rng import RngStream

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


@dataclasses.dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    labels: np.ndarray
    indices: np.ndarray

    def __len__(self):
        return int(self.labels.shape[0])

    def subset(self, positions) -> Batch:
        positions = np.asarray(positions, dtype=np.int_)
        return Batch(self.inputs[positions], self.labels[positions], self.indices[positions])


@dataclasses.dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError(f"inputs has {self.inputs.shape[0]} rows, labels {self.labels.shape[0]}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError(f"labels outside [0, {self.n_classes})")
        if not np.all(np.isfinite(self.inputs)):
            raise ValueError("non-finite inputs")

    def __len__(self):
        return int(self.labels.shape[0])

    def as_batch(self) -> Batch:
        return Batch(self.inputs, self.labels, np.arange(len(self)))

    def subset(self, rows) -> Dataset:
        rows = np.asarray(rows, dtype=np.int_)
        return Dataset(self.inputs[rows], self.labels[rows], self.n_classes)


def empty_batch(dim: int) -> Batch:
    return Batch(np.zeros((0, dim)), np.zeros(0, dtype=np.int_), np.zeros(0, dtype=np.int_))


def dummy_batch(n: int) -> Batch:
    """Batch of ``n`` placeholder rows for heads whose loss ignores the data."""
    return Batch(np.zeros((n, 1)), np.zeros(n, dtype=np.int_), np.arange(n))


# ---------------------------------------------------------------- IDX files


def read_idx(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: header truncated")
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or dtype_code != 0x08:
        raise BadMagicError(f"{path}: bad magic 0x{int.from_bytes(raw[:4], 'big'):08x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: dimension table truncated")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims)) if dims else 1
    if len(raw) - header < count:
        raise TruncatedFileError(f"{path}: expected {count} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims).copy()


def write_idx(path, array: np.ndarray):
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise IdxFormatError("only unsigned-byte IDX payloads are supported")
    with open(path, "wb") as f:
        f.write(struct.pack(">HBB", 0, 0x08, array.ndim))
        f.write(struct.pack(f">{array.ndim}I", *array.shape))
        f.write(np.ascontiguousarray(array).tobytes())


def _expect_magic(path, expected):
    with open(path, "rb") as f:
        head = f.read(4)
    if len(head) < 4:
        raise TruncatedFileError(f"{path}: header truncated")
    magic = int.from_bytes(head, "big")
    if magic != expected:
        raise BadMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{expected:08x}")


def load_idx_raw(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Pixel array (n, rows*cols) as uint8 plus labels, validated against each other."""
    _expect_magic(images_path, IMAGE_MAGIC)
    _expect_magic(labels_path, LABEL_MAGIC)
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(f"images={images.shape[0]} labels={labels.shape[0]}")
    return images.reshape(images.shape[0], -1), labels.astype(np.int_)


def load_idx(images_path, labels_path, stats=None, n_classes=None) -> Dataset:
    """Load an IDX image/label pair, scale to [0, 1] and standardize.

    ``stats=(mean, std)`` reuses another split's statistics (e.g. the training
    set's for a test set); otherwise the file's own are used.
    """
    pixels, labels = load_idx_raw(images_path, labels_path)
    x = pixels.astype(np.float64) / 255.0
    mean, std = stats if stats is not None else (float(x.mean()), float(x.std()))
    x = (x - mean) / std
    return Dataset(x, labels, n_classes or int(labels.max()) + 1)


def idx_stats(images_path) -> tuple[float, float]:
    x = read_idx(images_path).astype(np.float64) / 255.0
    return float(x.mean()), float(x.std())


# ---------------------------------------------------------------- generators


def make_two_moons(n: int, noise: float, seed: int) -> Dataset:
    """Two interleaved half circles; class 0 on the upper unit arc."""
    if n < 2:
        raise ValueError("two moons needs n >= 2")
    n0 = (n + 1) // 2
    n1 = n // 2
    t0 = np.linspace(0.0, np.pi, n0)
    t1 = np.linspace(0.0, np.pi, n1)
    upper = np.stack([np.cos(t0), np.sin(t0)], axis=1)
    lower = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    x = np.concatenate([upper, lower])
    if noise > 0:
        x = x + RngStream(seed, purpose="two_moons").normal(2 * n, std=noise).reshape(n, 2)
    y = np.concatenate([np.zeros(n0, dtype=np.int_), np.ones(n1, dtype=np.int_)])
    return Dataset(x, y, 2)


def batches(ds: Dataset, batch_size: int, rng_stream: RngStream | None = None, shuffle: bool = True) -> list[Batch]:
    n = len(ds)
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch_size {batch_size} outside [1, {n}]")
    order = rng_stream.permutation(n) if shuffle else np.arange(n)
    return [
        Batch(ds.inputs[idx], ds.labels[idx], idx)
        for idx in (order[i : i + batch_size] for i in range(0, n, batch_size))
    ]


def stratified_split(labels, n_take: int, rng_stream: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """Row ids (taken, rest) with exactly ``n_take`` taken rows.

    Per-class quotas are proportional to class frequency, rounded by largest
    remainder (ties to the lower class id); rows within a class are chosen by
    a per-class permutation.
    """
    labels = np.asarray(labels)
    if not 0 <= n_take <= labels.size:
        raise ValueError(f"cannot take {n_take} of {labels.size} rows")
    classes, counts = np.unique(labels, return_counts=True)
    exact = counts * (n_take / labels.size)
    quota = np.floor(exact).astype(np.int_)
    short = n_take - int(quota.sum())
    if short:
        order = np.argsort(-(exact - quota), kind="stable")
        quota[order[:short]] += 1
    taken = []
    for c, q in zip(classes, quota):
        rows = np.flatnonzero(labels == c)
        rows = rows[rng_stream.derive(particle=int(c)).permutation(rows.size)]
        taken.append(rows[:q])
    taken = np.sort(np.concatenate(taken)).astype(np.int_)
    rest = np.setdiff1d(np.arange(labels.size), taken)
    return taken, rest


# ---------------------------------------------------------------- MNIST subset


def _mlxtend_mnist_csv() -> Path:
    spec = importlib.util.find_spec("mlxtend")
    if spec is None or not spec.submodule_search_locations:
        raise FileNotFoundError("the MNIST subset needs the optional 'mlxtend' package (pip install otmdr[mnist])")
    path = Path(list(spec.submodule_search_locations)[0]) / "data" / "data" / "mnist_5k.csv.gz"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found in the mlxtend install")
    return path


def export_mnist_subset(out_dir, n_train: int = 2000, n_test: int = 1000, seed: int = 0) -> dict[str, Path]:
    """Write a label-stratified train/test MNIST subset as four IDX files.

    The source is the 5,000-digit sample bundled with mlxtend.
    """
    with gzip.open(_mlxtend_mnist_csv(), "rt") as f:
        table = np.loadtxt(f, delimiter=",", dtype=np.float64)
    pixels = table[:, :-1].astype(np.uint8)
    labels = table[:, -1].astype(np.int_)
    total = n_train + n_test
    if total > labels.size:
        raise ValueError(f"requested {total} digits, only {labels.size} available")
    rng = RngStream(seed, purpose="mnist_subset")
    pool, _ = stratified_split(labels, total, rng)
    test_pos, train_pos = stratified_split(labels[pool], n_test, rng.derive(purpose="mnist_subset_test"))
    train_rows, test_rows = pool[train_pos], pool[test_pos]
    os.makedirs(out_dir, exist_ok=True)
    out = {k: Path(out_dir) / v for k, v in MNIST_FILES.items()}
    write_idx(out["train_images"], pixels[train_rows].reshape(-1, 28, 28))
    write_idx(out["train_labels"], labels[train_rows].astype(np.uint8))
    write_idx(out["test_images"], pixels[test_rows].reshape(-1, 28, 28))
    write_idx(out["test_labels"], labels[test_rows].astype(np.uint8))
    return out


def load_mnist_dir(data_dir) -> tuple[Dataset, Dataset]:
    """Train/test datasets from a directory of MNIST-named IDX files.

    Both splits are standardized with the training split's statistics.
    """
    p = {k: Path(data_dir) / v for k, v in MNIST_FILES.items()}
    missing = [str(v) for v in p.values() if not v.exists()]
    if missing:
        raise FileNotFoundError(f"missing IDX files: {missing}")
    stats = idx_stats(p["train_images"])
    train = load_idx(p["train_images"], p["train_labels"], stats=stats)
    test = load_idx(p["test_images"], p["test_labels"], stats=stats, n_classes=train.n_classes)
    return train, test
