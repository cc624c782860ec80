"""MNIST IDX loading, deterministic splitting and a synthetic stand-in dataset."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import DomainError, make_rng

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
DATA_DIR_ENV = "ESWISH_DATA_DIR"

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class IdxError(ValueError):
    """Base class for malformed IDX files."""


class WrongMagicError(IdxError):
    def __init__(self, path, expected: int, actual: int):
        super().__init__(f"{path}: wrong magic, expected 0x{expected:08x}, got 0x{actual:08x}")
        self.expected, self.actual = expected, actual


class TruncatedError(IdxError):
    def __init__(self, path, expected: int, actual: int):
        super().__init__(f"{path}: truncated payload, expected {expected} bytes, got {actual}")


class CountMismatchError(IdxError):
    def __init__(self, n_images: int, n_labels: int):
        super().__init__(f"image count {n_images} != label count {n_labels}")


def _read(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse(path, raw: bytes, magic: int, ndim: int) -> np.ndarray:
    header = 4 + 4 * ndim
    if len(raw) < 4:
        raise TruncatedError(path, header, len(raw))
    (actual,) = struct.unpack_from(">I", raw, 0)
    if actual != magic:
        raise WrongMagicError(path, magic, actual)
    if len(raw) < header:
        raise TruncatedError(path, header, len(raw))
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    size = int(np.prod(dims))
    if len(raw) - header != size:
        if len(raw) - header < size:
            raise TruncatedError(path, header + size, len(raw))
        raise IdxError(f"{path}: {len(raw) - header - size} trailing bytes after payload")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Read an IDX image/label pair; images come back as (n, rows*cols) floats in [0, 1]."""
    images = _parse(images_path, _read(images_path), IMAGES_MAGIC, 3)
    labels = _parse(labels_path, _read(labels_path), LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(images.shape[0], labels.shape[0])
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return x, labels.astype(np.int64)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as IDX (magic 0x801 for 1-D, 0x803 for 3-D)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = {1: LABELS_MAGIC, 3: IMAGES_MAGIC}[array.ndim]
    header = struct.pack(f">I{array.ndim}I", magic, *array.shape)
    Path(path).write_bytes(header + array.tobytes())


@dataclass
class Dataset:
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    num_classes: int
    source: str

    @property
    def n_features(self) -> int:
        return self.train_x.shape[1]

    def subset(self, fraction: float) -> "Dataset":
        """Keep the leading ``fraction`` of the train and validation parts; test is untouched."""
        def head(a):
            return a[: max(2, int(len(a) * fraction))]
        return Dataset(head(self.train_x), head(self.train_y), head(self.val_x), head(self.val_y),
                       self.test_x, self.test_y, self.num_classes, self.source)


def split(x: np.ndarray, y: np.ndarray, val_fraction: float):
    """Tail split: the last ``floor(n * val_fraction)`` rows become validation."""
    if not 0.0 < val_fraction < 0.5:
        raise DomainError(f"val_fraction must lie in (0, 0.5), got {val_fraction}")
    cut = len(x) - int(len(x) * val_fraction)
    return x[:cut], y[:cut], x[cut:], y[cut:]


def find_data_dir(data_dir=None) -> Path:
    data_dir = data_dir or os.environ.get(DATA_DIR_ENV)
    if not data_dir:
        raise FileNotFoundError(f"no MNIST directory given; pass --data-dir or set {DATA_DIR_ENV}")
    return Path(data_dir)


def _locate(data_dir: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        if (data_dir / name).exists():
            return data_dir / name
    raise FileNotFoundError(f"{stem}[.gz] not found in {data_dir}")


def load_mnist(data_dir=None, val_fraction: float = 0.1) -> Dataset:
    d = find_data_dir(data_dir)
    tx, ty = load_idx(*(_locate(d, s) for s in MNIST_FILES["train"]))
    test_x, test_y = load_idx(*(_locate(d, s) for s in MNIST_FILES["test"]))
    train_x, train_y, val_x, val_y = split(tx, ty, val_fraction)
    return Dataset(train_x, train_y, val_x, val_y, test_x, test_y, 10, "mnist")


def synthetic_dataset(seed: int, n_per_class: int, num_classes: int = 10, dim: int = 784,
                      radius: float = 200.0, spread: float = 1.0, active_fraction: float = 0.0625,
                      val_fraction: float = 0.1, test_fraction: float = 1 / 7) -> Dataset:
    """Gaussian blobs around sparse, non-negative class means of norm ``radius``.

    Each class mean lights up a random ``active_fraction`` of the features, so
    after the global min-max squash to [0, 1] most inputs sit near 0 with bright
    class-specific "strokes", much like MNIST pixels. Rows are shuffled once
    with the seeded generator; the last ``test_fraction`` becomes the test set
    and the rest is tail-split for validation.
    """
    if min(n_per_class, num_classes, dim) < 1:
        raise DomainError("n_per_class, num_classes and dim must all be positive")
    rng = make_rng(seed)
    k = max(1, int(round(dim * active_fraction)))
    means = np.zeros((num_classes, dim))
    for c in range(num_classes):
        means[c, rng.choice(dim, k, replace=False)] = radius / np.sqrt(k)
    y = np.repeat(np.arange(num_classes), n_per_class)
    x = means[y] + spread * rng.standard_normal((len(y), dim))
    lo, hi = x.min(), x.max()
    x = (x - lo) / (hi - lo)
    order = rng.permutation(len(y))
    x, y = x[order], y[order]
    n_test = int(len(y) * test_fraction)
    cut = len(y) - n_test
    train_x, train_y, val_x, val_y = split(x[:cut], y[:cut], val_fraction)
    return Dataset(train_x, train_y, val_x, val_y, x[cut:], y[cut:], num_classes, "synthetic")
