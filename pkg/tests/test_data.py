import gzip

import numpy as np
import pytest
from hypothesis import given, strategies as st

from eswish.data import (
    CountMismatchError,
    IdxError,
    TruncatedError,
    WrongMagicError,
    load_idx,
    load_mnist,
    split,
    synthetic_dataset,
    write_idx,
)
from eswish.experiments import TrainConfig, train
from eswish.network import DenseSpec
from eswish.numerics import DomainError, make_rng


def fixture_pair(tmp_path, n=5, rows=28, cols=28, seed=0):
    rng = make_rng(seed)
    images = rng.integers(0, 256, (n, rows, cols), dtype=np.uint8)
    labels = rng.integers(0, 10, n, dtype=np.uint8)
    ip, lp = tmp_path / "images-idx3-ubyte", tmp_path / "labels-idx1-ubyte"
    write_idx(ip, images)
    write_idx(lp, labels)
    return ip, lp, images, labels


def test_round_trip(tmp_path):
    ip, lp, images, labels = fixture_pair(tmp_path)
    x, y = load_idx(ip, lp)
    assert x.shape == (5, 784)
    assert np.array_equal((x * 255).round().astype(np.uint8).reshape(5, 28, 28), images)
    assert np.array_equal(y, labels)
    assert x.min() >= 0 and x.max() <= 1


@given(st.integers(1, 6), st.integers(1, 5), st.integers(1, 5), st.integers(0, 1000))
def test_round_trip_shapes(n, rows, cols, seed):
    import tempfile
    from pathlib import Path
    with tempfile.TemporaryDirectory() as d:
        ip, lp, images, labels = fixture_pair(Path(d), n, rows, cols, seed)
        x, y = load_idx(ip, lp)
        assert np.array_equal(np.rint(x * 255).astype(np.uint8), images.reshape(n, -1))


def test_gzip(tmp_path):
    ip, lp, images, _ = fixture_pair(tmp_path)
    gz = tmp_path / "images.gz"
    gz.write_bytes(gzip.compress(ip.read_bytes()))
    assert np.array_equal(load_idx(gz, lp)[0], load_idx(ip, lp)[0])


def test_wrong_magic(tmp_path):
    ip, lp, *_ = fixture_pair(tmp_path)
    with pytest.raises(WrongMagicError, match="expected 0x00000803, got 0x00000801"):
        load_idx(lp, lp)


def test_truncated(tmp_path):
    ip, lp, *_ = fixture_pair(tmp_path)
    ip.write_bytes(ip.read_bytes()[:-1])
    with pytest.raises(TruncatedError):
        load_idx(ip, lp)
    ip.write_bytes(b"\x00\x00")
    with pytest.raises(TruncatedError):
        load_idx(ip, lp)


def test_count_mismatch(tmp_path):
    ip, lp, images, labels = fixture_pair(tmp_path)
    write_idx(lp, labels[:-1])
    with pytest.raises(CountMismatchError):
        load_idx(ip, lp)


def test_error_taxonomy_is_distinct():
    assert len({WrongMagicError, TruncatedError, CountMismatchError}) == 3
    assert all(issubclass(e, IdxError) for e in (WrongMagicError, TruncatedError, CountMismatchError))


def test_split():
    x = np.arange(100, dtype=float).reshape(100, 1)
    y = np.arange(100)
    tx, ty, vx, vy = split(x, y, 0.1)
    assert len(tx) == 90 and len(vx) == 10
    assert ty.tolist() == list(range(90)) and vy.tolist() == list(range(90, 100))
    again = split(x, y, 0.1)
    assert all(np.array_equal(a, b) for a, b in zip((tx, ty, vx, vy), again))


@pytest.mark.parametrize("fraction", [0.0, 0.5, 0.7, -0.1])
def test_split_bounds(fraction):
    with pytest.raises(DomainError):
        split(np.zeros((10, 1)), np.zeros(10), fraction)


def test_load_mnist_layout(tmp_path, monkeypatch):
    rng = make_rng(1)
    write_idx(tmp_path / "train-images-idx3-ubyte", rng.integers(0, 256, (20, 28, 28), dtype=np.uint8))
    write_idx(tmp_path / "train-labels-idx1-ubyte", rng.integers(0, 10, 20, dtype=np.uint8))
    (tmp_path / "t10k-images-idx3-ubyte.gz").write_bytes(gzip.compress(
        bytes.fromhex("00000803") + (4).to_bytes(4, "big") + (28).to_bytes(4, "big") * 2 + bytes(4 * 784)))
    write_idx(tmp_path / "t10k-labels-idx1-ubyte", np.zeros(4, dtype=np.uint8))
    monkeypatch.setenv("ESWISH_DATA_DIR", str(tmp_path))
    d = load_mnist()
    assert (len(d.train_y), len(d.val_y), len(d.test_y)) == (18, 2, 4)
    assert d.num_classes == 10 and d.source == "mnist"


def test_synthetic_deterministic():
    a, b = synthetic_dataset(3, 20, 4, 16), synthetic_dataset(3, 20, 4, 16)
    for f in ("train_x", "train_y", "val_x", "val_y", "test_x", "test_y"):
        assert np.array_equal(getattr(a, f), getattr(b, f))


def test_synthetic_invariants():
    d = synthetic_dataset(0, 50, 5, 30)
    xs = np.concatenate([d.train_x, d.val_x, d.test_x])
    assert xs.min() == 0.0 and xs.max() == 1.0
    assert len(xs) == 250
    assert max(d.train_y.max(), d.test_y.max()) < 5


def test_synthetic_two_classes_linearly_separable():
    d = synthetic_dataset(1, 200, 2, 20)
    m = train([DenseSpec(20, 2)], d, TrainConfig(lr=0.1, batch_size=16, epochs=10, seed=0))
    assert m.records[-1].train_acc > 0.95
