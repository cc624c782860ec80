"""Dense float64 matrices, seeded generators and Glorot initialisation.

A ``Matrix`` is a plain 2-D ``numpy.ndarray`` of dtype float64 in C (row-major)
order. The generator is numpy's PCG64 bit generator, so a given seed yields the
same stream on every platform numpy supports.
"""
from __future__ import annotations

import math

import numpy as np

Matrix = np.ndarray
Rng = np.random.Generator


class ShapeError(ValueError):
    """Operands have incompatible dimensions."""


class DomainError(ValueError):
    """An argument lies outside the domain an operation accepts."""


def as_matrix(data, cols: int | None = None) -> Matrix:
    """Coerce ``data`` to a contiguous float64 2-D array.

    1-D input becomes a single row unless ``cols`` is given, in which case the
    flat data is reshaped row-major into ``(-1, cols)``.
    """
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if cols is not None:
        if arr.size % cols:
            raise ShapeError(f"cannot reshape {arr.size} values into rows of {cols}")
        arr = arr.reshape(-1, cols)
    elif arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"expected a non-empty 2-D matrix, got shape {arr.shape}")
    return arr


def identity(n: int) -> Matrix:
    return np.eye(n, dtype=np.float64)


def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def make_rng(seed: int) -> Rng:
    """PCG64 generator for a 64-bit unsigned seed."""
    if not 0 <= int(seed) < 2**64:
        raise DomainError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.PCG64(int(seed)))


def glorot_limit(fan_in: int, fan_out: int) -> float:
    if fan_in < 1 or fan_out < 1:
        raise DomainError(f"fan_in and fan_out must be >= 1, got ({fan_in}, {fan_out})")
    return math.sqrt(6.0 / (fan_in + fan_out))


def glorot_uniform(fan_in: int, fan_out: int, rng: Rng, scale: float = 1.0) -> Matrix:
    """Uniform(-L, L) weights of shape (fan_in, fan_out), L = sqrt(6 / (fan_in + fan_out))."""
    limit = glorot_limit(fan_in, fan_out)
    return scale * rng.uniform(-limit, limit, size=(fan_in, fan_out))
