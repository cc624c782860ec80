"""SGD with classical momentum, learning-rate schedules and early stopping."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .numerics import ShapeError


class TrainingError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


def improved(best: float, metric: float) -> bool:
    """Strictly greater counts as improvement; ties do not."""
    return metric > best


@dataclass
class SgdState:
    lr: float
    momentum: float = 0.0
    velocity: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: SgdState,
             names: Sequence[str] | None = None) -> None:
    """In-place update ``v = momentum * v - lr * g; p = p + v``."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameter tensors but {len(grads)} gradients")
    if not state.velocity:
        state.velocity = [np.zeros_like(p) for p in params]
    for i, (p, g, v) in enumerate(zip(params, grads, state.velocity)):
        if p.shape != g.shape or p.shape != v.shape:
            raise ShapeError(f"tensor {i}: parameter {p.shape}, gradient {g.shape}, velocity {v.shape}")
        if not np.isfinite(g).all():
            label = names[i] if names else f"#{i}"
            raise TrainingError(f"non-finite gradient in parameter tensor {label}")
    for p, g, v in zip(params, grads, state.velocity):
        if state.momentum:
            v *= state.momentum
            v -= state.lr * g
        else:
            np.multiply(g, -state.lr, out=v)
        p += v


@dataclass
class PlateauSchedule:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without improvement."""

    factor: float = 0.35
    patience: int = 2
    best_metric: float = -math.inf
    epochs_since_improve: int = 0

    def __post_init__(self):
        if not 0.0 < self.factor < 1.0:
            raise ConfigError(f"plateau factor must lie in (0, 1), got {self.factor}")
        if self.patience < 1:
            raise ConfigError(f"plateau patience must be positive, got {self.patience}")


def plateau_update(sched: PlateauSchedule, val_metric: float, lr: float) -> float:
    if improved(sched.best_metric, val_metric):
        sched.best_metric = val_metric
        sched.epochs_since_improve = 0
        return lr
    sched.epochs_since_improve += 1
    if sched.epochs_since_improve >= sched.patience:
        sched.epochs_since_improve = 0
        return lr * sched.factor
    return lr


def step_schedule(epoch: int, milestones: Sequence[int], factor: float, base_lr: float) -> float:
    """``base_lr * factor ** (number of milestones <= epoch)``."""
    if any(b <= a for a, b in zip(milestones, milestones[1:])):
        raise ConfigError(f"milestones must be strictly increasing, got {list(milestones)}")
    return base_lr * factor ** sum(1 for m in milestones if m <= epoch)


@dataclass
class EarlyStop:
    patience: int = 5
    best_metric: float = -math.inf
    epochs_since_improve: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ConfigError(f"early-stop patience must be positive, got {self.patience}")


def early_stop_check(es: EarlyStop, val_metric: float) -> bool:
    if improved(es.best_metric, val_metric):
        es.best_metric = val_metric
        es.epochs_since_improve = 0
        return False
    es.epochs_since_improve += 1
    return es.epochs_since_improve >= es.patience
