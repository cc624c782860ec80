"""Finite-difference checks behind ``eswish grad-check``."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .activations import ActivationSpec, activation_forward, activation_grad
from .network import (
    ActivationLayerSpec,
    Batch,
    BatchNormSpec,
    DenseSpec,
    DropoutSpec,
    Network,
    grad_check,
)
from .numerics import make_rng

SMALL_GRAD = 1e-3
ABS_TOL = 1e-8


@dataclass
class ScalarCheck:
    spec: ActivationSpec
    max_rel_err: float  # over points with |grad| >= SMALL_GRAD
    max_abs_err: float  # over points with |grad| < SMALL_GRAD
    worst_x: float
    skipped: list[float] = field(default_factory=list)

    def passed(self, tol: float) -> bool:
        return self.max_rel_err < tol and self.max_abs_err < ABS_TOL


def check_grid(lo: float = -10.0, hi: float = 10.0, step: float = 0.05) -> np.ndarray:
    n = int(round((hi - lo) / step))
    return (lo + step * np.arange(n + 1)).round(12)


def scalar_grad_check(spec: ActivationSpec, xs: np.ndarray | None = None, h: float = 1e-5) -> ScalarCheck:
    """Compare ``activation_grad`` with central differences of ``activation_forward``.

    Where the second derivative jumps (x == 0 for ReLU and ELU) central
    differences are only first-order accurate, so that point is skipped and
    listed in ``skipped``.
    """
    xs = check_grid() if xs is None else np.asarray(xs, dtype=np.float64)
    skipped = [] if spec.smooth_at_zero else [float(x) for x in xs if x == 0.0]
    if skipped:
        xs = xs[xs != 0.0]
    z = xs.reshape(1, -1)
    analytic = activation_grad(spec, z).ravel()
    numeric = ((activation_forward(spec, z + h) - activation_forward(spec, z - h)) / (2 * h)).ravel()
    err = np.abs(analytic - numeric)
    big = np.abs(analytic) >= SMALL_GRAD
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), SMALL_GRAD)
    rel = np.where(big, err / denom, 0.0)
    absr = np.where(big, 0.0, err)
    score = np.maximum(rel, absr / ABS_TOL * 1e-6)
    return ScalarCheck(spec, float(rel.max(initial=0.0)), float(absr.max(initial=0.0)),
                       float(xs[int(score.argmax())]), skipped)


def check_network(spec: ActivationSpec, seed: int = 0, in_features: int = 12, hidden: int = 20,
                  classes: int = 5) -> Network:
    """Three hidden layers, the middle one with BatchNorm and the last with dropout."""
    specs = [
        DenseSpec(in_features, hidden), ActivationLayerSpec(spec),
        DenseSpec(hidden, hidden, bias=False), BatchNormSpec(hidden), ActivationLayerSpec(spec),
        DenseSpec(hidden, hidden), ActivationLayerSpec(spec), DropoutSpec(0.2),
        DenseSpec(hidden, classes),
    ]
    return Network(specs, make_rng(seed + 1))


def network_grad_check(spec: ActivationSpec, seed: int = 0, h: float = 1e-5, batch: int = 32) -> float:
    """Backprop vs central differences on ``check_network``.

    Inputs are zero-centred so no ReLU unit is active on every row: such a
    unit's bias shifts the next Dense output uniformly, BatchNorm cancels the
    shift exactly, and the zero true gradient would be swamped by one ulp of
    loss divided by 2h.
    """
    rng = make_rng(seed)
    net = check_network(spec, seed)
    x = rng.uniform(-1.0, 1.0, (batch, 12))
    y = rng.integers(0, 5, batch)
    return grad_check(net, Batch(x, y), h=h, seed=seed, n_samples=400)
