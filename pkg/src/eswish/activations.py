"""Activation functions and their derivatives.

E-swish is ``beta * x * sigmoid(x)`` with a fixed, non-learnable ``beta``; at
``beta == 1`` it is Swish. The derivative is written in the form
``f(x) + sigmoid(x) * (beta - f(x))``.
"""
from __future__ import annotations

import enum
import math
import re
import warnings
from dataclasses import dataclass

import numpy as np

from .numerics import DomainError, Matrix


class ConfigurationError(ValueError):
    """Unknown or malformed activation specification."""


class Kind(enum.Enum):
    ESWISH = "eswish"
    SWISH = "swish"
    RELU = "relu"
    ELU = "elu"
    SOFTPLUS = "softplus"
    SIGMOID = "sigmoid"
    TANH = "tanh"
    # identity map, used to check that an all-affine landscape network stays affine
    LINEAR = "linear"


RECOMMENDED_BETA = (1.0, 2.0)


@dataclass(frozen=True)
class ActivationSpec:
    kind: Kind
    beta: float = 1.0
    elu_alpha: float = 1.0

    def __post_init__(self):
        if not isinstance(self.kind, Kind):
            raise ConfigurationError(f"unknown activation kind {self.kind!r}")
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise DomainError(f"beta must be finite and > 0, got {self.beta}")
        if self.kind is Kind.ESWISH and not RECOMMENDED_BETA[0] <= self.beta <= RECOMMENDED_BETA[1]:
            warnings.warn(
                f"beta={self.beta} is outside the recommended range [1, 2]", stacklevel=3
            )

    @classmethod
    def parse(cls, text: str) -> "ActivationSpec":
        """Parse the canonical text form: ``relu``, ``swish``, ``eswish:1.5`` ..."""
        text = text.strip().lower()
        name, sep, arg = text.partition(":")
        try:
            kind = Kind(name)
        except ValueError:
            raise ConfigurationError(f"unknown activation {text!r}") from None
        if kind is Kind.ESWISH:
            if not sep or not re.fullmatch(r"\d+(\.\d+)?", arg):
                raise ConfigurationError(f"expected eswish:<beta>, got {text!r}")
            return cls(kind, beta=float(arg))
        if sep:
            raise ConfigurationError(f"{name} takes no parameter, got {text!r}")
        return cls(kind)

    def __str__(self) -> str:
        if self.kind is Kind.ESWISH:
            return f"eswish:{self.beta:g}"
        return self.kind.value

    @property
    def smooth_at_zero(self) -> bool:
        """False where the second derivative jumps at 0, which spoils central differences there."""
        return self.kind not in (Kind.RELU, Kind.ELU)


def parse_activations(text: str) -> list[ActivationSpec]:
    return [ActivationSpec.parse(part) for part in text.split(",") if part.strip()]


# ---------------------------------------------------------------- scalar maps


def _check_scalar(x: float) -> None:
    if not math.isfinite(x):
        raise DomainError(f"activation input must be finite, got {x}")


def _check_beta(beta: float) -> None:
    if not (math.isfinite(beta) and beta > 0):
        raise DomainError(f"beta must be finite and > 0, got {beta}")


def sigmoid_stable(x: float) -> float:
    if math.isnan(x):
        raise DomainError("sigmoid of NaN")
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def swish(x: float) -> float:
    _check_scalar(x)
    return x * sigmoid_stable(x)


def eswish(beta: float, x: float) -> float:
    _check_beta(beta)
    _check_scalar(x)
    return beta * x * sigmoid_stable(x)


def eswish_grad(beta: float, x: float) -> float:
    f = eswish(beta, x)
    return f + sigmoid_stable(x) * (beta - f)


def eswish_min(beta: float, tol: float = 1e-12) -> tuple[float, float]:
    """Global minimiser and minimum of E-swish.

    The derivative changes sign exactly once on x < 0, so bisection on it
    over [-10, 0] finds the minimiser.
    """
    _check_beta(beta)
    lo, hi = -10.0, 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if eswish_grad(beta, mid) < 0:
            lo = mid
        else:
            hi = mid
    x_min = 0.5 * (lo + hi)
    return x_min, eswish(beta, x_min)


# --------------------------------------------------------------- array maps


def sigmoid(z: Matrix) -> Matrix:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _softplus(z: Matrix) -> Matrix:
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _check_finite(z: Matrix) -> None:
    if not np.isfinite(z).all():
        raise DomainError("activation input contains NaN or Inf")


def activation_forward(spec: ActivationSpec, z: Matrix) -> Matrix:
    _check_finite(z)
    kind = spec.kind
    if kind is Kind.ESWISH:
        return spec.beta * z * sigmoid(z)
    if kind is Kind.SWISH:
        return z * sigmoid(z)
    if kind is Kind.RELU:
        return np.maximum(z, 0.0)
    if kind is Kind.ELU:
        return np.where(z > 0, z, spec.elu_alpha * np.expm1(np.minimum(z, 0.0)))
    if kind is Kind.SOFTPLUS:
        return _softplus(z)
    if kind is Kind.SIGMOID:
        return sigmoid(z)
    if kind is Kind.TANH:
        return np.tanh(z)
    if kind is Kind.LINEAR:
        return z.copy()
    raise ConfigurationError(f"unknown activation kind {kind!r}")


def activation_grad(spec: ActivationSpec, z: Matrix) -> Matrix:
    """Elementwise derivative w.r.t. the pre-activation. ReLU'(0) is taken as 0."""
    _check_finite(z)
    kind = spec.kind
    if kind is Kind.ESWISH or kind is Kind.SWISH:
        s = sigmoid(z)
        f = spec.beta * z * s if kind is Kind.ESWISH else z * s
        beta = spec.beta if kind is Kind.ESWISH else 1.0
        return f + s * (beta - f)
    if kind is Kind.RELU:
        return (z > 0).astype(np.float64)
    if kind is Kind.ELU:
        return np.where(z > 0, 1.0, spec.elu_alpha * np.exp(np.minimum(z, 0.0)))
    if kind is Kind.SOFTPLUS:
        return sigmoid(z)
    if kind is Kind.SIGMOID:
        s = sigmoid(z)
        return s * (1.0 - s)
    if kind is Kind.TANH:
        t = np.tanh(z)
        return 1.0 - t * t
    if kind is Kind.LINEAR:
        return np.ones_like(z)
    raise ConfigurationError(f"unknown activation kind {kind!r}")
