"""Layers, forward/backward passes, softmax cross-entropy and gradient checking.

Every layer works on a (batch, features) float64 matrix. In TRAIN mode the
forward pass returns per-layer caches that ``Network.backward`` consumes in
reverse order; in INFER mode no caches are kept.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .activations import ActivationSpec, Kind, activation_forward, activation_grad
from .numerics import DomainError, Matrix, Rng, ShapeError, glorot_uniform, make_rng, matmul


class Mode(enum.Enum):
    TRAIN = "train"
    INFER = "infer"


class UsageError(RuntimeError):
    """An operation was called in a state where its result would be meaningless."""


class LabelError(ValueError):
    pass


# ------------------------------------------------------------------ specs


@dataclass(frozen=True)
class DenseSpec:
    in_features: int
    out_features: int
    bias: bool = True


@dataclass(frozen=True)
class BatchNormSpec:
    features: int


@dataclass(frozen=True)
class DropoutSpec:
    rate: float

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise DomainError(f"dropout rate must lie in [0, 1), got {self.rate}")


@dataclass(frozen=True)
class ActivationLayerSpec:
    activation: ActivationSpec


LayerSpec = Union[DenseSpec, BatchNormSpec, DropoutSpec, ActivationLayerSpec]


def validate_specs(specs: Sequence[LayerSpec]) -> None:
    """Check that Dense and BatchNorm widths chain through the stack."""
    width = None
    for i, spec in enumerate(specs):
        if isinstance(spec, DenseSpec):
            if width is not None and spec.in_features != width:
                raise ShapeError(f"layer {i}: Dense expects {spec.in_features} inputs, gets {width}")
            width = spec.out_features
        elif isinstance(spec, BatchNormSpec):
            if width is not None and spec.features != width:
                raise ShapeError(f"layer {i}: BatchNorm over {spec.features} features, gets {width}")
            width = spec.features
        elif not isinstance(spec, (DropoutSpec, ActivationLayerSpec)):
            raise TypeError(f"layer {i}: unknown layer spec {spec!r}")


def describe_specs(specs: Sequence[LayerSpec]) -> list[str]:
    out = []
    for i, s in enumerate(specs):
        if isinstance(s, DenseSpec):
            out.append(f"{i:3d} Dense({s.in_features}->{s.out_features}{'' if s.bias else ', no bias'})")
        elif isinstance(s, BatchNormSpec):
            out.append(f"{i:3d} BatchNorm({s.features})")
        elif isinstance(s, DropoutSpec):
            out.append(f"{i:3d} Dropout({s.rate:g})")
        else:
            out.append(f"{i:3d} Activation({s.activation})")
    return out


# ------------------------------------------------------------ dense layer


def dense_forward(W: Matrix, b: np.ndarray | None, x: Matrix) -> Matrix:
    out = matmul(x, W)
    if b is not None:
        out += b
    return out


@dataclass
class DenseCache:
    x: Matrix
    W: Matrix
    has_bias: bool = True


def dense_backward(cache: DenseCache, upstream_grad: Matrix):
    """Return ``(dW, db, dx)``; ``db`` is None for a bias-free layer."""
    x, W, g = cache.x, cache.W, upstream_grad
    if g.shape != (x.shape[0], W.shape[1]):
        raise ShapeError(f"upstream gradient {g.shape} does not match output {(x.shape[0], W.shape[1])}")
    dW = x.T @ g
    db = g.sum(axis=0) if cache.has_bias else None
    dx = g @ W.T
    return dW, db, dx


# ------------------------------------------------------- batch normalisation


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta_shift: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.9
    version: int = 0

    @classmethod
    def fresh(cls, features: int) -> "BatchNormParams":
        return cls(np.ones(features), np.zeros(features), np.zeros(features), np.ones(features))


@dataclass
class BatchNormCache:
    params: BatchNormParams
    version: int
    x_hat: Matrix
    inv_std: np.ndarray


def batchnorm_forward(params: BatchNormParams, x: Matrix, mode: Mode):
    """Normalise per feature. Returns ``(out, cache)``; cache is None in INFER mode.

    TRAIN uses the biased batch variance and folds batch statistics into the
    running estimates with ``running = momentum * running + (1 - momentum) * batch``.
    """
    if x.shape[1] != params.gamma.shape[0]:
        raise ShapeError(f"BatchNorm over {params.gamma.shape[0]} features got input {x.shape}")
    if mode is Mode.INFER:
        inv_std = 1.0 / np.sqrt(params.running_var + params.eps)
        return (x - params.running_mean) * inv_std * params.gamma + params.beta_shift, None
    if x.shape[0] < 2:
        raise DomainError("BatchNorm in TRAIN mode needs a batch of at least 2 rows")
    mean = x.mean(axis=0)
    centred = x - mean
    var = (centred * centred).mean(axis=0)
    inv_std = 1.0 / np.sqrt(var + params.eps)
    x_hat = centred * inv_std
    m = params.momentum
    params.running_mean = m * params.running_mean + (1.0 - m) * mean
    params.running_var = m * params.running_var + (1.0 - m) * var
    params.version += 1
    return x_hat * params.gamma + params.beta_shift, BatchNormCache(params, params.version, x_hat, inv_std)


def batchnorm_backward(cache: BatchNormCache, upstream_grad: Matrix):
    """Return ``(dgamma, dbeta_shift, dx)``."""
    if cache is None:
        raise UsageError("BatchNorm backward needs a cache from a TRAIN-mode forward")
    if cache.version != cache.params.version:
        raise UsageError("stale BatchNorm cache: the layer ran another forward pass since")
    g = upstream_grad
    x_hat = cache.x_hat
    dgamma = (g * x_hat).sum(axis=0)
    dbeta = g.sum(axis=0)
    gx = g * cache.params.gamma
    n = g.shape[0]
    dx = cache.inv_std / n * (n * gx - gx.sum(axis=0) - x_hat * (gx * x_hat).sum(axis=0))
    return dgamma, dbeta, dx


# ---------------------------------------------------------------- dropout


def dropout_forward(rate: float, x: Matrix, rng: Rng | None, mode: Mode):
    """Inverted dropout. Returns ``(out, mask)``; the mask already carries the 1/(1-rate) scale."""
    if not 0.0 <= rate < 1.0:
        raise DomainError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode is Mode.INFER or rate == 0.0:
        return x, np.ones_like(x)
    keep = rng.random(x.shape) >= rate
    mask = keep / (1.0 - rate)
    return x * mask, mask


# ------------------------------------------------------------------- loss


def softmax_cross_entropy(logits: Matrix, labels) -> tuple[float, Matrix]:
    """Mean negative log-likelihood and its gradient ``(softmax - onehot) / batch``."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise LabelError(f"expected {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise LabelError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    log_p = shifted[rows, labels] - log_z
    probs = np.exp(shifted - log_z[:, None])
    probs[rows, labels] -= 1.0
    return float(-log_p.mean()), probs / n


# ---------------------------------------------------------------- network


class Network:
    """A sequential stack of layers plus its parameter state.

    ``parameters()`` and ``backward`` agree on order: layer order, then
    W before b, gamma before beta_shift.
    """

    def __init__(self, specs: Sequence[LayerSpec], rng: Rng | None = None, init_scale: float = 1.0):
        specs = list(specs)
        validate_specs(specs)
        self.specs = specs
        self.mode = Mode.TRAIN
        self.state: list[dict | BatchNormParams | None] = []
        for spec in specs:
            if isinstance(spec, DenseSpec):
                if rng is None:
                    raise UsageError("an rng is needed to initialise Dense weights")
                W = glorot_uniform(spec.in_features, spec.out_features, rng, init_scale)
                b = np.zeros(spec.out_features) if spec.bias else None
                self.state.append({"W": W, "b": b})
            elif isinstance(spec, BatchNormSpec):
                self.state.append(BatchNormParams.fresh(spec.features))
            else:
                self.state.append(None)

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, (spec, st) in enumerate(zip(self.specs, self.state)):
            if isinstance(spec, DenseSpec):
                out.append((f"{i}.W", st["W"]))
                if st["b"] is not None:
                    out.append((f"{i}.b", st["b"]))
            elif isinstance(spec, BatchNormSpec):
                out.append((f"{i}.gamma", st.gamma))
                out.append((f"{i}.beta_shift", st.beta_shift))
        return out

    def describe(self) -> list[str]:
        return describe_specs(self.specs)

    def train(self) -> "Network":
        self.mode = Mode.TRAIN
        return self

    def eval(self) -> "Network":
        self.mode = Mode.INFER
        return self

    def forward(self, x: Matrix, rng: Rng | None = None):
        """Run all layers in order. Returns ``(output, caches)``; caches is None in INFER mode."""
        mode = self.mode
        caches = [] if mode is Mode.TRAIN else None
        for spec, st in zip(self.specs, self.state):
            if isinstance(spec, DenseSpec):
                cache = DenseCache(x, st["W"], st["b"] is not None)
                x = dense_forward(st["W"], st["b"], x)
            elif isinstance(spec, BatchNormSpec):
                x, cache = batchnorm_forward(st, x, mode)
            elif isinstance(spec, DropoutSpec):
                if mode is Mode.TRAIN and spec.rate > 0 and rng is None:
                    raise UsageError("TRAIN-mode dropout needs an rng")
                x, cache = dropout_forward(spec.rate, x, rng, mode)
            else:
                cache = x
                x = activation_forward(spec.activation, x)
            if caches is not None:
                caches.append(cache)
        return x, caches

    def predict(self, x: Matrix, batch_size: int = 2048) -> Matrix:
        """INFER-mode outputs, evaluated in chunks; leaves the mode unchanged."""
        saved, self.mode = self.mode, Mode.INFER
        try:
            return np.concatenate(
                [self.forward(x[i : i + batch_size])[0] for i in range(0, x.shape[0], batch_size)]
            )
        finally:
            self.mode = saved

    def backward(self, caches, dout: Matrix) -> list[np.ndarray]:
        if caches is None or len(caches) != len(self.specs):
            raise UsageError("backward needs the caches of a TRAIN-mode forward on this network")
        grads: list[np.ndarray] = []
        g = dout
        for spec, st, cache in zip(reversed(self.specs), reversed(self.state), reversed(caches)):
            if isinstance(spec, DenseSpec):
                if not isinstance(cache, DenseCache) or cache.W is not st["W"]:
                    raise UsageError("cache does not belong to this network's Dense layer")
                dW, db, g = dense_backward(cache, g)
                if db is not None:
                    grads.append(db)
                grads.append(dW)
            elif isinstance(spec, BatchNormSpec):
                dgamma, dbeta, g = batchnorm_backward(cache, g)
                grads.append(dbeta)
                grads.append(dgamma)
            elif isinstance(spec, DropoutSpec):
                g = g * cache
            else:
                g = g * activation_grad(spec.activation, cache)
        grads.reverse()
        return grads

    def copy_state(self):
        """Deep copy of all parameter and running-statistic arrays."""
        out = []
        for st in self.state:
            if isinstance(st, dict):
                out.append({k: None if v is None else v.copy() for k, v in st.items()})
            elif isinstance(st, BatchNormParams):
                out.append((st.gamma.copy(), st.beta_shift.copy(), st.running_mean.copy(), st.running_var.copy()))
            else:
                out.append(None)
        return out

    def restore_state(self, saved) -> None:
        """Copy ``saved`` (from ``copy_state``) back in place, keeping array identities."""
        for st, sv in zip(self.state, saved):
            if isinstance(st, dict):
                for k, v in sv.items():
                    if v is not None:
                        st[k][...] = v
            elif isinstance(st, BatchNormParams):
                st.gamma[...], st.beta_shift[...] = sv[0], sv[1]
                st.running_mean, st.running_var = sv[2].copy(), sv[3].copy()


@dataclass
class Batch:
    inputs: Matrix
    labels: np.ndarray

    def __post_init__(self):
        if self.inputs.shape[0] != len(self.labels):
            raise ShapeError(f"{self.inputs.shape[0]} inputs but {len(self.labels)} labels")


# ----------------------------------------------------------- gradient check


def grad_check(net: Network, batch: Batch, h: float = 1e-5, seed: int = 0, n_samples: int = 200) -> float:
    """Worst relative error between backprop and central differences.

    Checks ``n_samples`` randomly chosen scalar parameters (all of them if the
    network has fewer). Dropout masks are frozen by reseeding the mask
    generator with ``seed`` before every forward pass, and BatchNorm running
    statistics are restored afterwards. The relative error of a pair is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    saved_mode, net.mode = net.mode, Mode.TRAIN
    saved = net.copy_state()

    def loss_and_caches():
        out, caches = net.forward(batch.inputs, make_rng(seed))
        return softmax_cross_entropy(out, batch.labels), caches

    def loss() -> float:
        return loss_and_caches()[0][0]

    try:
        first, second = loss(), loss()
        if first != second:
            raise UsageError(f"loss is not deterministic in the parameters ({first!r} != {second!r})")
        (_, dlogits), caches = loss_and_caches()
        grads = net.backward(caches, dlogits)
        params = [p for _, p in net.parameters()]
        sizes = np.array([p.size for p in params])
        total = int(sizes.sum())
        rng = make_rng(seed)
        picks = np.arange(total) if total <= n_samples else np.sort(rng.choice(total, n_samples, replace=False))
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        worst = 0.0
        for flat in picks:
            k = int(np.searchsorted(offsets, flat, side="right") - 1)
            p, g = params[k].reshape(-1), grads[k].reshape(-1)
            j = flat - offsets[k]
            orig = p[j]
            p[j] = orig + h
            plus = loss()
            p[j] = orig - h
            minus = loss()
            p[j] = orig
            numeric = (plus - minus) / (2 * h)
            analytic = g[j]
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, err)
        return worst
    finally:
        net.restore_state(saved)
        net.mode = saved_mode


# ----------------------------------------------------------- serialisation

MAGIC = b"ESWNET1\0"
_TAG_DENSE, _TAG_BN, _TAG_DROPOUT, _TAG_ACT = 1, 2, 3, 4
_KINDS = list(Kind)


def save_network(net: Network, path) -> None:
    """Write the flat little-endian weight file.

    Layout: magic, u32 layer count, one header per layer (u32 tag then its
    dims), then float64 payloads in layer order (W row-major, b; gamma,
    beta_shift, running_mean, running_var).
    """
    head = [MAGIC, struct.pack("<I", len(net.specs))]
    payload = []
    for spec, st in zip(net.specs, net.state):
        if isinstance(spec, DenseSpec):
            head.append(struct.pack("<IIII", _TAG_DENSE, spec.in_features, spec.out_features, int(spec.bias)))
            payload.append(st["W"])
            if st["b"] is not None:
                payload.append(st["b"])
        elif isinstance(spec, BatchNormSpec):
            head.append(struct.pack("<IId", _TAG_BN, spec.features, st.eps))
            payload += [st.gamma, st.beta_shift, st.running_mean, st.running_var]
        elif isinstance(spec, DropoutSpec):
            head.append(struct.pack("<Id", _TAG_DROPOUT, spec.rate))
        else:
            a = spec.activation
            head.append(struct.pack("<IIdd", _TAG_ACT, _KINDS.index(a.kind), a.beta, a.elu_alpha))
    body = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in payload)
    Path(path).write_bytes(b"".join(head) + body)


def load_network(path) -> Network:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not an ESWNET1 weight file")
    pos = 8

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(raw):
            raise ValueError(f"{path}: truncated weight file")
        vals = struct.unpack_from(fmt, raw, pos)
        pos += size
        return vals

    (count,) = take("<I")
    specs: list[LayerSpec] = []
    eps = {}
    for i in range(count):
        (tag,) = take("<I")
        if tag == _TAG_DENSE:
            n_in, n_out, bias = take("<III")
            specs.append(DenseSpec(n_in, n_out, bool(bias)))
        elif tag == _TAG_BN:
            feats, e = take("<Id")
            specs.append(BatchNormSpec(feats))
            eps[i] = e
        elif tag == _TAG_DROPOUT:
            specs.append(DropoutSpec(take("<d")[0]))
        elif tag == _TAG_ACT:
            kind, beta, alpha = take("<Idd")
            specs.append(ActivationLayerSpec(ActivationSpec(_KINDS[kind], beta, alpha)))
        else:
            raise ValueError(f"{path}: unknown layer tag {tag}")
    net = Network(specs, rng=make_rng(0))

    def arr(n):
        return np.array(take(f"<{n}d"), dtype=np.float64)

    for i, (spec, st) in enumerate(zip(net.specs, net.state)):
        if isinstance(spec, DenseSpec):
            st["W"][...] = arr(spec.in_features * spec.out_features).reshape(spec.in_features, spec.out_features)
            if spec.bias:
                st["b"][...] = arr(spec.out_features)
        elif isinstance(spec, BatchNormSpec):
            n = spec.features
            st.gamma[...], st.beta_shift[...] = arr(n), arr(n)
            st.running_mean, st.running_var = arr(n), arr(n)
            st.eps = eps[i]
    if pos != len(raw):
        raise ValueError(f"{path}: {len(raw) - pos} trailing bytes")
    return net
