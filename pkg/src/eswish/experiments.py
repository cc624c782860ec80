"""Experiment harnesses: depth trainability sweep, 5-layer MNIST MLP,
random-network output landscapes and activation curve tables.

Every run owns one PCG64 generator seeded from its config; the same
generator initialises weights, shuffles minibatches and draws dropout masks,
so a rerun with the same config reproduces every CSV byte for byte.
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .activations import ActivationSpec, Kind, eswish, eswish_grad, swish
from .data import Dataset
from .network import (
    ActivationLayerSpec,
    BatchNormSpec,
    DenseSpec,
    DropoutSpec,
    LayerSpec,
    Mode,
    Network,
    save_network,
    softmax_cross_entropy,
)
from .numerics import DomainError, make_rng
from .optim import (
    ConfigError,
    EarlyStop,
    PlateauSchedule,
    SgdState,
    TrainingError,
    early_stop_check,
    improved,
    plateau_update,
    sgd_step,
    step_schedule,
)

log = logging.getLogger(__name__)

METRICS_HEADER = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr"]
SUMMARY_HEADER = ["depth", "activation", "median_test_acc", "diverged_count"]


class AggregationError(ValueError):
    pass


def fmt(v: float) -> str:
    """17 significant digits: enough to round-trip any float64."""
    return format(float(v), ".17g")


# ------------------------------------------------------------------ configs


@dataclass(frozen=True)
class TrainConfig:
    lr: float
    momentum: float = 0.0
    batch_size: int = 64
    epochs: int = 20
    # "constant", "plateau" or "step"
    schedule: str = "constant"
    plateau_factor: float = 0.35
    plateau_patience: int = 2
    early_stop_patience: int = 0  # 0 disables early stopping
    milestones: tuple[int, ...] = ()
    milestone_factor: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.schedule not in ("constant", "plateau", "step"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.batch_size < 2 or self.epochs < 1:
            raise ConfigError("batch_size must be >= 2 and epochs >= 1")
        if not (math.isfinite(self.lr) and self.lr > 0):
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if not 0 < self.plateau_factor < 1 or self.plateau_patience < 1:
            raise ConfigError("plateau factor must lie in (0, 1) and patience be >= 1")
        if self.early_stop_patience < 0:
            raise ConfigError("early_stop_patience must be >= 0")
        if self.milestone_factor <= 0 or any(m < 1 for m in self.milestones):
            raise ConfigError("milestones must be >= 1 with a positive factor")


def _check_fraction(fraction: float) -> None:
    if not 0 < fraction <= 1:
        raise ConfigError(f"data_fraction must lie in (0, 1], got {fraction}")


@dataclass(frozen=True)
class DepthExperimentConfig:
    depths: tuple[int, ...] = tuple(range(23, 45))
    width: int = 512
    activations: tuple[str, ...] = ("relu", "swish", "eswish:1.5")
    lr: float = 0.01
    momentum: float = 0.9
    plateau_factor: float = 0.35
    plateau_patience: int = 2
    early_stop_patience: int = 5
    epochs: int = 15
    batch_size: int = 128
    seeds: tuple[int, ...] = (1, 2, 3)
    data_fraction: float = 1.0

    def __post_init__(self):
        if not self.depths or min(self.depths) < 1:
            raise ConfigError("depths must be positive")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.width < 1:
            raise ConfigError(f"width must be positive, got {self.width}")
        for a in self.activations:
            ActivationSpec.parse(a)
        _check_fraction(self.data_fraction)
        self.train_config(0)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(lr=self.lr, momentum=self.momentum, batch_size=self.batch_size,
                           epochs=self.epochs, schedule="plateau", plateau_factor=self.plateau_factor,
                           plateau_patience=self.plateau_patience,
                           early_stop_patience=self.early_stop_patience, seed=seed)


@dataclass(frozen=True)
class MnistMlpConfig:
    widths: tuple[int, ...] = (200, 100, 60, 30, 10)
    dropout: float = 0.2
    lr: float = 0.1
    momentum: float = 0.0
    batch_size: int = 64
    epochs: int = 20
    activations: tuple[str, ...] = ("relu", "swish", "eswish:1.5", "eswish:2")
    seeds: tuple[int, ...] = (1, 2, 3)
    data_fraction: float = 1.0

    def __post_init__(self):
        if self.widths[-1] != 10:
            raise ConfigError(f"the MLP must end in 10 outputs, got {self.widths[-1]}")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {self.dropout}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        for a in self.activations:
            ActivationSpec.parse(a)
        _check_fraction(self.data_fraction)
        self.train_config(0)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(lr=self.lr, momentum=self.momentum, batch_size=self.batch_size,
                           epochs=self.epochs, seed=seed)


@dataclass(frozen=True)
class LandscapeConfig:
    activation: str = "relu"
    layers: int = 6
    width: int = 128
    resolution: int = 256
    lo: float = -2.0
    hi: float = 2.0
    init_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.resolution < 2 or not self.hi > self.lo:
            raise ConfigError("landscape grid needs resolution >= 2 and hi > lo")
        ActivationSpec.parse(self.activation)

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / (self.resolution - 1)


DEPTH_PRESETS = {
    "paper": DepthExperimentConfig(),
    "desk": DepthExperimentConfig(depths=(8, 16, 24), width=128, data_fraction=0.2),
}
MNIST_PRESETS = {
    "paper": MnistMlpConfig(),
    "desk": MnistMlpConfig(epochs=10, data_fraction=0.2),
}


# ------------------------------------------------------------------ metrics


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    lr: float

    def row(self) -> list[str]:
        return [str(self.epoch)] + [fmt(getattr(self, k)) for k in METRICS_HEADER[1:]]


@dataclass
class RunMetrics:
    name: str
    records: list[EpochRecord] = field(default_factory=list)
    test_acc: float = 0.0  # at the best-validation epoch
    test_acc_last: float = 0.0
    diverged: bool = False
    seconds: float = 0.0
    network: Network | None = field(default=None, repr=False, compare=False)

    def write_csv(self, path) -> None:
        write_metrics_csv(path, self.records)


def write_metrics_csv(path, records: Iterable[EpochRecord]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in records:
            w.writerow(r.row())


def read_metrics_csv(path) -> list[EpochRecord]:
    with open(path, newline="") as f:
        return [EpochRecord(int(r["epoch"]), *(float(r[k]) for k in METRICS_HEADER[1:]))
                for r in csv.DictReader(f)]


def lower_median(values: Sequence[float]) -> float:
    if not values:
        raise AggregationError("median of no values")
    return sorted(values)[(len(values) - 1) // 2]


def median_of_runs(runs: Sequence[Sequence[EpochRecord]]) -> list[EpochRecord]:
    """Field-wise lower median over runs with identical epoch numbering."""
    if not runs:
        raise AggregationError("no runs to aggregate")
    epochs = [tuple(r.epoch for r in run) for run in runs]
    if any(e != epochs[0] for e in epochs):
        raise AggregationError(f"runs cover different epochs: {sorted(set(map(len, epochs)))} records")
    out = []
    for recs in zip(*runs):
        out.append(EpochRecord(recs[0].epoch, *(lower_median([getattr(r, k) for r in recs])
                                               for k in METRICS_HEADER[1:])))
    return out


# --------------------------------------------------------------- training


def evaluate(net: Network, x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    logits = net.predict(x)
    loss, _ = softmax_cross_entropy(logits, y)
    return loss, float((logits.argmax(axis=1) == y).mean())


def train(specs: Sequence[LayerSpec], data: Dataset, cfg: TrainConfig, name: str = "run") -> RunMetrics:
    """Minibatch SGD with the configured schedule; divergence ends the run with test_acc 0."""
    start = time.perf_counter()
    rng = make_rng(cfg.seed)
    net = Network(specs, rng)
    params = net.parameters()
    tensors = [p for _, p in params]
    names = [n for n, _ in params]
    state = SgdState(cfg.lr, cfg.momentum)
    plateau = PlateauSchedule(cfg.plateau_factor, cfg.plateau_patience)
    stopper = EarlyStop(cfg.early_stop_patience) if cfg.early_stop_patience else None
    metrics = RunMetrics(name)
    best_val = -math.inf
    n = len(data.train_y)
    bs = cfg.batch_size
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            for epoch in range(1, cfg.epochs + 1):
                if cfg.schedule == "step":
                    state.lr = step_schedule(epoch - 1, cfg.milestones, cfg.milestone_factor, cfg.lr)
                lr = state.lr
                net.train()
                order = rng.permutation(n)
                loss_sum = correct = seen = 0.0
                for i in range(0, n, bs):
                    idx = order[i : i + bs]
                    if len(idx) < 2:
                        continue
                    xb, yb = data.train_x[idx], data.train_y[idx]
                    out, caches = net.forward(xb, rng)
                    loss, dlogits = softmax_cross_entropy(out, yb)
                    if not math.isfinite(loss):
                        raise TrainingError(f"non-finite loss at epoch {epoch}")
                    sgd_step(tensors, net.backward(caches, dlogits), state, names)
                    loss_sum += loss * len(idx)
                    correct += float((out.argmax(axis=1) == yb).sum())
                    seen += len(idx)
                val_loss, val_acc = evaluate(net, data.val_x, data.val_y)
                _, test_acc = evaluate(net, data.test_x, data.test_y)
                if not math.isfinite(val_loss):
                    raise TrainingError(f"non-finite validation loss at epoch {epoch}")
                metrics.records.append(EpochRecord(epoch, loss_sum / seen, correct / seen, val_loss, val_acc, lr))
                metrics.test_acc_last = test_acc
                if improved(best_val, val_acc):
                    best_val = val_acc
                    metrics.test_acc = test_acc
                if cfg.schedule == "plateau":
                    state.lr = plateau_update(plateau, val_acc, state.lr)
                if stopper is not None and early_stop_check(stopper, val_acc):
                    break
    except (TrainingError, DomainError, FloatingPointError) as exc:
        log.warning("%s diverged: %s", name, exc)
        metrics.diverged = True
        metrics.test_acc = metrics.test_acc_last = 0.0
    metrics.seconds = time.perf_counter() - start
    metrics.network = net
    return metrics


# ---------------------------------------------------------- depth experiment


def bn_dense_indices(depth: int) -> list[int]:
    """Hidden Dense indices (zero-based) followed by BatchNorm: those with i % 3 == 1."""
    return [i for i in range(depth) if i % 3 == 1]


def build_depth_network(depth: int, width: int, act: ActivationSpec, in_features: int = 784,
                        num_classes: int = 10, batchnorm: bool = True) -> list[LayerSpec]:
    """``depth`` hidden Dense blocks of ``width`` units plus a linear classifier head.

    Blocks whose Dense index satisfies i % 3 == 1 get Dense -> BatchNorm ->
    activation; their Dense carries no bias since BatchNorm cancels it.
    """
    if depth < 1:
        raise ConfigError(f"depth must be >= 1, got {depth}")
    bn = set(bn_dense_indices(depth)) if batchnorm else set()
    specs: list[LayerSpec] = []
    fan_in = in_features
    for i in range(depth):
        specs.append(DenseSpec(fan_in, width, bias=i not in bn))
        if i in bn:
            specs.append(BatchNormSpec(width))
        specs.append(ActivationLayerSpec(act))
        fan_in = width
    specs.append(DenseSpec(fan_in, num_classes))
    return specs


def run_file_name(experiment: str, activation: str, arch: str, seed: int) -> str:
    return f"{experiment}_{activation.replace(':', '-')}_{arch}_{seed}.csv"


_WORKER_DATA: Dataset | None = None


def _init_worker(data: Dataset) -> None:
    global _WORKER_DATA
    _WORKER_DATA = data


def _run_task(task) -> RunMetrics:
    specs, cfg, name, weights_path = task
    m = train(specs, _WORKER_DATA, cfg, name)
    if weights_path is not None and not m.diverged:
        save_network(m.network, weights_path)
    m.network = None
    return m


def _weights_path(weights_dir, csv_name: str):
    if weights_dir is None:
        return None
    Path(weights_dir).mkdir(parents=True, exist_ok=True)
    return Path(weights_dir) / csv_name.replace(".csv", ".eswnet")


def run_tasks(tasks: list, data: Dataset, jobs: int = 1) -> list[RunMetrics]:
    """Run independent trainings, serially or on a process pool; results keep task order."""
    if jobs <= 1 or len(tasks) <= 1:
        _init_worker(data)
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(data,)) as pool:
        return list(pool.map(_run_task, tasks))


@dataclass(frozen=True)
class DepthRow:
    depth: int
    activation: str
    median_test_acc: float
    diverged_count: int
    test_accs: tuple[float, ...] = ()


def run_depth_experiment(cfg: DepthExperimentConfig, data: Dataset, out_dir=None, jobs: int = 1,
                         train_overrides: dict | None = None, weights_dir=None) -> list[DepthRow]:
    """Train every (depth, activation, seed) cell; a cell's score is the lower median of
    its seeds' test accuracies at the best-validation epoch."""
    if cfg.data_fraction < 1.0:
        data = data.subset(cfg.data_fraction)
    tasks, keys = [], []
    for depth in cfg.depths:
        for act in cfg.activations:
            spec = ActivationSpec.parse(act)
            for seed in cfg.seeds:
                specs = build_depth_network(depth, cfg.width, spec, data.n_features, data.num_classes)
                tcfg = dataclasses.replace(cfg.train_config(seed), **(train_overrides or {}))
                wpath = _weights_path(weights_dir, run_file_name("depth", act, str(depth), seed))
                tasks.append((specs, tcfg, f"depth {depth} {act} seed {seed}", wpath))
                keys.append((depth, act, seed))
    results = run_tasks(tasks, data, jobs)
    rows = []
    for depth in cfg.depths:
        for act in cfg.activations:
            runs = [m for (d, a, _), m in zip(keys, results) if d == depth and a == act]
            accs = tuple(m.test_acc for m in runs)
            rows.append(DepthRow(depth, act, lower_median(accs), sum(m.diverged for m in runs), accs))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for (depth, act, seed), m in zip(keys, results):
            m.write_csv(out / run_file_name("depth", act, str(depth), seed))
        with open(out / "depth_summary.csv", "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(SUMMARY_HEADER)
            for r in rows:
                w.writerow([r.depth, r.activation, fmt(r.median_test_acc), r.diverged_count])
    return rows


# ------------------------------------------------------------- MNIST MLP


def build_mnist_mlp(widths: Sequence[int], act: ActivationSpec, dropout: float,
                    in_features: int = 784) -> list[LayerSpec]:
    """Dense layers of ``widths``; each hidden one is followed by the activation and dropout."""
    specs: list[LayerSpec] = []
    fan_in = in_features
    for k, w in enumerate(widths):
        specs.append(DenseSpec(fan_in, w))
        if k < len(widths) - 1:
            specs.append(ActivationLayerSpec(act))
            if dropout > 0:
                specs.append(DropoutSpec(dropout))
        fan_in = w
    return specs


@dataclass
class MnistResult:
    activation: str
    runs: list[RunMetrics]

    @property
    def median_test_acc(self) -> float:
        return lower_median([m.test_acc_last for m in self.runs])


def run_mnist_mlp(cfg: MnistMlpConfig, data: Dataset, out_dir=None, jobs: int = 1,
                  train_overrides: dict | None = None, weights_dir=None) -> list[MnistResult]:
    """Train the fixed MLP per activation and seed; reported accuracy is after the last epoch."""
    if cfg.data_fraction < 1.0:
        data = data.subset(cfg.data_fraction)
    tasks, keys = [], []
    for act in cfg.activations:
        specs = build_mnist_mlp(cfg.widths, ActivationSpec.parse(act), cfg.dropout, data.n_features)
        for seed in cfg.seeds:
            tcfg = dataclasses.replace(cfg.train_config(seed), **(train_overrides or {}))
            wpath = _weights_path(weights_dir, run_file_name("mnist", act, "mlp", seed))
            tasks.append((specs, tcfg, f"mnist {act} seed {seed}", wpath))
            keys.append((act, seed))
    results = run_tasks(tasks, data, jobs)
    out = []
    for act in cfg.activations:
        out.append(MnistResult(act, [m for (a, _), m in zip(keys, results) if a == act]))
    if out_dir is not None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        for (act, seed), m in zip(keys, results):
            m.write_csv(d / run_file_name("mnist", act, "mlp", seed))
        with open(d / "mnist_summary.csv", "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["activation", "median_test_acc", "diverged_count"])
            for r in out:
                w.writerow([r.activation, fmt(r.median_test_acc), sum(m.diverged for m in r.runs)])
        for r in out:
            try:
                write_metrics_csv(d / run_file_name("mnist", r.activation, "mlp", "median"),
                                  median_of_runs([m.records for m in r.runs]))
            except AggregationError as exc:
                log.warning("no median curve for %s: %s", r.activation, exc)
    return out


# -------------------------------------------------------------- landscapes


def landscape_network(cfg: LandscapeConfig) -> Network:
    act = ActivationSpec.parse(cfg.activation)
    specs: list[LayerSpec] = []
    fan_in = 2
    for _ in range(cfg.layers):
        specs += [DenseSpec(fan_in, cfg.width), ActivationLayerSpec(act)]
        fan_in = cfg.width
    specs.append(DenseSpec(fan_in, 1))
    return Network(specs, make_rng(cfg.seed), init_scale=cfg.init_scale).eval()


def landscape_axis(cfg: LandscapeConfig) -> np.ndarray:
    return np.linspace(cfg.lo, cfg.hi, cfg.resolution)


def generate_landscape(cfg: LandscapeConfig) -> np.ndarray:
    """Network output on the lattice; ``grid[i, j]`` is the value at (x=axis[j], y=axis[i])."""
    net = landscape_network(cfg)
    axis = landscape_axis(cfg)
    xx, yy = np.meshgrid(axis, axis)
    points = np.column_stack([xx.ravel(), yy.ravel()])
    return net.predict(points).reshape(cfg.resolution, cfg.resolution)


def landscape_slope(grid: np.ndarray, spacing: float) -> float:
    """RMS of the central-difference gradient magnitude over interior points."""
    if grid.ndim != 2 or min(grid.shape) < 3 or not spacing > 0:
        raise DomainError(f"degenerate grid {grid.shape} with spacing {spacing}")
    gx = (grid[1:-1, 2:] - grid[1:-1, :-2]) / (2 * spacing)
    gy = (grid[2:, 1:-1] - grid[:-2, 1:-1]) / (2 * spacing)
    return float(np.sqrt(np.mean(gx * gx + gy * gy)))


def write_landscape_csv(path, grid: np.ndarray, cfg: LandscapeConfig) -> None:
    axis = landscape_axis(cfg)
    with open(path, "w", newline="") as f:
        f.write("x,y,z\n")
        for i, y in enumerate(axis):
            for j, x in enumerate(axis):
                f.write(f"{fmt(x)},{fmt(y)},{fmt(grid[i, j])}\n")


# ---------------------------------------------------------- curve tables

CURVES_HEADER = ["beta", "x", "f", "df", "swish", "dswish"]


def emit_activation_curves(betas: Sequence[float], lo: float = -6.0, hi: float = 6.0,
                           n: int = 1201) -> list[tuple[float, ...]]:
    """Rows of (beta, x, f, f', swish, swish') with f the E-swish value."""
    if not hi > lo or n < 2:
        raise ConfigError("curve range needs hi > lo and n >= 2")
    xs = np.linspace(lo, hi, n)
    xs[np.abs(xs) < 1e-12 * (hi - lo)] = 0.0
    rows = []
    for beta in betas:
        for x in xs:
            x = float(x)
            rows.append((float(beta), x, eswish(beta, x), eswish_grad(beta, x), swish(x), eswish_grad(1.0, x)))
    return rows


def write_curves_csv(path, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CURVES_HEADER)
        for r in rows:
            w.writerow([fmt(v) for v in r])
