"""Command-line entry point: ``eswish {grad-check,landscape,train-depth,train-mnist,curves,eval}``.

Exit codes: 0 success, 1 validation or check failure, 2 usage error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import re
import shlex
import sys
import time
from pathlib import Path

from . import experiments as ex
from .activations import ActivationSpec, ConfigurationError, Kind, parse_activations
from .data import DATA_DIR_ENV, IdxError, load_mnist, synthetic_dataset
from .network import describe_specs, load_network
from .numerics import DomainError
from .optim import ConfigError
from .verify import check_network, network_grad_check, scalar_grad_check

log = logging.getLogger("eswish")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

DEFAULT_BETAS = (1.0, 1.125, 1.25, 1.5, 1.75, 2.0)
ALL_KINDS = ("relu", "swish", "elu", "softplus", "sigmoid", "tanh")


class UsageError(Exception):
    pass


# ------------------------------------------------------------ arg types


def float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def int_list(text: str) -> list[int]:
    """``1,2,3`` or inclusive ranges such as ``23-44``."""
    out = []
    for part in filter(None, (t.strip() for t in text.split(","))):
        m = re.fullmatch(r"(\d+)-(\d+)", part)
        try:
            out.extend(range(int(m[1]), int(m[2]) + 1) if m else [int(part)])
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected integers or ranges like 23-44, got {text!r}") from None
    return out


def act_list(text: str) -> list[str]:
    try:
        return [str(s) for s in parse_activations(text)]
    except (ConfigurationError, DomainError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eswish", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("grad-check", help="finite-difference checks of every activation and of backprop")
    g.add_argument("--act", type=act_list, help="activations to check (default: all kinds)")
    g.add_argument("--beta", type=float_list, help="E-swish betas (default: 1,1.125,1.25,1.5,1.75,2)")
    g.add_argument("--tol", type=float, default=1e-6, help="max relative error of scalar derivatives")
    g.add_argument("--net-tol", type=float, default=1e-5, help="max relative error of network gradients")
    g.add_argument("--h", type=float, default=1e-5, help="central-difference step")
    g.add_argument("--seed", type=int, default=0)

    ls = sub.add_parser("landscape", help="output landscape of a random network per activation")
    ls.add_argument("--act", type=act_list, default=act_list("relu,elu,swish,eswish:1.5,eswish:2"))
    ls.add_argument("--seed", type=int, default=0)
    ls.add_argument("--resolution", type=int, default=256)
    ls.add_argument("--lo", type=float, default=-2.0)
    ls.add_argument("--hi", type=float, default=2.0)
    ls.add_argument("--layers", type=positive_int, default=6)
    ls.add_argument("--width", type=positive_int, default=128)
    ls.add_argument("--init-scale", type=float, default=1.0)
    ls.add_argument("--out", type=Path, default=Path("out/landscape"))

    for name, helptext in (("train-depth", "depth trainability sweep"),
                           ("train-mnist", "5-layer MLP benchmark")):
        t = sub.add_parser(name, help=helptext)
        t.add_argument("--preset", choices=("paper", "desk"), default="desk" if name == "train-depth" else "paper")
        t.add_argument("--act", type=act_list)
        t.add_argument("--seeds", type=int_list)
        t.add_argument("--epochs", type=positive_int)
        t.add_argument("--batch-size", type=positive_int)
        t.add_argument("--lr", type=float)
        t.add_argument("--momentum", type=float)
        t.add_argument("--data-fraction", type=float)
        if name == "train-depth":
            t.add_argument("--depths", type=int_list)
            t.add_argument("--width", type=positive_int)
            t.add_argument("--plateau-factor", type=float)
            t.add_argument("--plateau-patience", type=positive_int)
            t.add_argument("--early-stop-patience", type=int)
        else:
            t.add_argument("--dropout", type=float)
        t.add_argument("--milestones", type=int_list, help="switch to step decay at these epochs")
        t.add_argument("--milestone-factor", type=float)
        t.add_argument("--data-dir", type=Path, help=f"MNIST IDX directory (fallback: ${DATA_DIR_ENV})")
        t.add_argument("--synthetic", action="store_true", help="use the built-in synthetic dataset")
        t.add_argument("--synthetic-per-class", type=positive_int, default=1400)
        t.add_argument("--out", type=Path, default=Path(f"out/{name}"))
        t.add_argument("--jobs", type=positive_int, default=os.cpu_count() or 1)
        t.add_argument("--save-weights", type=Path, help="directory for final weights of every run")

    c = sub.add_parser("curves", help="tabulate E-swish and its derivative")
    c.add_argument("--betas", type=float_list, default=[1.0, 1.25, 1.5, 1.75, 2.0])
    c.add_argument("--lo", type=float, default=-6.0)
    c.add_argument("--hi", type=float, default=6.0)
    c.add_argument("--points", type=int, default=1201)
    c.add_argument("--out", type=Path, default=Path("out/curves"))

    e = sub.add_parser("eval", help="test accuracy of a saved weight file")
    e.add_argument("--load-weights", type=Path, required=True)
    e.add_argument("--data-dir", type=Path)
    e.add_argument("--synthetic", action="store_true")
    e.add_argument("--synthetic-per-class", type=positive_int, default=1400)
    return p


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:
        return action.choices[command]
    raise KeyError(command)


def _format_value(v) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def resolved_argv(parser: argparse.ArgumentParser, args: argparse.Namespace) -> list[str]:
    """Flags reproducing ``args`` exactly, with every default spelled out."""
    argv = [args.command]
    for action in _subparser(parser, args.command)._actions:
        if not action.option_strings or action.dest == "help":
            continue
        value = getattr(args, action.dest, None)
        flag = action.option_strings[-1]
        if isinstance(action, argparse._StoreTrueAction):
            if value:
                argv.append(flag)
        elif value is not None:
            argv += [flag, _format_value(value)]
    return argv


# ------------------------------------------------------------ resolution


def _fill(args, cfg, mapping):
    """Take unset flags from the preset config, then build the final config."""
    updates = {}
    for dest, field_name in mapping.items():
        value = getattr(args, dest)
        if value is None:
            preset = getattr(cfg, field_name)
            setattr(args, dest, list(preset) if isinstance(preset, tuple) else preset)
        else:
            updates[field_name] = tuple(value) if isinstance(value, list) else value
    return dataclasses.replace(cfg, **updates)


DEPTH_FLAGS = {"act": "activations", "seeds": "seeds", "epochs": "epochs", "batch_size": "batch_size",
               "lr": "lr", "momentum": "momentum", "data_fraction": "data_fraction", "depths": "depths",
               "width": "width", "plateau_factor": "plateau_factor", "plateau_patience": "plateau_patience",
               "early_stop_patience": "early_stop_patience"}
MNIST_FLAGS = {"act": "activations", "seeds": "seeds", "epochs": "epochs", "batch_size": "batch_size",
               "lr": "lr", "momentum": "momentum", "data_fraction": "data_fraction", "dropout": "dropout"}


def resolve(args):
    """Materialise every default on ``args``; returns the experiment config, if any."""
    if args.command == "grad-check":
        if args.beta is None:
            args.beta = list(DEFAULT_BETAS)
        if args.act is None:
            args.act = list(ALL_KINDS) + [f"eswish:{b:g}" for b in args.beta]
        return None
    if args.command == "train-depth":
        cfg = _fill(args, ex.DEPTH_PRESETS[args.preset], DEPTH_FLAGS)
    elif args.command == "train-mnist":
        cfg = _fill(args, ex.MNIST_PRESETS[args.preset], MNIST_FLAGS)
    else:
        return None
    if args.milestones is None:
        args.milestones = []
    if args.milestone_factor is None:
        args.milestone_factor = 0.2
    dataclasses.replace(cfg.train_config(0), **_overrides(args))
    if args.data_dir is None and not args.synthetic and os.environ.get(DATA_DIR_ENV):
        args.data_dir = Path(os.environ[DATA_DIR_ENV])
    if args.data_dir is None and not args.synthetic:
        raise UsageError(f"no MNIST data: pass --data-dir, set {DATA_DIR_ENV}, or use --synthetic")
    return cfg


# -------------------------------------------------------------- commands


def cmd_grad_check(args) -> int:
    specs = [ActivationSpec.parse(a) for a in args.act]
    failures = 0
    print(f"{'activation':<14}{'max rel err':>14}{'max abs err':>14}{'network':>14}  status")
    for spec in specs:
        sc = scalar_grad_check(spec, h=args.h)
        net_err = network_grad_check(spec, seed=args.seed, h=args.h)
        ok = sc.passed(args.tol) and net_err < args.net_tol
        failures += not ok
        note = f"  (skipped kink at x={sc.skipped[0]:g})" if sc.skipped else ""
        status = "ok" if ok else f"FAIL worst at x={sc.worst_x:g}"
        print(f"{str(spec):<14}{sc.max_rel_err:>14.3e}{sc.max_abs_err:>14.3e}{net_err:>14.3e}  {status}{note}")
    return EXIT_OK if failures == 0 else EXIT_FAIL


def cmd_landscape(args) -> int:
    configs = [ex.LandscapeConfig(act, args.layers, args.width, args.resolution, args.lo, args.hi,
                                  args.init_scale, args.seed) for act in args.act]
    args.out.mkdir(parents=True, exist_ok=True)
    rows = []
    for act, cfg in zip(args.act, configs):
        grid = ex.generate_landscape(cfg)
        ex.write_landscape_csv(args.out / f"landscape_{act.replace(':', '-')}_{args.seed}.csv", grid, cfg)
        spec = ActivationSpec.parse(act)
        beta = spec.beta if spec.kind in (Kind.ESWISH, Kind.SWISH) else ""
        rows.append((act, beta, ex.landscape_slope(grid, cfg.spacing)))
    with open(args.out / "slopes.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["activation", "beta", "rms_slope"])
        for act, beta, slope in rows:
            w.writerow([act, "" if beta == "" else ex.fmt(beta), ex.fmt(slope)])
    for act, _, slope in rows:
        print(f"{act:<14}{slope:.6g}")
    return EXIT_OK


def _load_data(args):
    if args.synthetic:
        return synthetic_dataset(0, args.synthetic_per_class)
    return load_mnist(args.data_dir)


def cmd_train_depth(args, cfg: ex.DepthExperimentConfig) -> int:
    data = _load_data(args)
    for depth in cfg.depths:
        specs = ex.build_depth_network(depth, cfg.width, ActivationSpec.parse(cfg.activations[0]),
                                       data.n_features, data.num_classes)
        print(f"topology depth={depth}:")
        print("\n".join(describe_specs(specs)))
    rows = ex.run_depth_experiment(cfg, data, args.out, args.jobs, train_overrides=_overrides(args),
                                   weights_dir=args.save_weights)
    print(f"{'depth':>5}  {'activation':<14}{'median test acc':>16}{'diverged':>9}")
    for r in rows:
        print(f"{r.depth:>5}  {r.activation:<14}{r.median_test_acc:>16.4f}{r.diverged_count:>9}")
    return EXIT_OK


def cmd_train_mnist(args, cfg: ex.MnistMlpConfig) -> int:
    data = _load_data(args)
    results = ex.run_mnist_mlp(cfg, data, args.out, args.jobs, train_overrides=_overrides(args),
                               weights_dir=args.save_weights)
    print(f"{'activation':<14}{'median test acc':>16}  per-seed")
    for r in results:
        accs = " ".join(f"{m.test_acc_last:.4f}" for m in r.runs)
        print(f"{r.activation:<14}{r.median_test_acc:>16.4f}  {accs}")
    return EXIT_OK


def _overrides(args) -> dict:
    if args.milestones:
        return {"schedule": "step", "milestones": tuple(args.milestones),
                "milestone_factor": args.milestone_factor}
    return {}


def cmd_curves(args) -> int:
    args.out.mkdir(parents=True, exist_ok=True)
    rows = ex.emit_activation_curves(args.betas, args.lo, args.hi, args.points)
    ex.write_curves_csv(args.out / "curves.csv", rows)
    print(f"wrote {len(rows)} rows for beta in {', '.join(f'{b:g}' for b in args.betas)}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.data_dir is None and not args.synthetic:
        args.data_dir = os.environ.get(DATA_DIR_ENV)
        if args.data_dir is None:
            raise UsageError(f"no data: pass --data-dir, set {DATA_DIR_ENV}, or use --synthetic")
    net = load_network(args.load_weights)
    data = _load_data(args)
    _, acc = ex.evaluate(net, data.test_x, data.test_y)
    print(f"test accuracy {acc:.4f}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = resolve(args)
        print("resolved: eswish " + shlex.join(resolved_argv(parser, args)), flush=True)
        if args.command == "grad-check":
            return cmd_grad_check(args)
        if args.command == "landscape":
            return cmd_landscape(args)
        if args.command == "train-depth":
            return cmd_train_depth(args, cfg)
        if args.command == "train-mnist":
            return cmd_train_mnist(args, cfg)
        if args.command == "curves":
            return cmd_curves(args)
        return cmd_eval(args)
    except UsageError as exc:
        print(f"eswish: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, IdxError) as exc:
        print(f"eswish: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ConfigurationError, DomainError, ValueError) as exc:
        print(f"eswish: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
