import csv
import re
import shlex

import pytest

from eswish.cli import EXIT_FAIL, EXIT_IO, EXIT_OK, EXIT_USAGE, build_parser, main, resolve, resolved_argv


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def resolved_line(out):
    line = next(l for l in out.splitlines() if l.startswith("resolved: eswish "))
    return shlex.split(line[len("resolved: eswish "):])


def test_unknown_flag_is_usage_error(capsys):
    assert run(capsys, "curves", "--colour", "red")[0] == EXIT_USAGE
    assert run(capsys, "nope")[0] == EXIT_USAGE


def test_help_exits_zero(capsys):
    assert run(capsys, "--help")[0] == EXIT_OK


def test_missing_data_is_usage_error(capsys, monkeypatch):
    monkeypatch.delenv("ESWISH_DATA_DIR", raising=False)
    code, _, err = run(capsys, "train-mnist", "--epochs", "1")
    assert code == EXIT_USAGE and "--synthetic" in err


def test_unreadable_data_dir_is_io_error(capsys, tmp_path):
    code, _, err = run(capsys, "train-mnist", "--epochs", "1", "--data-dir", tmp_path / "missing")
    assert code == EXIT_IO


def test_malformed_activation_is_usage_error(capsys, tmp_path):
    code, _, err = run(capsys, "landscape", "--act", "eswish:-1", "--out", tmp_path)
    assert code == EXIT_USAGE and "eswish:-1" in err


@pytest.mark.parametrize("argv", [
    ["train-mnist", "--synthetic", "--dropout", "1.5"],
    ["train-depth", "--synthetic", "--lr", "-1"],
    ["train-depth", "--synthetic", "--data-fraction", "0"],
    ["landscape", "--resolution", "1"],
])
def test_invalid_config_fails_before_running(capsys, tmp_path, argv):
    code, out, err = run(capsys, *argv, "--out", tmp_path / "o")
    assert code == EXIT_FAIL and "invalid configuration" in err
    assert not (tmp_path / "o").exists()


def test_grad_check_betas(capsys):
    code, out, _ = run(capsys, "grad-check", "--act", "eswish:1,eswish:1.5,eswish:2")
    assert code == EXIT_OK
    rows = [l.split() for l in out.splitlines()[2:]]
    assert [r[0] for r in rows] == ["eswish:1", "eswish:1.5", "eswish:2"]
    assert all(float(r[1]) < 1e-6 and r[4] == "ok" for r in rows)


def test_grad_check_impossible_tolerance(capsys):
    code, out, _ = run(capsys, "grad-check", "--act", "eswish:1.5", "--tol", "1e-12")
    assert code != EXIT_OK and re.search(r"eswish:1\.5 .*FAIL worst at x=", out)


def test_grad_check_relu_reports_kink(capsys):
    code, out, _ = run(capsys, "grad-check", "--act", "relu")
    assert code == EXIT_OK and "skipped kink at x=0" in out


def test_landscape_files_and_determinism(capsys, tmp_path):
    args = ["landscape", "--act", "relu,elu,swish", "--seed", "7", "--resolution", "32"]
    assert run(capsys, *args, "--out", tmp_path / "a")[0] == EXIT_OK
    assert run(capsys, *args, "--out", tmp_path / "b")[0] == EXIT_OK
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["landscape_elu_7.csv", "landscape_relu_7.csv", "landscape_swish_7.csv", "slopes.csv"]
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_landscape_slopes_increase_with_beta(capsys, tmp_path):
    code, _, _ = run(capsys, "landscape", "--act", "eswish:1,eswish:1.5,eswish:2", "--seed", "7",
                     "--resolution", "128", "--out", tmp_path)
    assert code == EXIT_OK
    with open(tmp_path / "slopes.csv") as f:
        rows = list(csv.DictReader(f))
    assert [float(r["beta"]) for r in rows] == [1.0, 1.5, 2.0]
    slopes = [float(r["rms_slope"]) for r in rows]
    assert slopes[0] < slopes[1] < slopes[2]


def test_curves_contract(capsys, tmp_path):
    assert run(capsys, "curves", "--out", tmp_path)[0] == EXIT_OK
    with open(tmp_path / "curves.csv") as f:
        rows = list(csv.DictReader(f))
    assert sorted({float(r["beta"]) for r in rows}) == [1.0, 1.25, 1.5, 1.75, 2.0]
    for r in rows:
        b, x = float(r["beta"]), float(r["x"])
        if b == 1.0:
            assert (r["f"], r["df"]) == (r["swish"], r["dswish"])
        if x == 0.0:
            assert float(r["df"]) == b / 2


def test_depth_topology_dump(capsys, tmp_path):
    code, out, _ = run(capsys, "train-depth", "--depths", "3", "--act", "eswish:1.5", "--seeds", "1",
                       "--epochs", "1", "--synthetic", "--synthetic-per-class", "30", "--jobs", "1",
                       "--out", tmp_path)
    assert code == EXIT_OK
    dump = out.split("topology depth=3:")[1].split("depth ")[0]
    layers = [l.split(maxsplit=1)[1] for l in dump.strip().splitlines()]
    bn_rows = [i for i, l in enumerate(layers) if l.startswith("BatchNorm")]
    assert len(bn_rows) == 1
    dense_before = sum(l.startswith("Dense") for l in layers[: bn_rows[0]])
    assert dense_before == 2  # BatchNorm follows the Dense with zero-based index 1


def test_train_mnist_file_count(capsys, tmp_path):
    code, out, _ = run(capsys, "train-mnist", "--preset", "paper", "--act", "relu,swish,eswish:1.5,eswish:2",
                       "--seeds", "1,2,3", "--epochs", "1", "--synthetic", "--synthetic-per-class", "20",
                       "--jobs", "1", "--out", tmp_path)
    assert code == EXIT_OK
    names = {p.name for p in tmp_path.iterdir()}
    per_run = [n for n in names if re.fullmatch(r"mnist_.+_mlp_\d+\.csv", n)]
    assert len(per_run) == 12 and "mnist_summary.csv" in names


@pytest.mark.parametrize("argv", [
    ["train-depth", "--synthetic", "--epochs", "3", "--milestones", "2"],
    ["train-mnist", "--preset", "desk", "--synthetic", "--act", "elu,eswish:1.25"],
    ["landscape", "--act", "tanh", "--resolution", "9"],
    ["curves", "--betas", "1,1.5"],
    ["grad-check", "--act", "tanh"],
    ["eval", "--load-weights", "w.eswnet", "--synthetic"],
])
def test_resolved_config_reparses_identically(argv):
    parser = build_parser()
    first = parser.parse_args(argv)
    resolve(first)
    line = resolved_argv(parser, first)
    second = parser.parse_args(line)
    resolve(second)
    assert vars(first) == vars(second)
    assert resolved_argv(parser, second) == line


def test_resolved_line_printed_first(capsys, tmp_path):
    code, out, _ = run(capsys, "curves", "--points", "11", "--out", tmp_path)
    assert code == EXIT_OK and out.startswith("resolved: eswish curves ")
    parser = build_parser()
    again = parser.parse_args(resolved_line(out))
    assert again.points == 11 and again.betas == [1.0, 1.25, 1.5, 1.75, 2.0]


def test_save_and_eval_weights(capsys, tmp_path):
    code, out, _ = run(capsys, "train-mnist", "--act", "relu", "--seeds", "1", "--epochs", "2", "--synthetic",
                       "--synthetic-per-class", "30", "--jobs", "1", "--out", tmp_path / "out",
                       "--save-weights", tmp_path / "w")
    assert code == EXIT_OK
    wfile = tmp_path / "w" / "mnist_relu_mlp_1.eswnet"
    assert wfile.read_bytes()[:8] == b"ESWNET1\0"
    code, out, _ = run(capsys, "eval", "--load-weights", wfile, "--synthetic", "--synthetic-per-class", "30")
    assert code == EXIT_OK
    printed = float(out.strip().splitlines()[-1].split()[-1])
    summary = (tmp_path / "out" / "mnist_summary.csv").read_text().splitlines()[1].split(",")
    assert printed == pytest.approx(float(summary[1]), abs=1e-4)


def test_eval_missing_file_is_io_error(capsys, tmp_path):
    assert run(capsys, "eval", "--load-weights", tmp_path / "none.eswnet", "--synthetic")[0] == EXIT_IO
