import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from treeinner.cli import build_parser, main
from treeinner.data import Dataset, write_csv
from treeinner.harness import SWEEP_VALUES

from .conftest import TOY_X, TOY_Y

STUMP = ["--eta", "1", "--reg_lambda", "1", "--max_depth", "1", "--num_boost_round", "1"]


@pytest.fixture
def toy_csv(tmp_path):
    path = tmp_path / "toy.csv"
    write_csv(Dataset(TOY_X, TOY_Y, ["x1", "x2"]), path)
    return path


@pytest.fixture
def stump(tmp_path, toy_csv):
    out = tmp_path / "stump.json"
    assert main(["train", "--data", str(toy_csv), "--model-out", str(out), *STUMP]) == 0
    return out


def _scores(path):
    with open(path) as fh:
        return [float(r["score"]) for r in csv.DictReader(fh)]


def test_help_lists_hyperparameter_names(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["--help"])
    text = capsys.readouterr().out
    for name in SWEEP_VALUES:
        assert name in text
    with pytest.raises(SystemExit):
        build_parser().parse_args(["train", "--help"])
    text = capsys.readouterr().out
    for name in SWEEP_VALUES:
        assert f"--{name}" in text


def test_train_defaults_are_standard():
    args = build_parser().parse_args(["train", "--data", "d.csv", "--model-out", "m.json"])
    assert (args.eta, args.max_depth, args.min_child_weight, args.num_boost_round, args.reg_lambda) == (
        1e-2, 4, 1.0, 400, 1.0,
    )


def test_train_zero_rounds_exit_2(toy_csv, tmp_path):
    code = main(["train", "--data", str(toy_csv), "--model-out", str(tmp_path / "m.json"), "--num_boost_round", "0"])
    assert code == 2


def test_unknown_flag_exit_2():
    with pytest.raises(SystemExit) as info:
        main(["train", "--bogus"])
    assert info.value.code == 2


def test_train_missing_file_exit_3(tmp_path):
    assert main(["train", "--data", str(tmp_path / "nope.csv"), "--model-out", str(tmp_path / "m.json")]) == 3


def test_train_bad_data_exit_4(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x1,y\n1,nan\n2,3\n")
    assert main(["train", "--data", str(path), "--model-out", str(tmp_path / "m.json")]) == 4
    path.write_text("x1,x2,y\n0,1,0\n1,0,2\n")
    code = main(["train", "--data", str(path), "--model-out", str(tmp_path / "m.json"), "--task", "classification"])
    assert code == 4


def test_train_deterministic(toy_csv, tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for out in (a, b):
        assert main(["train", "--data", str(toy_csv), "--model-out", str(out), "--seed", "4", "--num_boost_round", "5"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert "train_risk" in capsys.readouterr().out


def test_verify_fresh_model(stump, toy_csv, capsys):
    assert main(["verify", "--model", str(stump), "--train-data", str(toy_csv)]) == 0
    out = capsys.readouterr().out
    assert "ok" in out and "FAIL" not in out


def test_verify_wrong_data_exit_4(stump, tmp_path):
    other = tmp_path / "other.csv"
    write_csv(Dataset(TOY_X, -TOY_Y, ["x1", "x2"]), other)
    assert main(["verify", "--model", str(stump), "--train-data", str(other)]) == 4


def test_verify_zero_sum_line(toy_csv, tmp_path, capsys):
    model = tmp_path / "lam0.json"
    flags = ["--eta", "1", "--reg_lambda", "0", "--max_depth", "1", "--num_boost_round", "1"]
    main(["train", "--data", str(toy_csv), "--model-out", str(model), *flags])
    capsys.readouterr()
    assert main(["verify", "--model", str(model), "--train-data", str(toy_csv)]) == 0
    line = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("zero_sum")][0]
    assert float(line.split("\t")[1]) <= 1e-8 * 3


def test_verify_tight_tolerance_fails(tmp_path, capsys):
    rng = np.random.default_rng(0)
    path = tmp_path / "d.csv"
    write_csv(Dataset(rng.normal(size=(200, 4)), rng.normal(size=200)), path)
    model = tmp_path / "m.json"
    main(["train", "--data", str(path), "--model-out", str(model), "--num_boost_round", "30", "--eta", "0.3"])
    assert main(["verify", "--model", str(model), "--train-data", str(path), "--tolerance", "-1"]) == 1


@pytest.mark.parametrize(
    "family, expected", [("tree_inner", [5 / 6, 0.0]), ("forest_inner", [5 / 6, 0.0]), ("abs", [7 / 18, 0.0])]
)
def test_gfa_worked_example(stump, toy_csv, tmp_path, family, expected):
    out = tmp_path / "g.csv"
    code = main(["gfa", "--model", str(stump), "--data", str(toy_csv), "--family", family, "--domain-tag", "train", "--out", str(out)])
    assert code == 0
    assert _scores(out) == pytest.approx(expected, abs=1e-12)


def test_gfa_zero_residuals(stump, tmp_path):
    zero = tmp_path / "z.csv"
    write_csv(Dataset(TOY_X, np.zeros(3), ["x1", "x2"]), zero)
    out = tmp_path / "g.json"
    assert main(["gfa", "--model", str(stump), "--data", str(zero), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["scores"] == [0.0, 0.0]


def test_gfa_permutation_repeats(stump, toy_csv, tmp_path):
    out = tmp_path / "p.csv"
    args = ["gfa", "--model", str(stump), "--data", str(toy_csv), "--family", "permutation", "--out", str(out)]
    assert main([*args, "--n-repeats", "3"]) == 0
    assert main([*args, "--n-repeats", "0"]) == 2


def test_attribute(stump, toy_csv, tmp_path):
    out, forest = tmp_path / "a.csv", tmp_path / "f.csv"
    assert main(["attribute", "--model", str(stump), "--data", str(toy_csv), "--out", str(out), "--forest-out", str(forest)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert [float(r["contribution"]) for r in rows] == pytest.approx([1 / 3, 1 / 3, -1 / 2])
    assert json.loads((tmp_path / "a.bias.json").read_text())["bias"] == [0.0]


def test_missing_model_exit_3(toy_csv, tmp_path):
    assert main(["gfa", "--model", str(tmp_path / "no.json"), "--data", str(toy_csv), "--out", str(tmp_path / "o.csv")]) == 3


def test_gen_data_and_experiment(tmp_path, capsys):
    data_dir = tmp_path / "data"
    assert main(["gen-data", "--n-train", "50", "--n-valid", "50", "--seed", "2", "--out-dir", str(data_dir)]) == 0
    truth = json.loads((data_dir / "truth.json").read_text())
    assert len(truth["relevant"]) == 5
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "dataset": {"kind": "simulated", "n_train": 150, "n_valid": 150},
        "replications": 1,
        "params": {"num_boost_round": 20, "eta": 0.1},
        "methods": [{"family": "tree_inner", "ifa": "predecomp", "domain": "valid"}],
    }))
    outs = []
    for name in ("r1", "r2"):
        assert main(["experiment", "--config", str(cfg), "--out-dir", str(tmp_path / name), "--jobs", "1"]) == 0
        outs.append(tmp_path / name)
    series = sorted(p.name for p in outs[0].glob("series_*.csv"))
    assert len(series) == 5
    for p in outs[0].iterdir():
        assert p.read_bytes() == (outs[1] / p.name).read_bytes()


def test_gen_data_chip(tmp_path):
    rng = np.random.default_rng(1)
    table = tmp_path / "raw.csv"
    with table.open("w") as fh:
        fh.write(",".join(f"c{j}" for j in range(8)) + ",label\n")
        for row in rng.normal(size=(40, 9)):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    out = tmp_path / "chip"
    args = ["gen-data", "--kind", "chip", "--input", str(table), "--drop-column", "label", "--n-train", "30", "--out-dir", str(out)]
    assert main(args) == 0
    header = (out / "train.csv").read_text().splitlines()[0].split(",")
    assert "label" not in header and len(header) == 9
    assert main(["gen-data", "--kind", "chip", "--out-dir", str(out)]) == 2


def test_experiment_bad_config_exit_4(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"replications": 0}))
    assert main(["experiment", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 4


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "treeinner", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "treeinner" in proc.stdout
