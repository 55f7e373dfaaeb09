import json
from pathlib import Path

import pytest
import yaml

from anisoflow import cli, solver
from anisoflow.errors import SolverError
from anisoflow.experiments import pipe_doc

TASKS = Path(__file__).resolve().parents[1] / "tasks"


@pytest.fixture
def small_yaml(tmp_path):
    p = tmp_path / "pipe8.yaml"
    p.write_text(yaml.safe_dump(pipe_doc(n=8, block_size=4, iterations=3)))
    return p


def test_simulate(tmp_path, small_yaml, capsys):
    out = tmp_path / "sim"
    assert cli.main(["simulate", "--task", str(small_yaml), "--out", str(out)]) == 0
    assert (out / "fields.vtk").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["passed"] and summary["use_blocks"]
    assert "PASS" in capsys.readouterr().out


def test_simulate_overrides(tmp_path, small_yaml):
    out = tmp_path / "sim"
    assert cli.main(["simulate", "--task", str(small_yaml), "--out", str(out), "--resolution", "12",
                     "--block-size", "3", "--no-blocks", "--binary"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert not summary["use_blocks"]
    assert (out / "fields.vtk").read_bytes().splitlines()[2] == b"BINARY"


def test_optimize(tmp_path, small_yaml):
    out = tmp_path / "opt"
    code = cli.main(["optimize", "--task", str(small_yaml), "--out", str(out), "--iters", "2"])
    summary = json.loads((out / "summary.json").read_text())
    assert code == (0 if summary["passed"] else 1)
    assert summary["iterations"] == 2
    assert len((out / "history.csv").read_text().strip().splitlines()) == 4
    assert (out / "best.vtk").exists()


def test_gradcheck(small_yaml, capsys):
    assert cli.main(["gradcheck", "--task", str(small_yaml), "--samples", "3"]) == 0
    assert "max relative error" in capsys.readouterr().out


def test_gradcheck_failure_exit_code(small_yaml):
    # a huge step cannot meet a tight tolerance
    assert cli.main(["gradcheck", "--task", str(small_yaml), "--samples", "3", "--step", "0.3",
                     "--rtol", "1e-12", "--atol", "0"]) == 1


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("grid: {dim: 2, cells: [4, -4]}\npatches: []\n")
    assert cli.main(["simulate", "--task", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "configuration error" in capsys.readouterr().err
    assert cli.main(["simulate", "--task", str(tmp_path / "missing.yaml"), "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["experiment", "no-such-thing"]) == 2
    assert cli.main(["experiment", "smoke-3d", "bogus=1"]) == 2
    assert cli.main(["experiment", "smoke-3d", "novalue"]) == 2


def test_bad_resolution_override(small_yaml, tmp_path):
    assert cli.main(["simulate", "--task", str(small_yaml), "--out", str(tmp_path), "--resolution", "0"]) == 2


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as info:
        cli.main(["simulate"])
    assert info.value.code == 2


def test_solver_failure_exit_code(small_yaml, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise SolverError("factorization failed")

    monkeypatch.setattr(solver, "simulate", boom)
    assert cli.main(["simulate", "--task", str(small_yaml), "--out", str(tmp_path)]) == 3


def test_overrides_parsing():
    got = cli._overrides(["resolution=16", "sizes=[4, 8]", "no-blocks-band=[0.4, 0.95]", "isotropic=true",
                          "kf_max=1e3"])
    assert got == {"resolution": 16, "sizes": (4, 8), "no_blocks_band": (0.4, 0.95), "isotropic": True,
                   "kf_max": 1000.0}


def test_experiment_command(tmp_path, capsys):
    out = tmp_path / "exp"
    assert cli.main(["experiment", "block-divergence", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "[PASS] ratio_with_blocks" in text
    assert json.loads((out / "verdict.json").read_text())["passed"]


def test_experiment_check_failure(capsys):
    # an impossible band for the unconstrained ratio
    assert cli.main(["experiment", "block-divergence", "no_blocks_band=[0.0, 0.1]"]) == 1
    assert "[FAIL] ratio_without_blocks" in capsys.readouterr().out
