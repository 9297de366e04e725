import json
import subprocess
import sys

import pytest

from hjbfd.cli import main


def run(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_list_problems(capsys):
    code, out, _ = run(["list-problems"], capsys)
    assert code == 0
    assert set(json.loads(out)) == {"linear-manufactured-disk", "two-control", "monge-ampere"}


def test_solve_outputs(tmp_path, capsys):
    code, out, _ = run(["solve", "--out", str(tmp_path), "--h", "0.1"], capsys)
    assert code == 0 and "converged=True" in out
    for name in ("solution.hjbgrid", "solve_report.json", "timing.json"):
        assert (tmp_path / name).exists()
    assert not (tmp_path / "solution.svg").exists()
    report = json.loads((tmp_path / "solve_report.json").read_text())
    assert "wall_time" not in report["report"]


def test_solve_plot(tmp_path, capsys):
    assert run(["solve", "--out", str(tmp_path), "--h", "0.2", "--plot"], capsys)[0] == 0
    assert (tmp_path / "solution.svg").stat().st_size > 0


def test_study_deterministic(tmp_path, capsys):
    args = ["study", "--problem", "two-control", "--h-list", "0.2,0.1", "--seed", "3"]
    names = ("study_report.json", "errors.csv", "rate.svg")
    code, out, _ = run(args + ["--out", str(tmp_path), "--plot"], capsys)
    assert code == 0 and "rate:" in out
    first = {n: (tmp_path / n).read_bytes() for n in names}
    run(args + ["--out", str(tmp_path), "--plot"], capsys)
    for n in names:
        assert (tmp_path / n).read_bytes() == first[n]
    assert first["errors.csv"].startswith(b"h,error,M1,M2,M3,M4\n")


def test_config_file_and_precedence(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"problem": "monge-ampere", "h": 0.2,
                               "params": {"n_controls": 4}}))
    code, _, _ = run(["solve", "--config", str(cfg), "--h", "0.25",
                      "--out", str(tmp_path / "o")], capsys)
    assert code == 0
    rep = json.loads((tmp_path / "o" / "solve_report.json").read_text())
    assert rep["config"]["h"] == 0.25
    assert rep["config"]["params"]["n_controls"] == 4


@pytest.mark.parametrize("args", [
    ["solve", "--problem", "nope"],
    ["solve", "--tol", "0"],
    ["solve", "--param", "gamma"],
    ["solve", "--problem", "monge-ampere", "--param", "gamma=\"x\""],
    ["study", "--h-list", "0.05,0.1"],
    ["check", "--suite", "comparisn"],
    ["solve", "--config", "/nonexistent.json"],
    ["frobnicate"],
])
def test_config_errors_exit_2(args, tmp_path, capsys):
    code, _, err = run(args + (["--out", str(tmp_path)] if args[0] != "frobnicate" else []),
                       capsys)
    assert code == 2
    if "nope" in args:
        assert "two-control" in err


def test_decompose(capsys):
    code, out, _ = run(["decompose", "--matrix", "[[2,1],[1,2]]"], capsys)
    assert code == 0
    assert json.loads(out[out.index("{"):])["lambda"] == [1.0, 1.0, 1.0, 0.0]
    code, _, _ = run(["decompose", "--matrix", "[[1,0.9],[0.9,1]]", "--directions", "axis"],
                     capsys)
    assert code == 3


def test_check_single_suite(tmp_path, capsys):
    code, out, _ = run(["check", "--suite", "taylor", "--suite", "comparison",
                        "--out", str(tmp_path)], capsys)
    assert code == 0
    assert "taylor: " in out and "comparison: 300/300 passed" in out


@pytest.mark.slow
def test_check_all_seed_42(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "hjbfd", "check", "--seed", "42",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stdout + proc.stderr
