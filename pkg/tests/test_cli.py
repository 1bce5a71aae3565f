import csv
import json

import pytest

from cbfal import cli
from cbfal import scenarios as S
from cbfal.cli import RunConfig, exit_code, main


def run(tmp_path, *args):
    return main(["run", "--out", str(tmp_path), *args])


def test_run_case1_short_horizon(tmp_path, capsys):
    # t_end below 20 skips the terminal-state check
    assert run(tmp_path, "--scenario", "case1", "--t-end", "5") == 0
    assert (tmp_path / "case1.csv").exists() and (tmp_path / "case1.report").exists()
    assert "PASS  invariance" in capsys.readouterr().out
    with open(tmp_path / "case1.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0][:3] == ["t", "x_0", "u_0"]
    assert float(rows[-1][0]) == pytest.approx(5.0)


def test_run_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run(d, "--scenario", "case1", "--t-end", "3", "--set", "gamma=2") == 0
    assert (a / "case1.csv").read_bytes() == (b / "case1.csv").read_bytes()


def test_unfiltered_case1_is_a_passing_baseline(tmp_path, capsys):
    assert run(tmp_path, "--scenario", "case1", "--set", "filter.enabled=false") == 0
    out = capsys.readouterr().out
    assert "unsafe_witness" in out and "finite_escape" in out
    # the partial trajectory up to the escape is still written
    assert (tmp_path / "case1.csv").stat().st_size > 0


def test_case4_run_produces_demonstration(tmp_path, capsys):
    assert run(tmp_path, "--scenario", "case4") == 0
    assert "invalid_no_degree" in capsys.readouterr().out
    assert not (tmp_path / "case4.csv").exists()


def test_structured_report(tmp_path):
    assert run(tmp_path, "--scenario", "case4", "--report", "structured") == 0
    doc = json.loads((tmp_path / "case4.report").read_text())
    assert doc["scenario"] == "case4" and doc["pass"] is True and doc["exit_code"] == 0
    for rec in doc["checks"]:
        assert set(rec) >= {"name", "threshold", "value", "pass"}


def test_failed_check_exit_code(tmp_path, capsys):
    assert run(tmp_path, "--scenario", "case1", "--set", "filter.enabled=false", "--t-end", "3") == 4
    assert "FAIL  finite_escape" in capsys.readouterr().out


@pytest.mark.parametrize("args", [
    ["--scenario", "nope"],
    ["--scenario", "case1", "--set", "bogus=1"],
    ["--scenario", "case1", "--set", "gamma"],
    ["--scenario", "predator_prey", "--set", "x1_min=0.9"],
    [],
])
def test_config_errors_exit_1(tmp_path, args):
    assert run(tmp_path, *args) == 1


def test_config_file(tmp_path):
    cfg = RunConfig("case1", {"t_end": 2.0, "gamma": 1.5}, out=tmp_path / "o")
    path = tmp_path / "run.ini"
    path.write_text(cfg.to_ini())
    assert main(["run", "--config", str(path)]) == 0
    assert (tmp_path / "o" / "case1.csv").exists()


def test_malformed_config_file(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[run]\nscenario = case1\n[extras]\nx = 1\n")
    assert main(["run", "--config", str(path)]) == 1


def test_gnuplot_script(tmp_path):
    assert run(tmp_path, "--scenario", "case1", "--t-end", "1", "--gnuplot-script") == 0
    script = (tmp_path / "case1.gp").read_text()
    assert "case1.csv" in script and "plot" in script


def test_exit_code_is_function_of_report():
    rep = S.Report("x")
    rep.add("invariance", "min H >= 0", 0.1, True)
    assert exit_code(rep) == 0
    rep.add("comparison_bound", "bound", -1.0, False)
    assert exit_code(rep) == 4
    rep.add("completed", "no early termination", "NonFiniteState", False)
    assert exit_code(rep) == 2


def test_verify_default_passes(capsys):
    assert main(["verify", "--cases", "200"]) == 0
    out = capsys.readouterr().out
    for suite in ("kkt_oracle", "finite_difference", "integration_by_parts", "class_k"):
        assert f"PASS  {suite}" in out


def test_verify_corrupted_spec_exits_3(capsys):
    assert main(["verify", "--cases", "10", "--corrupt", "case2"]) == 3
    out = capsys.readouterr().out
    line = [l for l in out.splitlines() if l.startswith("first failing case:")][0]
    case = json.loads(line.split(":", 1)[1])
    assert case["suite"] == "finite_difference" and case["spec"] == "case2"
    assert "finite-difference mismatch" in case["reason"]


def test_verify_unknown_corrupt_target():
    assert main(["verify", "--cases", "10", "--corrupt", "nope"]) == 1


def test_verify_zero_cases(caplog):
    assert main(["verify", "--cases", "0"]) == 0
    assert "empty suite" in caplog.text


def test_convergence_single_dt_is_config_error():
    assert main(["convergence", "--scenario", "case1", "--dt", "1e-3"]) == 1


def test_convergence_at_equilibrium():
    eq = S.PredatorPreyParams().equilibrium
    over = {"x0_prey": eq[0], "x0_predator": eq[1], "filter.enabled": False, "t_end": 10.0}
    _, _, diffs, _ = cli.convergence_table("predator_prey", [4e-3, 2e-3, 1e-3], over)
    assert max(diffs) <= 1e-10


def test_convergence_command_prints_order(capsys):
    assert main(["convergence", "--scenario", "case1", "--dt", "4e-3,2e-3,1e-3", "--set", "t_end=4"]) == 0
    out = capsys.readouterr().out
    assert "observed order" in out


def test_batch(tmp_path, capsys):
    code = main(["batch", "--scenarios", "case1,case4", "--set", "t_end=1", "--out", str(tmp_path),
                 "--workers", "2"])
    assert code == 0
    assert (tmp_path / "case1.report").exists() and (tmp_path / "case4.report").exists()
    assert "PASS  case1" in capsys.readouterr().out
