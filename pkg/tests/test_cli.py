import json
import subprocess
import sys

import pytest

from meanfield.cli import EXIT_BUDGET, EXIT_CONFIG, EXIT_OK, main

CONFIG = {"seed": 0, "mode_space": {"M": 2}, "psi0": {}, "a": {"p": 1},
          "t_grid": [0.0, 0.1], "N_list": [2, 4, 6, 8], "nu": 1.0, "orders": {"K": 2}}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(CONFIG))
    return path


def run(argv, capsys):
    code = main([str(x) for x in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_graph_count_json(capsys):
    code, out, _ = run(["graphs", "count", "--p", 1, "--k", 2, "--l", 0], capsys)
    row = json.loads(out)
    assert code == EXIT_OK
    assert row["structures"] == 28 and row["tree_closed_form"] == 28


def test_catalan_csv(capsys):
    code, out, _ = run(["graphs", "catalan", "--m", 2, "--n", 4, "--format", "csv"], capsys)
    assert code == EXIT_OK
    assert out.splitlines() == ["m,n,catalan,recursion_sum", "2,4,14,14"]


def test_graph_count_over_ceiling(capsys):
    code, _, err = run(["graphs", "count", "--p", 4, "--k", 1, "--l", 0], capsys)
    assert code == EXIT_BUDGET and "budget" in err


def test_kato_check(capsys):
    code, out, _ = run(["kato", "check", "--d", 3], capsys)
    rep = json.loads(out)
    assert code == EXIT_OK and rep["abs_err"] < 1e-8


def test_kato_bad_gamma(capsys):
    code, _, _ = run(["kato", "check", "--d", 3, "--gamma", 0.2], capsys)
    assert code == EXIT_CONFIG


@pytest.mark.parametrize("cmd", [["egorov", "sweep"], ["marginals"], ["dyn", "expand"],
                                 ["hartree", "evolve"]])
def test_config_commands(cmd, config_file, capsys):
    code, out, _ = run(cmd + ["--config", config_file], capsys)
    assert code == EXIT_OK
    json.loads(out)


def test_sweep_csv_is_reproducible(config_file, tmp_path, capsys):
    outs = []
    for i in range(2):
        path = tmp_path / f"o{i}.csv"
        code, _, _ = run(["egorov", "sweep", "--config", config_file, "--seed", 5,
                          "--format", "csv", "--out", path], capsys)
        assert code == EXIT_OK
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]
    assert outs[0].splitlines()[0] == b"N,n,t,lhs_re,lhs_im,rhs_re,rhs_im,abs_err,marginal_trace_dist"


def test_timing_adds_a_column(config_file, capsys):
    code, out, _ = run(["egorov", "sweep", "--config", config_file, "--format", "csv",
                        "--timing"], capsys)
    assert out.splitlines()[0].endswith(",wall_ms")


def test_bad_config_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({**CONFIG, "nu": -1}))
    code, _, err = run(["egorov", "sweep", "--config", path], capsys)
    assert code == EXIT_CONFIG and "nu" in err


def test_budget_exit_code(tmp_path, capsys):
    path = tmp_path / "big.json"
    path.write_text(json.dumps({**CONFIG, "mode_space": {"M": 4}, "N_list": [40]}))
    code, _, _ = run(["egorov", "sweep", "--config", path], capsys)
    assert code == EXIT_BUDGET


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "meanfield", "graphs", "catalan", "--m", "3",
                           "--n", "2"], capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["catalan"] == 3
    proc = subprocess.run([sys.executable, "-m", "meanfield", "graphs"], capture_output=True)
    assert proc.returncode == 2
