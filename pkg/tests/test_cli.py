import json

import pytest

from ci_dkf.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_reach_prints_sets(capsys):
    code, out, _ = run(capsys, "reach", "--scenario", "sec5_general", "--window", "64",
                       "--horizon", "1024")
    assert code == 0
    assert "R_2 = {1, 2}" in out
    assert "R_10 = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10}" in out
    assert "verified on [0, 1023]" in out


def test_simulate_csv(capsys, tmp_path):
    out_path = tmp_path / "mse.csv"
    code, _, _ = run(capsys, "simulate", "--scenario", "sec5_general", "--steps", "4", "--trials",
                     "2", "--seed", "7", "--out", str(out_path), "--plot", str(tmp_path / "p.svg"))
    assert code == 0
    lines = out_path.read_text().splitlines()
    assert lines[0] == "k,node,mse,trace_phat,trace_plocal"
    assert len(lines) == 1 + 4 * 10
    assert (tmp_path / "p.svg").exists()


def test_gramian_strict_exit_codes(capsys):
    code, out, _ = run(capsys, "gramian", "--scenario", "sec5_degraded", "--all-nodes",
                       "--window", "8", "--horizon", "32", "--strict")
    assert code == 3
    assert "node 1 subset {1} window 8" in out and "NOT observable" in out
    code, out, _ = run(capsys, "gramian", "--scenario", "sec5_general", "--node", "10",
                       "--window", "8", "--horizon", "16")
    assert code == 0
    assert out.count("min_eig") == 17


def test_fixpoint_then_spectral(capsys, tmp_path):
    fix = tmp_path / "fix.json"
    code, out, _ = run(capsys, "fixpoint", "--scenario", "sec5_periodic", "--out", str(fix))
    assert code == 0
    d = json.loads(fix.read_text())
    assert len(d["phases"]) == 4 and len(d["phases"][0]["X"]) == 40
    code, out, _ = run(capsys, "spectral", "--scenario", "sec5_periodic", "--fix", str(fix))
    assert code == 0 and "verdict: STABLE" in out


def test_fixpoint_needs_periodic(capsys):
    code, _, err = run(capsys, "fixpoint", "--scenario", "sec5_general")
    assert code == 1 and "periodic" in err


def test_lint_and_periodicity(capsys):
    code, out, _ = run(capsys, "lint", "--scenario", "sec5_periodic")
    assert code == 0 and out.strip().endswith("ok")
    code, out, _ = run(capsys, "periodicity", "--scenario", "sec5_periodic", "--steps", "300",
                       "--tail", "50")
    assert code == 0 and "converged" in out


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["nonsense"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["reach"])
    assert exc.value.code == 1
    code, _, err = run(capsys, "reach", "--scenario", "no_such_file.json")
    assert code == 1 and "no_such_file" in err


def test_numerical_failure_exit_code(capsys, tmp_path):
    raw = {"plant": {"A": [[1.0, 0.0], [0.0, 1.0]], "Q": [[1.0, 0.0], [0.0, 1.0]]},
           "initial": {"x0_mean": [0.0, 0.0], "P0": [[1.0, 0.0], [0.0, 1.0]]},
           "sensors": [{"C": [[1.0, 0.0]], "R": [[1.0]]}],
           "graph": {"N": 1, "self_loops": True, "edges": []}, "period": 1}
    p = tmp_path / "unobs.json"
    p.write_text(json.dumps(raw))
    code, _, err = run(capsys, "fixpoint", "--scenario", str(p), "--max-iters", "200")
    assert code == 2 and "numerical failure" in err


def test_threads_env_override(capsys, monkeypatch, tmp_path):
    monkeypatch.setenv("CI_DKF_THREADS", "2")
    a = tmp_path / "a.csv"
    assert main(["simulate", "--scenario", "sec5_general", "--steps", "3", "--trials", "3",
                 "--out", str(a)]) == 0
    monkeypatch.delenv("CI_DKF_THREADS")
    b = tmp_path / "b.csv"
    assert main(["simulate", "--scenario", "sec5_general", "--steps", "3", "--trials", "3",
                 "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
