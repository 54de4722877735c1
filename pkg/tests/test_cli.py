import csv
import io
import json
import subprocess
import sys

import pytest

from fairmdp.cli import main
from fairmdp.mdp import load_fixture

TINY_LOAN = ["--iterations", "2", "--samples", "6", "--elite", "2", "--rollouts", "20",
             "--eval-episodes", "200"]


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_solve_parity_example(capsys, tmp_path):
    table = tmp_path / "pi.csv"
    code, out, _ = run(capsys, "solve", "fixture:parity_example", "--csv", str(table))
    assert code == 0
    assert "status: Fair" in out
    assert "pi(s2,.) = (0.5, 0.5)" in out
    rows = list(csv.reader(table.open()))
    assert rows[0] == ["state", "a0", "a1"] and len(rows) == 6


def test_solve_infeasible_exit_code(capsys):
    code, out, _ = run(capsys, "solve", "fixture:parity_infeasible")
    assert code == 2 and "status: Infeasible" in out


def test_solve_finite_horizon_writes_layers(capsys, tmp_path):
    table = tmp_path / "pi.csv"
    code, _, _ = run(capsys, "solve", "fixture:etc_four_state", "--horizon", "3", "--csv", str(table))
    assert code == 0
    rows = list(csv.reader(table.open()))
    assert rows[0][:2] == ["t", "state"] and len(rows) == 1 + 3 * 4


def test_bad_inputs_exit_one(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(capsys, "solve", str(bad))[0] == 1
    doc = load_fixture("parity_example").to_dict()
    doc["initial"] = [1.0, 1.0, 0.0, 0.0, 0.0]
    invalid = tmp_path / "invalid.json"
    invalid.write_text(json.dumps(doc))
    code, _, err = run(capsys, "solve", str(invalid))
    assert code == 1 and "initial" in err
    assert run(capsys, "solve", str(tmp_path / "missing.json"))[0] == 1
    with pytest.raises(SystemExit) as info:
        main(["no-such-command"])
    assert info.value.code == 1


def test_eo_needs_qualified(capsys):
    assert run(capsys, "solve", "fixture:parity_example", "--criterion", "eo")[0] == 1
    code, out, _ = run(capsys, "solve", "fixture:parity_example", "--criterion", "eo", "--qualified", "0,2")
    assert code == 0


def test_mix_two_state_chain(capsys):
    code, out, _ = run(capsys, "mix", "fixture:two_state_chain", "--eps0", "1e-6")
    assert code == 0
    lines = out.splitlines()
    assert lines[1] == "s0,0.4" and lines[2] == "s1,0.6"
    assert lines[-1] == "mixing_time,20"


def test_mix_rejects_reducible_chain(capsys):
    code, _, err = run(capsys, "mix", "fixture:parity_example")
    assert code == 1 and "error" in err


def test_train_is_reproducible(capsys):
    argv = ["train", "fixture:parity_example", "--horizon", "8", "--iterations", "3", "--samples", "8",
            "--elite", "2", "--rollouts", "10", "--tolerance", "0.1", "--seed", "5"]
    code, first, _ = run(capsys, *argv)
    assert code == 0
    assert run(capsys, *argv)[1] == first
    assert first.splitlines()[0].startswith("iteration,")


def test_seed_from_environment(capsys, monkeypatch):
    argv = ["etc-experiment", "--episodes", "30", "--explore", "10"]
    monkeypatch.setenv("FAIRMDP_SEED", "11")
    a = run(capsys, *argv)[1]
    b = run(capsys, *argv, "--seed", "11")[1]
    assert a == b
    monkeypatch.setenv("FAIRMDP_SEED", "x")
    assert run(capsys, *argv)[0] == 1


def test_etc_curve_output(capsys):
    code, out, _ = run(capsys, "etc-experiment", "--curve", "100,1000")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "n,regret" and lines[-1].startswith("# slope")


def test_loan_experiment_byte_identical_and_cons_exact(capsys):
    argv = ["loan-experiment", "--method", "cons", "--seed", "2", *TINY_LOAN]
    code, first, _ = run(capsys, *argv)
    assert code == 0
    assert run(capsys, *argv)[1] == first
    rows = list(csv.DictReader(io.StringIO(first)))
    assert rows and all(float(r["constraint"]) == 0.0 for r in rows)


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "fairmdp.cli", "solve", "fixture:parity_example"],
                         capture_output=True, text=True, check=False)
    assert out.returncode == 0 and "pi(s2,.) = (0.5, 0.5)" in out.stdout
