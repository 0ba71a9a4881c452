import json
import subprocess
import sys

import numpy as np
import pytest

from symlie.cli import main
from symlie.qudit_energy import QuditOperator, QuditSpec, build_interaction

ZZZ = {"n": 3, "mode": "exact", "terms": [{"pauli": "ZZZ", "num": 1, "den": 1}]}


@pytest.fixture
def files(tmp_path):
    (tmp_path / "zzz.json").write_text(json.dumps(ZZZ))
    (tmp_path / "target.json").write_text(json.dumps({"hamiltonian": ZZZ, "time": -0.7}))
    return tmp_path


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_dims_table(capsys, tmp_path):
    code, out, _ = run(capsys, "dims", "--qubits", "3", "--kmax", "3", "--out", str(tmp_path / "d.json"))
    assert code == 0
    assert any(line.split()[:2] == ["3", "20"] for line in out.splitlines())
    data = json.loads((tmp_path / "d.json").read_text())
    assert data["rows"][-1]["dim"] == 20


def test_charge_test(capsys, files):
    code, out, _ = run(capsys, "charge-test", "--target", str(files / "zzz.json"), "--k", "2")
    assert code == 0
    assert json.loads(out) == {"pass": False, "violations": {"3": 1.0}}


def test_compile_then_verify(capsys, files):
    plan = files / "plan.json"
    code, _, _ = run(capsys, "compile", "--target", str(files / "target.json"), "--ancilla", "auto",
                     "--epsilon", "1e-2", "--geometry", "chain-star", "--out", str(plan))
    assert code == 0
    data = json.loads(plan.read_text())
    assert data["verification"]["pulse_level"]["distance"] <= 1e-2
    code, out, _ = run(capsys, "verify", "--plan", str(plan), "--target", str(files / "target.json"))
    assert code == 0 and json.loads(out)["distance"] <= 1e-2


def test_verify_failure_exit_code(capsys, files):
    plan = files / "plan.json"
    run(capsys, "compile", "--target", str(files / "target.json"), "--out", str(plan))
    code, _, err = run(capsys, "verify", "--plan", str(plan), "--target", str(files / "zzz.json"), "--time", "0.3")
    assert code == 3 and "epsilon" in err


def test_budget_exit_code(capsys, monkeypatch):
    monkeypatch.setenv("SYMLIE_BUDGET_DIM", "5")
    code, _, err = run(capsys, "close", "--qubits", "3", "--k", "2")
    assert code == 2 and "budget" in err


def test_validation_exit_codes(capsys, files):
    assert run(capsys, "nope")[0] == 1
    assert run(capsys, "dims", "--qubits", "3", "--bogus")[0] == 1
    assert run(capsys, "charge-test", "--target", str(files / "missing.json"), "--k", "2")[0] == 1
    assert run(capsys, "compile", "--target", str(files / "zzz.json"), "--ancilla", "1")[0] == 1


def test_close_membership(capsys, files):
    code, out, _ = run(capsys, "close", "--qubits", "3", "--k", "2", "--member", str(files / "zzz.json"))
    data = json.loads(out)
    assert code == 0 and data["member"] is False and data["dim"] == 19


def test_identities(capsys):
    code, out, err = run(capsys, "identities", "--seed", "3")
    data = json.loads(out)
    assert code == 0
    assert data["chain_signs"] == {"2": -1, "3": 1, "4": -1, "5": 1, "6": -1}
    assert "c_2 = -1" in err


def test_qudit_compile(capsys, tmp_path):
    spec = QuditSpec(2, 3, 1.0, 0)
    m = (build_interaction("R", (0, 1), (1, 2), spec).matrix * 0.8
         + build_interaction("Z", (0,), (2,), spec).matrix * 0.3)
    (tmp_path / "op.json").write_text(json.dumps({"operator": QuditOperator(m, spec.dims).to_json(), "time": 1.3}))
    (tmp_path / "spec.json").write_text(json.dumps({"n": 2, "d": 3, "gap": 1.0, "ancillas": 1}))
    code, out, _ = run(capsys, "qudit-compile", "--spec", str(tmp_path / "spec.json"),
                       "--target", str(tmp_path / "op.json"), "--epsilon", "1e-2")
    data = json.loads(out)
    assert code == 0 and data["report"]["measured_error"] <= 1e-2
    assert data["plan"]["dims"] == [3, 3, 2]


def test_deterministic_output(capsys, files):
    outs = []
    for _ in range(2):
        run(capsys, "compile", "--target", str(files / "target.json"), "--out", str(files / "p.json"))
        outs.append((files / "p.json").read_bytes())
    assert outs[0] == outs[1]


def test_module_entry_point(files):
    proc = subprocess.run([sys.executable, "-m", "symlie", "charge-test", "--target",
                           str(files / "zzz.json"), "--k", "3"], capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["pass"] is True
