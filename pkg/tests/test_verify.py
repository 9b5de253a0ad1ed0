import json

from mlffbench.cli import main
from mlffbench.verify import run_checks


def test_negative_control_fails_gradient_checks():
    doc = run_checks(perturb=lambda f: f * (1 + 1e-4), only=["ani_forces_fd", "cff_forces_fd"])
    assert not doc["passed"]
    assert all(not c["passed"] for c in doc["checks"])


def test_crashing_check_is_a_failure():
    def boom(f):
        raise RuntimeError("boom")
    doc = run_checks(perturb=boom, only=["cff_forces_fd"])
    assert not doc["passed"] and "boom" in doc["checks"][0]["value"]


def test_cli_verify(tmp_path, capsys):
    assert main(["verify", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "verify.json").read_text())
    assert doc["passed"] and doc["schema_version"] == 1
    names = {c["name"] for c in doc["checks"]}
    assert {"aev_width", "ani_forces_fd", "et_forces_fd", "permutation_exact", "cml_zero_solvent_equals_mlff"} <= names
    assert all(set(c) >= {"name", "value", "tolerance", "passed"} for c in doc["checks"])
    assert capsys.readouterr().out.count("PASS") == len(doc["checks"])
