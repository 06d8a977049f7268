import json

import numpy as np
import pytest

from weakmeas.harness import ExperimentSpec, ResultBundle, SpecError, run
from weakmeas.harness.cli import main
from weakmeas.lindblad import build_Q
from weakmeas.model import dump_model, qubit_bernoulli


def metric(bundle, name):
    return next(m for m in bundle.metrics if m["name"] == name)


def write_model(tmp_path, m, name="model.toml"):
    p = tmp_path / name
    p.write_text(dump_model(m))
    return str(p)


def test_spec_validation():
    with pytest.raises(SpecError):
        ExperimentSpec("nope").resolved()
    with pytest.raises(SpecError):
        ExperimentSpec("simulate", traj=0).resolved()
    with pytest.raises(SpecError):
        ExperimentSpec("simulate", horizon=-1.0).resolved()
    with pytest.raises(SpecError):
        ExperimentSpec("simulate", eps=(-0.1,)).resolved()
    spec = ExperimentSpec("rates").resolved()
    assert spec.eps == (0.2, 0.1, 0.05, 0.025) and spec.tolerances["rate_rel"] == 0.25


def test_bundle_bookkeeping(tmp_path):
    b = ResultBundle("x", {"a": 1})
    assert b.add("ok", 1.0, 2.0)
    assert not b.add("soft", 3.0, 2.0, gating=False)
    b.report("note", float("nan"))
    assert b.passed and b.failures() == []
    b.add("bad", 0.5, (0.6, 0.9), "in")
    assert not b.passed and [m["name"] for m in b.failures()] == ["bad"]
    b.tables["t"] = "a,b\n1,2\n"
    paths = b.write(tmp_path)
    assert sorted(p.name for p in paths) == ["x-t.csv", "x.json"]
    doc = json.loads((tmp_path / "x.json").read_text())
    assert doc["passed"] is False and doc["metrics"][2]["value"] == "nan"


def test_rates_bundle_uses_single_Q_construction(tmp_path):
    b = run(ExperimentSpec("rates"))
    q = build_Q(qubit_bernoulli()).q
    rows = [line.split(",") for line in b.tables["Q"].splitlines()[1:]]
    got = np.array([float(r[2]) for r in rows]).reshape(2, 2)
    assert np.array_equal(got, q)
    qeps = b.tables["qeps"].splitlines()
    assert qeps[1].startswith("0.2,skipped,")  # 0.2 violates g > 4 eps ||H|| for the reference model
    assert all(",ok," in line for line in qeps[2:])


def test_rates_diagonal_H_gives_zero_Q(tmp_path):
    path = write_model(tmp_path, qubit_bernoulli(hamiltonian=np.diag([0.5, -0.5])))
    b = run(ExperimentSpec("rates", model=path))
    assert b.passed
    assert all(float(r.split(",")[2]) == 0 for r in b.tables["Q"].splitlines()[1:])


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["rates", "--out", str(tmp_path / "a")]) == 0
    assert "all checks passed" in capsys.readouterr().out
    assert main(["simulate", "--traj", "0", "--out", str(tmp_path / "b")]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text("spectrum = [0, 0]\n")
    assert main(["rates", "--model", str(bad), "--out", str(tmp_path / "c")]) == 2
    # jump-rate check made to fail by an undersized, too-short window
    code = main(["verify-jump-rates", "--traj", "5", "--alpha", "0.5", "--out", str(tmp_path / "d")])
    assert code == 1
    assert "[FAIL]" in capsys.readouterr().out


def test_cli_rejects_precondition_violation(tmp_path):
    # s = 0.01 is below 2 eps^2 T for the purification estimator
    code = main(["verify-purification", "--eps", "0.1", "--horizon", "0.01", "--traj", "5",
                 "--alpha", "10", "--out", str(tmp_path)])
    assert code == 2


def test_simulate_outputs_and_determinism(tmp_path, monkeypatch):
    args = ["simulate", "--eps", "0.1", "--traj", "5", "--horizon", "0.5", "--snapshots", "0.1,0.3",
            "--seed", "11"]
    assert main(args + ["--out", str(tmp_path / "one")]) == 0
    monkeypatch.setenv("WEAKMEAS_THREADS", "3")
    assert main(args + ["--out", str(tmp_path / "two")]) == 0
    one = sorted(p.name for p in (tmp_path / "one").iterdir())
    assert one == sorted(p.name for p in (tmp_path / "two").iterdir())
    assert any(n.startswith("simulate-snapshots") for n in one)
    for name in one:
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()


def test_theorem1_bundle_metrics():
    b = run(ExperimentSpec("verify-theorem1"))
    assert b.passed
    r1 = metric(b, "err-ratio[0.2->0.1]")["value"]
    r2 = metric(b, "err-ratio[0.1->0.05]")["value"]
    assert 0.25 <= r1 <= 0.85 and 0.25 <= r2 <= 0.85


def test_eps0_jump_rates_records_no_jumps_beyond_misidentification():
    b = run(ExperimentSpec("verify-jump-rates", eps=(0.0,), window=40.0, horizon=400.0, traj=20, rho0="P0"))
    m = metric(b, "eps0-jump-frequency")
    assert m["pass"], m


def test_verdicts_recomputable_from_metrics():
    b = run(ExperimentSpec("verify-theorem1"))
    from weakmeas.harness.bundle import COMPARISONS
    for m in b.summary()["metrics"]:
        tol = tuple(m["tolerance"]) if isinstance(m["tolerance"], list) else m["tolerance"]
        assert COMPARISONS[m["comparison"]](m["value"], tol) == m["pass"]
