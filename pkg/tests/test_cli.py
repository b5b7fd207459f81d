import json
import os
import subprocess
import sys

import numpy as np
import pytest
from filelock import FileLock

from gridadp.cli import RunConfig, main
from gridadp.grid import PolicyField, load_field, save_field


def write_config(tmp_path, name="cfg.json", **kw):
    data = {"benchmark": "lqr1d", "output_dir": str(tmp_path / "out")}
    data.update(kw)
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("solve")
    cfg = write_config(tmp, initial_policy="-1.0*x1")
    assert main(["solve", "--config", cfg]) == 0
    return tmp / "out"


def test_solve_writes_artifacts(solved):
    for f in ("trace.csv", "summary.json", "value.csv", "policy.csv"):
        assert (solved / f).exists()
    summary = json.loads((solved / "summary.json").read_text())
    assert summary["converged"] and summary["iterations"] <= 6
    assert summary["config"]["initial_policy"] == "-1.0*x1"
    assert len(summary["wall_ms"]) == summary["iterations"]
    snaps = sorted(os.listdir(solved / "snapshots"))
    assert "policy_0000.csv" in snaps and "value_0000.csv" in snaps
    assert isinstance(load_field(solved / "policy.csv"), PolicyField)


def test_solve_refuses_zero_policy(tmp_path, capsys):
    cfg = write_config(tmp_path, initial_policy="0.0")
    assert main(["solve", "--config", cfg]) == 1
    assert "admissibility" in capsys.readouterr().err
    assert (tmp_path / "out" / "certs" / "initial_admissibility.json").exists()


def test_solve_budget_exhausted(tmp_path):
    cfg = write_config(tmp_path, solve={"max_iters": 1})
    assert main(["solve", "--config", cfg]) == 2


def test_cli_flags_override_config(tmp_path):
    cfg = write_config(tmp_path, benchmark="deadbeat-toy")
    out = tmp_path / "other"
    assert main(["solve", "--config", cfg, "--algo", "mlpi", "--lookahead", "2",
                 "--snapshots", "false", "--out", str(out), "--seed", "3"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["algorithm"] == "mlpi" and summary["options"]["lookahead_steps"] == 2
    assert summary["config"]["seed"] == 3
    assert not (out / "snapshots").exists()


def test_inline_system_vi_from_zero(tmp_path):
    cfg = write_config(
        tmp_path, benchmark=None, algorithm="vi", initial_value="zero",
        system={"state_dim": 1, "control_dim": 1, "dynamics": ["x1 + u1"], "cost": "x1^2 + u1^2",
                "domain": {"lower": [-1], "upper": [1], "nodes": [101]},
                "controls": {"lower": [-2], "upper": [2], "samples": [201]}},
    )
    assert main(["solve", "--config", cfg]) == 0
    V = load_field(tmp_path / "out" / "value.csv")
    x = V.grid.points[:, 0]
    np.testing.assert_allclose(V.values, (1 + 5**0.5) / 2 * x**2, atol=5e-3)


def test_initial_policy_from_file(tmp_path, solved):
    cfg = write_config(tmp_path, initial_policy={"file": str(solved / "policy.csv")})
    assert main(["solve", "--config", cfg]) == 0
    assert json.loads((tmp_path / "out" / "summary.json").read_text())["iterations"] <= 2


@pytest.mark.parametrize("bad", [
    {"benchmark": "nope"},
    {"algorithm": "dp"},
    {"initial_value": "zero"},
    {"colour": 1},
    {"initial_policy": "import os"},
    {"solve": {"max_iter": 3}},
])
def test_bad_configs_exit_1(tmp_path, bad):
    assert main(["solve", "--config", write_config(tmp_path, **bad)]) == 1


def test_missing_config_exit_1(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "missing.json")]) == 1
    (tmp_path / "broken.json").write_text("{")
    assert main(["solve", "--config", str(tmp_path / "broken.json")]) == 1


def test_locked_output_dir(tmp_path):
    cfg = write_config(tmp_path)
    os.makedirs(tmp_path / "out")
    with FileLock(str(tmp_path / "out" / ".lock")):
        assert main(["solve", "--config", cfg]) == 1


def test_reproducible_trace(tmp_path):
    a = write_config(tmp_path, "a.json", output_dir=str(tmp_path / "a"))
    b = write_config(tmp_path, "b.json", output_dir=str(tmp_path / "b"))
    assert main(["solve", "--config", a]) == 0
    assert main(["solve", "--config", b]) == 0
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()


def test_compare_lqr1d(tmp_path, capsys):
    cfg = write_config(tmp_path, initial_policy="-1.0*x1")
    assert main(["compare", "--config", cfg]) == 0
    out = tmp_path / "out"
    cert = json.loads((out / "certs" / "dominance.json").read_text())
    assert cert["passed"]
    its = cert["details"]["iterations_to_tolerance"]
    assert its["pi"] <= its["vi"]
    assert "dominance" in capsys.readouterr().out
    assert (out / "pi" / "trace.csv").exists() and (out / "vi" / "trace.csv").exists()


def test_compare_toy_margins(tmp_path):
    cfg = write_config(tmp_path, benchmark="deadbeat-toy")
    assert main(["compare", "--config", cfg]) == 0
    cert = json.loads((tmp_path / "out" / "certs" / "dominance.json").read_text())
    assert cert["worst_witness"]["margin"] < 1e-9


def test_compare_refuses_value_start(tmp_path):
    cfg = write_config(tmp_path, algorithm="vi", initial_value="zero")
    assert main(["compare", "--config", cfg]) == 1


def parse_rollout(text):
    last = text.strip().splitlines()[-1]
    parts = dict(p.strip().rsplit(" ", 1) for p in last.split(","))
    return float(parts["terminal norm"]), float(parts["accumulated cost"])


def test_rollout_optimal_policy(solved, capsys):
    assert main(["rollout", "--policy", str(solved / "policy.csv"), "--x0", "1", "--horizon", "50"]) == 0
    norm, cost = parse_rollout(capsys.readouterr().out)
    assert norm < 1e-3 and cost == pytest.approx(1.618, abs=5e-3)
    assert main(["rollout", "--policy", str(solved / "policy.csv"), "--x0", "0", "--horizon", "5"]) == 0
    assert parse_rollout(capsys.readouterr().out) == (0.0, 0.0)


def test_rollout_zero_policy(tmp_path, solved, capsys):
    h = load_field(solved / "policy.csv")
    zero = PolicyField(h.grid, np.zeros_like(h.controls), h.lower, h.upper)
    save_field(zero, tmp_path / "zero.csv")
    cfg = write_config(tmp_path)
    assert main(["rollout", "--policy", str(tmp_path / "zero.csv"), "--x0", "1",
                 "--horizon", "20", "--config", cfg]) == 0
    norm, cost = parse_rollout(capsys.readouterr().out)
    assert norm == 1.0 and cost == 20.0


def test_diagnose_passes(solved, capsys):
    assert main(["diagnose", str(solved)]) == 0
    report = json.loads((solved / "certs" / "diagnose.json").read_text())
    assert report["passed"]
    subjects = {c["subject"] for c in report["certificates"]}
    assert {"monotone_trace", "admissible_intermediates", "bellman_residual", "uniqueness"} <= subjects


def test_diagnose_without_snapshots(tmp_path, capsys):
    cfg = write_config(tmp_path, snapshots=False)
    assert main(["solve", "--config", cfg]) == 0
    assert main(["diagnose", str(tmp_path / "out")]) == 0
    captured = capsys.readouterr()
    assert "warning" in captured.err
    report = json.loads((tmp_path / "out" / "certs" / "diagnose.json").read_text())
    adm = [c for c in report["certificates"] if c["subject"] == "admissible_intermediates"][0]
    assert adm["status"] == "skipped"


def test_diagnose_doctored_trace(tmp_path):
    cfg = write_config(tmp_path, snapshots=False)
    assert main(["solve", "--config", cfg]) == 0
    trace = tmp_path / "out" / "trace.csv"
    lines = trace.read_text().splitlines()
    cols = lines[2].split(",")
    cols[3] = "0.5"
    lines[2] = ",".join(cols)
    trace.write_text("\n".join(lines) + "\n")
    assert main(["diagnose", str(tmp_path / "out")]) == 3


def test_diagnose_compare_run(tmp_path):
    cfg = write_config(tmp_path, benchmark="deadbeat-toy")
    assert main(["compare", "--config", cfg]) == 0
    assert main(["diagnose", str(tmp_path / "out")]) == 0
    report = json.loads((tmp_path / "out" / "certs" / "diagnose.json").read_text())
    assert "dominance" in {c["subject"] for c in report["certificates"]}


def test_run_config_round_trip(tmp_path):
    cfg = RunConfig.load(write_config(tmp_path, seed=7))
    again = RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again.to_dict() == cfg.to_dict()


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "gridadp", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip()
