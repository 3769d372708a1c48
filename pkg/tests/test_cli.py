import json
import subprocess
import sys
import time
from importlib import resources

import pytest

from privexp.cli import CliError, main, parse_grid

BINARY = str(resources.files("privexp").joinpath("fixtures", "binary_075_020.json"))
TABLE1 = str(resources.files("privexp").joinpath("fixtures", "table1_dishwasher.json"))


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_parse_grid():
    assert parse_grid("0.5,1,2") == [0.5, 1.0, 2.0]
    assert parse_grid("0:1:0.25") == [0.0, 0.25, 0.5, 0.75, 1.0]
    with pytest.raises(CliError):
        parse_grid("1:0:0.5")


def test_exponent_phi_json(capsys):
    code, out, _ = run(capsys, "exponent", "phi", "--model", TABLE1, "--s", "150")
    assert code == 0
    data = json.loads(out)
    assert data["schema"] == "privexp-v1" and data["kind"] == "exponent_result"
    assert data["value_nats"] == pytest.approx(0.0202807949, abs=1e-7)
    assert data["converged"] and data["tau_star"] is None
    assert len(data["policy"]["cond_h0"]) == 4


def test_exponent_nu_reports_tau(capsys):
    code, out, _ = run(capsys, "exponent", "nu", "--model", BINARY, "--s", "0.5")
    data = json.loads(out)
    assert code == 0
    assert data["value_nats"] == pytest.approx(0.0494716105, abs=1e-8)
    assert 0.0 < data["tau_star"] < 1.0


def test_exponent_input_errors(capsys, tmp_path):
    assert run(capsys, "exponent", "nu-tau", "--model", BINARY, "--s", "0.5")[0] == 2
    assert run(capsys, "exponent", "phi", "--model", str(tmp_path / "missing.json"), "--s", "1")[0] == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"schema": "privexp-v0"}')
    assert run(capsys, "exponent", "phi", "--model", str(bad), "--s", "1")[0] == 2


def test_exponent_output_file(capsys, tmp_path):
    path = tmp_path / "r.json"
    assert run(capsys, "exponent", "phi", "--model", BINARY, "--s", "0.5", "--output", str(path))[0] == 0
    assert json.loads(path.read_text())["value_nats"] == pytest.approx(0.18649, abs=5e-3)


def test_sweep_twenty_points_is_fast_and_deterministic(capsys):
    start = time.perf_counter()
    code, a, err = run(capsys, "sweep", "phi", "--model", TABLE1, "--s-grid", "25:500:25")
    assert time.perf_counter() - start < 60
    assert code == 0 and "monotone=true" in err
    assert len(a.splitlines()) == 21
    assert run(capsys, "sweep", "phi", "--model", TABLE1, "--s-grid", "25:500:25")[1] == a
    cold = ("sweep", "phi", "--model", TABLE1, "--s-grid", "25:500:25", "--no-warm-start")
    assert run(capsys, *cold, "--threads", "1")[1] == run(capsys, *cold, "--threads", "4")[1]


@pytest.mark.parametrize("argv,expected", [
    (("np-exact", "--n", "3", "--epsilon", "0.1"), "3,0.1,0.1,0.2576,"),
    (("bayes-exact", "--n", "1"), "1,0.5,0.225,0.25,0.2,"),
    (("threshold", "--n", "1", "--delta-prime", "0.5"), "1,0.5,"),
])
def test_simulate_oracles(capsys, argv, expected):
    code, out, _ = run(capsys, "simulate", *argv)
    assert code == 0
    assert out.splitlines()[1].startswith(expected)


@pytest.mark.parametrize("eps", ["0", "1", "1.5", "-0.2"])
def test_simulate_rejects_epsilon_outside_unit_interval(capsys, eps):
    assert run(capsys, "simulate", "np-exact", "--n", "3", "--epsilon", eps)[0] == 2


def test_simulate_cap_exit_code(capsys):
    assert run(capsys, "simulate", "bayes-exact", "--n", "400", "--p0", "0.2,0.2,0.2,0.2,0.1,0.1",
               "--p1", "0.1,0.1,0.2,0.2,0.2,0.2")[0] == 4


def test_simulate_twophase_audit(capsys):
    code, out, err = run(capsys, "simulate", "twophase", "--n", "1000", "--traces", "200", "--seed", "1")
    assert code == 0
    assert "distortion audit: PASS" in err
    assert out.splitlines()[0].startswith("hypothesis,mean_distortion")
    # Same seed, same report.
    assert run(capsys, "simulate", "twophase", "--n", "1000", "--traces", "200", "--seed", "1")[1] == out


def test_simulate_montecarlo(capsys):
    code, out, _ = run(capsys, "simulate", "montecarlo", "--s", "0.5", "--samples", "20000", "--seed", "3")
    assert code == 0
    assert out.splitlines()[0] == "hypothesis,y,solver_prob,empirical_prob,sigma,within_3sigma"


def test_trace_command(capsys, tmp_path):
    code, out, err = run(capsys, "trace", "--s", "0", "--n", "50", "--seed", "2")
    assert code == 0 and "PASS" in err
    rows = [line.split(",") for line in out.splitlines()[1:]]
    assert all(r[1] == r[2] and r[3] == "0" for r in rows)


def test_seed_is_required(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["trace", "--s", "10"])
    assert exc.value.code == 2


def test_help_lists_subcommands():
    res = subprocess.run([sys.executable, "-m", "privexp.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for word in ("exponent", "sweep", "simulate", "trace"):
        assert word in res.stdout
