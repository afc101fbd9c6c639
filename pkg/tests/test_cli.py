import csv
import json

import numpy as np
import pytest

from parasos import cli
from parasos.polycore import example1
from parasos.simlab import discretize, gaussian_difference, simulate


def write_cfg(tmp_path, **sections):
    base = {"model": {"a_coeffs": [1.0], "b_coeffs": [0.0], "c0_coeffs": [0.0], "lambda": 2.0},
            "degrees": {"d1": 3, "d2": 3}, "output": {"dir": str(tmp_path / "out")}}
    for k, v in sections.items():
        base.setdefault(k, {})
        if isinstance(v, dict):
            base[k].update(v)
        else:
            base[k] = v
    p = tmp_path / "run.json"
    p.write_text(json.dumps(base))
    return p


def load(path):
    return json.loads(open(path).read())


def test_analyze_writes_certificate(tmp_path):
    cfg = write_cfg(tmp_path, degrees={"d1": 5, "d2": 5})
    assert cli.main(["analyze", "--config", str(cfg)]) == 0
    doc = load(tmp_path / "out" / "certificate.json")
    assert doc["config"]["task"] == "analyze" and doc["config"]["degrees"]["d1"] == 5
    P = np.array(doc["certificate"]["P"])
    assert P.shape[0] == P.shape[1] and np.allclose(P, P.T)


def test_infeasible_exit_code(tmp_path):
    cfg = write_cfg(tmp_path, model={"lambda": 100.0}, degrees={"d1": 5, "d2": 5})
    assert cli.main(["synth-output", "--config", str(cfg)]) == 2
    doc = load(tmp_path / "out" / "infeasible.json")
    assert doc["infeasible"]["lambda"] == 100.0 and doc["infeasible"]["d1"] == 5


@pytest.mark.parametrize("args,field", [
    (["--rates.mu=-1"], "rates.mu"),
    (["--model.a_coeffs=[]"], "model.a_coeffs"),
    (["--nosuch.key=1"], "nosuch"),
    (["--sweep.mode=bogus"], "sweep.mode"),
    (["--model.a_coeffs=[0.0, 1.0]"], "model.a_coeffs"),
])
def test_malformed_config_names_field(tmp_path, capsys, args, field):
    cfg = write_cfg(tmp_path)
    assert cli.main(["analyze", "--config", str(cfg), *args]) == 1
    assert field in capsys.readouterr().err


def test_bad_json(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text("{nope")
    assert cli.main(["analyze", "--config", str(p)]) == 1
    assert "<file>" in capsys.readouterr().err


def test_overrides_are_dotted_and_typed(tmp_path):
    cfg = cli.load_config(write_cfg(tmp_path), "sweep",
                          [("rates.mu", 0.01), ("sweep.d_list", [2, 3])])
    assert cfg["rates"]["mu"] == 0.01 and cfg["sweep"]["d_list"] == [2, 3]
    args, ov = cli.parse_args(["sweep", "--config", "x.json", "--rates.mu=0.01", "--restrict_diag",
                               "true"])
    assert ov == [("rates.mu", 0.01), ("restrict_diag", True)]


def test_gains_round_trip_bit_identical(tmp_path):
    cfg = write_cfg(tmp_path, model={"lambda": 3.0}, sim={"enabled": True, "T": 0.5})
    assert cli.main(["synth-state", "--config", str(cfg)]) == 0
    gains = tmp_path / "out" / "gains.json"
    in_process = (tmp_path / "out" / "trajectory.csv").read_text()
    cfg2 = write_cfg(tmp_path, model={"lambda": 3.0}, sim={"gains": str(gains), "T": 0.5},
                     output={"dir": str(tmp_path / "sim")})
    assert cli.main(["simulate", "--config", str(cfg2)]) == 0
    replay = (tmp_path / "sim" / "trajectory.csv").read_text()
    # identical trajectory rows; only the config comment differs
    assert in_process.splitlines()[1:] == replay.splitlines()[1:]


def test_gains_reload_matches_direct_simulation(tmp_path):
    cfg = write_cfg(tmp_path, model={"lambda": 3.0})
    assert cli.main(["synth-state", "--config", str(cfg)]) == 0
    ctrl = cli.controller_from_gains(load(tmp_path / "out" / "gains.json"))
    d = discretize(example1(3.0), 64)
    a = simulate(d, ctrl, gaussian_difference, T=0.2)
    b = simulate(d, cli.controller_from_gains(load(tmp_path / "out" / "gains.json")),
                 gaussian_difference, T=0.2)
    assert np.array_equal(a.states, b.states)


def test_sweep_csv(tmp_path, monkeypatch):
    monkeypatch.setenv("PARASOS_THREADS", "1")
    cfg = write_cfg(tmp_path, sweep={"mode": "stability", "d_list": [2, 3], "hi": 4.0,
                                     "tol": 0.05})
    assert cli.main(["sweep", "--config", str(cfg)]) == 0
    lines = (tmp_path / "out" / "sweep.csv").read_text().splitlines()
    assert lines[0].startswith("# config=")
    assert json.loads(lines[0][len("# config="):])["task"] == "sweep"
    rows = list(csv.DictReader(lines[1:]))
    assert [int(r["d"]) for r in rows] == [2, 3]
    assert all(0.0 < float(r["lambda_star"]) <= np.pi ** 2 / 4 + 0.05 for r in rows)


def test_sweep_parallel_matches_serial(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path, sweep={"mode": "stability", "d_list": [1, 2], "hi": 4.0,
                                     "tol": 0.1})
    monkeypatch.setenv("PARASOS_THREADS", "2")
    assert cli.main(["sweep", "--config", str(cfg), "--output.dir", str(tmp_path / "p")]) == 0
    monkeypatch.setenv("PARASOS_THREADS", "1")
    assert cli.main(["sweep", "--config", str(cfg), "--output.dir", str(tmp_path / "s")]) == 0

    def lam(d):
        return [r.split(",")[1] for r in (tmp_path / d / "sweep.csv").read_text().splitlines()[2:]]
    assert lam("p") == lam("s")


def test_baseline_and_invert_check(tmp_path):
    cfg = write_cfg(tmp_path, rates={"eps": 1.0}, degrees={"d1": 1, "d2": 1},
                    model={"lambda": 0.0}, invert={"cheb_deg": 5})
    assert cli.main(["invert-check", "--config", str(cfg)]) == 0
    rows = (tmp_path / "out" / "inversion.csv").read_text().splitlines()[2:]
    res = [float(r.split(",")[1]) for r in rows]
    assert len(res) == 5 and res[3] <= 1e-4
    assert cli.main(["baseline", "--config", str(cfg)]) == 0
    doc = load(tmp_path / "out" / "baseline.json")
    assert doc["sturm_liouville"]["threshold"] == pytest.approx(np.pi ** 2)
    assert "config" in doc


def test_solver_dump(tmp_path):
    cfg = write_cfg(tmp_path, solver={"dump": str(tmp_path / "prob.dat-s")},
                    degrees={"d1": 2, "d2": 2})
    assert cli.main(["analyze", "--config", str(cfg)]) == 0
    assert (tmp_path / "prob.dat-s").exists()
