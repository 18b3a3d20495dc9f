import json

import pytest

from polycert import cli


def write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


STABLE = {"vertices": [[[-1, 1], [0, -2]], [[-2, 0], [1, -1]]], "d_p": 1, "d1": 1, "d2": 1}
UNSTABLE = {"vertices": [[[0.5, 0], [0, -1]], [[-1, 0], [0, -1]]]}


def test_simplex_stable(tmp_path, capsys):
    code = cli.main(["simplex", "--config", write(tmp_path, "c.json", STABLE)])
    assert code == cli.EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["verdict"] == "stable" and rep["validation"]["ok"]


def test_simplex_unstable(tmp_path, capsys):
    code = cli.main(["simplex", "--config", write(tmp_path, "c.json", UNSTABLE)])
    assert code == cli.EXIT_INFEASIBLE
    assert json.loads(capsys.readouterr().out)["verdict"] == "unstable"


def test_bad_config(tmp_path, capsys):
    code = cli.main(["simplex", "--config", write(tmp_path, "c.json", {"nothing": 1})])
    assert code == cli.EXIT_ERROR
    err = capsys.readouterr().err
    assert err.startswith("error:") and err.count("error:") == 1


def test_missing_file(capsys):
    assert cli.main(["hypercube", "--config", "/nonexistent.json"]) == cli.EXIT_ERROR


def test_hypercube_bundled(tmp_path, capsys):
    cfg = {"data": "box_poly4.json", "D_p": [2, 1, 2], "d1": 1, "d2": 1}
    assert cli.main(["hypercube", "--config", write(tmp_path, "c.json", cfg)]) == cli.EXIT_OK


def test_optimize_simplex(tmp_path, capsys):
    cfg = {"vertices": [[[-1.0]], [[-2.0]]], "set": "simplex", "safe": 0.0, "risky": 0.5, "iters": 5}
    assert cli.main(["optimize", "--config", write(tmp_path, "c.json", cfg), "--workers", "2"]) == cli.EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["bound"] == 0.5 and rep["trials"][0] == [0.0, True]


def test_roa_writes_outputs(tmp_path):
    cfg = {"f": [[{"exp": [1, 0], "coef": -1.0}], [{"exp": [0, 1], "coef": -1.0}]],
           "vertices": [[1, 1], [-1, 1], [-1, -1], [1, -1]], "kind": "orthant", "d": 2, "s_max": 1.5}
    out = tmp_path / "out"
    assert cli.main(["roa", "--config", write(tmp_path, "c.json", cfg), "--out", str(out)]) == cli.EXIT_OK
    rep = json.loads((out / "roa.json").read_text())
    assert rep["bound"] == 1.5
    assert (out / "roa_levelset.csv").read_text().startswith("x1,x2\n")
    assert (out / "roa_timing.csv").exists() and (out / "roa_sweep.csv").exists()


def test_grid_thermostat(tmp_path, capsys):
    temps = tmp_path / "t.csv"
    temps.write_text("hour,degC\n" + "".join(f"{h},{30 + (h % 24) / 2}\n" for h in range(25)))
    model = write(tmp_path, "m.json", {"M": 3, "thermostat": {"b_max": 8, "sweep": 4}})
    prices = write(tmp_path, "p.json", {"divisor": 10})
    out = tmp_path / "g"
    code = cli.main(["grid", "thermostat", "--model", model, "--prices", prices, "--temps", str(temps),
                     "--out", str(out)])
    assert code == cli.EXIT_OK
    rep = json.loads((out / "thermostat_report.json").read_text())
    assert rep["bill"] == pytest.approx(rep["energy_cost"] + rep["demand_cost"])
    lines = (out / "thermostat_schedule.csv").read_text().splitlines()
    assert lines[0].startswith("hour,u,g,T1") and len(lines) == 26


def test_grid_fourset(tmp_path, capsys):
    model = write(tmp_path, "m.json", {"N_f": 13, "thermostat": {"n_u": 5}})
    out = tmp_path / "g"
    code = cli.main(["grid", "fourset", "--model", model, "--samples", "5", "--out", str(out)])
    assert code == cli.EXIT_OK
    rep = json.loads((out / "fourset_report.json").read_text())
    assert len(rep["setpoints"]) == 4 and len(rep["switch_hours"]) == 3


def test_parser_rejects_unknown():
    with pytest.raises(SystemExit):
        cli.main(["bogus"])
