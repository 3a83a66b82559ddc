import csv
import os

import numpy as np
import pytest

from brinkfric.cli import (
    LEDGER_COLUMNS, TRAJECTORY_COLUMNS, cmd_run, cmd_steady, cmd_sweep, cmd_verify, emit_svg, main,
    thread_cap, write_csv,
)
from brinkfric.config import ConfigError, parse_config

BASE = """
[grid]
nx = 8
ny = 8
[params]
nu = 0.1
a = 1
b = 1
alpha = 2
eps = 1e-3
[friction]
g = {g}
[forcing]
preset = {forcing}
[init]
preset = {init}
amplitude = 4
[stepping]
dt = 1e-2
t_end = {t_end}
[output]
directory = {out}
emit_svg = true
"""


def config(tmp_path, g=0.5, forcing="shear", init="shear-profile", t_end=0.1, name="out"):
    return BASE.format(g=g, forcing=forcing, init=init, t_end=t_end, out=tmp_path / name)


def read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_write_csv_round_trip(tmp_path):
    p = tmp_path / "t.csv"
    write_csv(["a", "b", "c"], [[0.1, 3, "x,y"]], p)
    rows = read(p)
    assert rows == [["a", "b", "c"], ["0.10000000000000001", "3", "x,y"]]
    assert float(rows[1][0]) == 0.1
    write_csv(["a"], [[1 / 3]], p, precision=4)
    assert read(p)[1] == ["0.3333"]
    with pytest.raises(ValueError):
        write_csv(["a"], [], p)


def test_svg_one_polyline_per_series(tmp_path):
    p = tmp_path / "d.svg"
    t = np.linspace(0, 1, 20)
    emit_svg([("a", t, np.exp(-t)), ("b", t, np.exp(-2 * t))], p, log_y=True, title="decay")
    text = p.read_text()
    assert text.count("<polyline") == 2
    assert "href" not in text and "http://www.w3.org/2000/svg" in text


def test_run_zero(tmp_path):
    cfg = parse_config(config(tmp_path, forcing="zero", init="zero"))
    assert cmd_run(cfg) == 0
    rows = read(tmp_path / "out" / "trajectory.csv")
    assert rows[0] == TRAJECTORY_COLUMNS
    for r in rows[1:]:
        assert all(float(x) == 0.0 for x in r[1:6])


def test_run_dissipative_ledger(tmp_path):
    cfg = parse_config(config(tmp_path, forcing="zero", t_end=1.0))
    assert cmd_run(cfg) == 0
    rows = read(tmp_path / "out" / "ledger.csv")
    assert rows[0] == LEDGER_COLUMNS and len(rows) == 101
    traj = read(tmp_path / "out" / "trajectory.csv")
    l2 = [float(r[1]) for r in traj[1:]]
    assert all(b < a for a, b in zip(l2, l2[1:]))
    assert (tmp_path / "out" / "energy.svg").exists()


def test_run_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = parse_config(config(tmp_path, name="file/sub"))
    assert cmd_run(cfg) == 1


def test_run_solver_flags(tmp_path):
    text = config(tmp_path, t_end=0.1).replace("dt = 1e-2", "dt = 5e-2\npicard_max = 1\npredictor = none")
    assert cmd_run(parse_config(text)) == 2


def test_steady(tmp_path):
    assert cmd_steady(parse_config(config(tmp_path, g=5.0))) == 0
    rows = read(tmp_path / "out" / "slip.csv")
    assert rows[0] == ["x", "wall", "u_tau", "lambda", "g", "class"]
    assert len(rows) == 17 and {r[5] for r in rows[1:]} == {"stick"}
    assert read(tmp_path / "out" / "steady.csv")[1][-1] == "true"


def test_verify_frictionless(tmp_path):
    code = cmd_verify(parse_config(config(tmp_path, g=0.0)))
    rows = read(tmp_path / "out" / "cert_report.csv")
    status = {r[0]: r[1] for r in rows[1:]}
    assert code == 0, [r for r in rows if r[1] != "pass"]
    for name in ("slip_trichotomy", "jeps_gap"):
        assert status[name] == "degenerate: frictionless"


def test_verify_zero_problem(tmp_path):
    code = cmd_verify(parse_config(config(tmp_path, forcing="zero", init="zero")))
    rows = read(tmp_path / "out" / "cert_report.csv")
    assert code == 0, [r for r in rows if r[1] != "pass"]
    assert any(r[1].startswith("skipped") for r in rows[1:])


def test_verify_negative_control(tmp_path, capsys):
    text = config(tmp_path, t_end=1.0).replace("dt = 1e-2", "dt = 5e-2\npicard_max = 1\npredictor = none")
    assert cmd_verify(parse_config(text)) != 0
    err = capsys.readouterr().err
    assert "FAILED run_converged" in err


def test_thread_cap():
    assert thread_cap({}) == 1
    assert thread_cap({"BRINKFRIC_THREADS": "3"}) == 3
    with pytest.raises(ConfigError):
        thread_cap({"BRINKFRIC_THREADS": "0"})
    with pytest.raises(ConfigError):
        thread_cap({"BRINKFRIC_THREADS": "many"})


@pytest.mark.parametrize("threads", ["1", "2"])
def test_sweep(tmp_path, monkeypatch, threads):
    monkeypatch.setenv("BRINKFRIC_THREADS", threads)
    text = config(tmp_path, t_end=0.05)
    assert cmd_sweep(text, ("params.b", ["0.5", "1.0", "2.0"])) == 0
    rows = read(tmp_path / "out" / "sweep.csv")
    assert rows[0] == ["run", "key", "value", "exit_code"] and len(rows) == 4
    outs = [read(tmp_path / "out" / f"run_{k:03d}" / "trajectory.csv") for k in range(3)]
    assert outs[0] != outs[2]


def test_sweep_isolated_and_deterministic(tmp_path, monkeypatch):
    text = config(tmp_path, t_end=0.05)
    monkeypatch.setenv("BRINKFRIC_THREADS", "1")
    cmd_sweep(text, ("params.b", ["0.5", "2.0"]), base_dir=tmp_path / "serial")
    monkeypatch.setenv("BRINKFRIC_THREADS", "2")
    cmd_sweep(text, ("params.b", ["0.5", "2.0"]), base_dir=tmp_path / "pool")
    for k in range(2):
        for name in ("trajectory.csv", "ledger.csv"):
            a = (tmp_path / "serial" / f"run_{k:03d}" / name).read_bytes()
            b = (tmp_path / "pool" / f"run_{k:03d}" / name).read_bytes()
            assert a == b


def test_main_entry(tmp_path, capsys):
    p = tmp_path / "c.cfg"
    p.write_text(config(tmp_path).replace("alpha = 2", "alpha = 7"))
    assert main(["run", str(p)]) == 1
    assert "params.alpha" in capsys.readouterr().err
    p.write_text(config(tmp_path, forcing="zero", init="zero"))
    assert main(["run", str(p)]) == 0
    assert main(["sweep", str(p), "--vary", "params.nu=0.1,0.2"]) == 0
    assert main(["sweep", str(p), "--vary", "nonsense"]) == 1
