import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from diffincl.cli import (EXIT_CHECK, EXIT_CONFIG, EXIT_NOT_FOUND, EXIT_OK, EXIT_SOLVER,
                          EXIT_VERIFY, builtin_scenarios, main, read_csv, write_csv)
from diffincl.integrate import Trajectory

DATA = Path(__file__).parent / "data"


def write_cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


UPRIGHT = {"model": {"model": "pendulum", "K": "0.2", "omega": "0.1*cos(t)", "Phi": "0.1*sin(t)",
                     "K_star": 0.2, "Phi_star": 0.1, "eps": 0.1, "psi_star": 0.5},
           "domain": {"F": "x1^2", "c": 0.25, "box": [[-2.0, 2.0]]}}


class TestSimulate:
    def test_stick(self, tmp_path, capsys):
        out = tmp_path / "s.csv"
        assert main(["simulate", "builtin:stick", "--out", str(out)]) == EXIT_OK
        assert capsys.readouterr().out.startswith("t_end=20 sup|x|=0.2")
        tr = read_csv(out)
        assert np.all(tr.x == 0.2)

    def test_csv_format(self, tmp_path):
        out = tmp_path / "s.csv"
        main(["simulate", "builtin:stick_slip", "--t1", "1", "--out", str(out)])
        raw = out.read_bytes()
        assert b"\r" not in raw
        lines = raw.decode().splitlines()
        assert lines[0] == "t,x1,v1,a1,mode"
        assert len(lines[1].split(",")) == 5

    def test_csv_lossless(self, tmp_path):
        rng = np.random.default_rng(5)
        t = np.sort(rng.uniform(0, 1, 20))
        tr = Trajectory(t, rng.normal(size=(20, 2)), rng.normal(size=(20, 2)),
                        rng.normal(size=(20, 2)), ["+-", "s"] * 10)
        write_csv(tr, tmp_path / "t.csv")
        back = read_csv(tmp_path / "t.csv")
        for a, b in ((tr.t, back.t), (tr.x, back.x), (tr.v, back.v), (tr.a, back.a)):
            np.testing.assert_array_equal(a, b)
        assert list(back.mode) == list(tr.mode)

    def test_ic_override(self, tmp_path, capsys):
        assert main(["simulate", "builtin:equilibrium", "--ic", "0,0", "--t1", "2"]) == EXIT_OK
        assert "sup|x|=0 " in capsys.readouterr().out

    def test_ic_dimension(self, capsys):
        assert main(["simulate", "builtin:stick", "--ic", "0,0,0"]) == EXIT_CONFIG

    def test_malformed(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text("{ not json")
        assert main(["simulate", str(p)]) == EXIT_CONFIG
        assert "malformed" in capsys.readouterr().err

    def test_unknown_key(self, tmp_path, capsys):
        assert main(["simulate", write_cfg(tmp_path, {**UPRIGHT, "plot": {}})]) == EXIT_CONFIG

    def test_nonpositive_tolerance(self, tmp_path, capsys):
        cfg = {**UPRIGHT, "solver": {"rtol": 0.0}}
        assert main(["simulate", write_cfg(tmp_path, cfg), "--ic", "0,0"]) == EXIT_CONFIG

    def test_unknown_builtin(self, capsys):
        assert main(["simulate", "builtin:nope"]) == EXIT_CONFIG

    def test_chattering(self, capsys):
        assert main(["simulate", str(DATA / "chattering.json")]) == EXIT_SOLVER
        assert "chattering" in capsys.readouterr().err.lower()

    def test_mollified_method(self, capsys):
        assert main(["simulate", "builtin:stick", "--method", "mollified", "--t1", "1"]) == EXIT_OK


class TestFindBounded:
    def test_upright(self, tmp_path, capsys):
        out = tmp_path / "r.json"
        assert main(["find-bounded", "builtin:upright", "--out", str(out)]) == EXIT_OK
        rep = json.loads(out.read_text())
        assert rep["v"] == 1 and rep["found"] and rep["margin"] > 0
        tr = read_csv(tmp_path / "r_trajectory.csv")
        assert np.abs(tr.x).max() <= 0.5 + 1e-6

    def test_equilibrium_forward(self, tmp_path, capsys):
        out = tmp_path / "r.json"
        assert main(["find-bounded", "builtin:equilibrium", "--forward-only", "--T", "5",
                     "--out", str(out)]) == EXIT_OK
        assert np.all(read_csv(tmp_path / "r_trajectory.csv").x == 0.0)

    def test_not_found(self, capsys):
        assert main(["find-bounded", str(DATA / "unbounded.json")]) == EXIT_NOT_FOUND

    def test_needs_domain(self, tmp_path, capsys):
        cfg = {"model": {"model": "field", "dim": 1, "surfaces": [],
                         "pieces": [{"signs": "", "f": ["1"]}]}}
        assert main(["find-bounded", write_cfg(tmp_path, cfg)]) == EXIT_CONFIG


class TestCheck:
    def test_upright(self, capsys):
        assert main(["check", "builtin:upright"]) == EXIT_OK
        rep = json.loads(capsys.readouterr().out)
        assert [r["check"] for r in rep["reports"]][-1] == "pendulum_condition"

    def test_strong_friction(self, tmp_path, capsys):
        cfg = json.loads(json.dumps(UPRIGHT))
        cfg["model"].update(K="1.5", K_star=1.5)
        assert main(["check", write_cfg(tmp_path, cfg)]) == EXIT_CHECK
        rep = json.loads(capsys.readouterr().out)
        inflow = [r for r in rep["reports"] if r["check"].startswith("inflow")][0]
        assert not inflow["pass"] and inflow["witness"]

    def test_degenerate(self, tmp_path, capsys):
        cfg = {**UPRIGHT, "domain": {"F": "0", "c": 0.0, "box": [[-1.0, 1.0]]}}
        assert main(["check", write_cfg(tmp_path, cfg)]) == EXIT_CHECK


class TestMollifyStudy:
    def test_frictionless_exact(self, tmp_path, capsys):
        out = tmp_path / "m.csv"
        assert main(["mollify-study", "builtin:frictionless", "--k", "8,64",
                     "--out", str(out)]) == EXIT_OK
        rows = out.read_text().splitlines()
        assert rows[0] == "k,c1_distance,h2_seminorm"
        assert all(float(r.split(",")[1]) <= 1e-8 for r in rows[1:])

    def test_single_row(self, capsys):
        assert main(["mollify-study", "builtin:stick", "--k", "16", "--T", "1"]) == EXIT_OK
        assert len(capsys.readouterr().out.splitlines()) == 2


class TestVerify:
    def test_missing_file(self, capsys):
        assert main(["verify", "builtin:stick", "--traj", "/nonexistent.csv"]) == EXIT_CONFIG

    def test_corrupted(self, tmp_path, capsys):
        out = tmp_path / "s.csv"
        main(["simulate", "builtin:stick_slip", "--t1", "2", "--out", str(out)])
        lines = out.read_text().splitlines()
        cells = lines[5].split(",")
        cells[3] = repr(float(cells[3]) + 1.0)
        lines[5] = ",".join(cells)
        out.write_text("\n".join(lines) + "\n")
        assert main(["verify", "builtin:stick_slip", "--traj", str(out)]) == EXIT_VERIFY

    def test_escape_fails_containment(self, tmp_path, capsys):
        out = tmp_path / "s.csv"
        main(["simulate", str(DATA / "unbounded.json"), "--out", str(out)])
        assert main(["verify", str(DATA / "unbounded.json"), "--traj", str(out)]) == EXIT_VERIFY
        assert json.loads(capsys.readouterr().out.split("\n", 1)[1])["boundedness"]["contained"] is False


@pytest.mark.parametrize("name", builtin_scenarios())
def test_round_trip(name, tmp_path, capsys):
    out = tmp_path / f"{name}.csv"
    assert main(["simulate", f"builtin:{name}", "--out", str(out)]) == EXIT_OK
    assert main(["verify", f"builtin:{name}", "--traj", str(out)]) == EXIT_OK


def test_deterministic_outputs(tmp_path, capsys):
    blobs = []
    for i in range(2):
        csv, rep = tmp_path / f"s{i}.csv", tmp_path / f"c{i}.json"
        main(["simulate", "builtin:upright", "--out", str(csv)])
        main(["check", "builtin:upright", "--out", str(rep)])
        blobs.append((csv.read_bytes(), rep.read_bytes()))
    assert blobs[0] == blobs[1]


def test_console_script():
    r = subprocess.run([sys.executable, "-m", "diffincl", "simulate", "builtin:equilibrium"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("t_end=")
