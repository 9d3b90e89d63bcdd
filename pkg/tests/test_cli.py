import json

import numpy as np
import pytest

from specfun.cli import main, write_csv

SMALL_GRIDS = {"X": 1.0, "h": 0.01, "R": 20.0, "drho": 0.05, "sigma": 0.5, "rho_list": [-3.0, 0.0, 2.0]}
Q = [[[1, 0], [0, 0]], [[0, 0], [0, 0]]]


def write_config(tmp_path, **over):
    d = {
        "name": "small",
        "potential": {"p21": {"kind": "gaussian", "amplitude": 0.5, "center": 0.5, "width": 0.2}},
        "boundary": {"mu": [0.2, 0.0], "Q": Q},
        "grids": dict(SMALL_GRIDS),
        "test_functions": {
            "shape": "matrix",
            "f": [{"kind": "indicator", "a": 0.0, "b": 0.5, "coef": [[1, 0], [0.5, 1]]}],
            "g": [{"kind": "bump", "a": 0.0, "b": 0.5, "normalize": True, "coef": [[1, 0], [[0, 0.25], 1]]}],
        },
    }
    d.update(over)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(d))
    return path


def run(tmp_path, *argv, out="out"):
    o = tmp_path / out
    code = main([*argv, "--out", str(o)])
    return code, o


def test_solve_writes_csvs_and_manifest(tmp_path):
    cfg = write_config(tmp_path, potential={"family": "commuting", "a": 0.3, "b": 0.1})
    code, out = run(tmp_path, "solve", "--config", str(cfg))
    assert code == 0
    man = json.loads((out / "manifest.json").read_text())
    for key in ("command", "argv", "config", "versions", "grid_hashes", "wall_times", "files"):
        assert key in man
    assert "phi_rho+2.csv" in man["files"]
    data = np.loadtxt(out / "phi_rho+2.csv", delimiter=",", skiprows=1)
    assert data.shape == (101, 9)
    head = (out / "phi_rho+2.csv").read_text().splitlines()[0]
    assert head.startswith("x,re_phi11,im_phi11")
    rep = json.loads((out / "report.json").read_text())
    assert rep["passed"] and rep["command"] == "solve"


def test_kernel_on_commuting_potential(tmp_path):
    cfg = write_config(tmp_path, potential={"family": "commuting", "a": 0.3, "b": 0.1})
    code, out = run(tmp_path, "kernel", "--config", str(cfg))
    assert code == 0
    names = {r["name"]: r for r in json.loads((out / "report.json").read_text())["reports"]}
    assert names["commuting_kernel_vanishes"]["residual"] <= 1e-8
    assert (out / "kernel.csv").exists() and (out / "traces.csv").exists()


def test_parseval_free_and_theorem2(tmp_path):
    bumps = {
        "f": [{"kind": "bump", "a": 0.0, "b": 0.5, "normalize": True, "coef": [[1, 0], [0.5, 1]]}],
        "g": [{"kind": "bump", "a": 0.0, "b": 0.5, "normalize": True, "coef": [[1, 0], [[0, 0.25], 1]]}],
    }
    grids = dict(SMALL_GRIDS, R=80.0)
    cfg = write_config(tmp_path, potential={"family": "zero"}, test_functions=bumps, grids=grids)
    code, out = run(tmp_path, "parseval", "--config", str(cfg), "--theorem", "free", "--tol", "1e-4")
    assert code == 0
    code, out = run(tmp_path, "parseval", "--config", str(cfg), "--theorem", "2", "--tol", "0.05", out="t2")
    rep = json.loads((out / "report.json").read_text())["reports"][0]
    assert code == 0 and rep["details"]["residual_i_iii"] <= 1e-4


def test_failing_report_gives_exit_one(tmp_path):
    cfg = write_config(tmp_path, tolerances={"parseval_free": 1e-12})
    code, out = run(tmp_path, "parseval", "--config", str(cfg), "--theorem", "free")
    assert code == 1
    assert "FAIL" in (out / "report.txt").read_text()


@pytest.mark.parametrize(
    "over, key",
    [
        ({"potential": {"family": "bogus"}}, "potential.family"),
        ({"boundary": {"Q": [[[1, 0], [1, 0]], [[0, 0], [0, 0]]]}}, "boundary.Q"),
    ],
)
def test_config_errors_exit_two(tmp_path, capsys, over, key):
    cfg = write_config(tmp_path, **over)
    code, _ = run(tmp_path, "solve", "--config", str(cfg))
    assert code == 2
    assert key in capsys.readouterr().err


def test_missing_boundary_is_a_config_error(tmp_path, capsys):
    cfg = write_config(tmp_path, boundary={})
    code, _ = run(tmp_path, "density", "--config", str(cfg))
    assert code == 2 and "boundary.Q" in capsys.readouterr().err


def test_outputs_are_deterministic(tmp_path):
    cfg = write_config(tmp_path)
    run(tmp_path, "kernel", "--config", str(cfg), out="a")
    run(tmp_path, "kernel", "--config", str(cfg), out="b")
    for name in ("kernel.csv", "traces.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    ra = json.loads((tmp_path / "a" / "report.json").read_text())
    rb = json.loads((tmp_path / "b" / "report.json").read_text())
    for r in (ra, rb):
        for rep in r["reports"]:
            rep.pop("wall_time")
    assert ra == rb


def test_csv_round_trips_full_precision(tmp_path):
    v = np.array([[1 / 3 + 1j * np.pi], [np.e - 2j]])
    write_csv(tmp_path / "v.csv", [np.array([0.1, 0.2])], ["x"], [("v", np.hstack([v, v]))])
    back = np.loadtxt(tmp_path / "v.csv", delimiter=",", skiprows=1)
    assert back[0, 1] == 1 / 3 and back[0, 2] == np.pi and back[1, 3] == np.e and back[1, 4] == -2.0
