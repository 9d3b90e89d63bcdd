import json

import numpy as np
import pytest

from specfun.config import BUNDLED, bundled, load_config, parse_config
from specfun.errors import ConfigError
from specfun.potential import Table


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_configs_load(name):
    cfg = bundled(name)
    assert cfg.name == name
    assert cfg.Q is not None and cfg.mu is not None
    assert cfg.potential.family() == {"zero": "zero", "commuting": "commuting", "bump": "general"}[name]
    assert cfg.tests["f"].support <= cfg.grids["sigma"]


def test_defaults_and_complex_pairs():
    cfg = parse_config({"boundary": {"mu": [0.3, -0.1]}, "potential": {"p21": [0.0, 2.0]}})
    assert cfg.mu == 0.3 - 0.1j
    assert cfg.potential(0.5)[1, 0] == 2j
    assert cfg.grids["R"] == 200.0 and cfg.rho_grid.M == 20000
    assert cfg.tol("kernel", 1e-3) == 1e-3


def test_normalized_bump_is_one_at_midpoint():
    d = {"test_functions": {"shape": "vector", "f": [{"kind": "bump", "a": 0, "b": 1, "normalize": True, "coef": [1, 0]}]}}
    f = parse_config(d).tests["f"]
    assert abs(f(np.array([0.5]))[0, 0] - 1) < 1e-14


@pytest.mark.parametrize(
    "d, key",
    [
        ({"bogus": 1}, "bogus"),
        ({"potential": {"family": "nope"}}, "potential.family"),
        ({"potential": {"p13": 1}}, "potential.p13"),
        ({"potential": {"p21": {"kind": "gaussian", "center": 1.0}}}, "potential.p21.width"),
        ({"potential": {"p21": {"kind": "gaussian", "center": 1.0, "width": -1}}}, "potential.p21.width"),
        ({"boundary": {"mu": "x"}}, "boundary.mu"),
        ({"boundary": {"Q": [[1, 0], [0, 1]]}}, "boundary.Q"),
        ({"grids": {"h": 0}}, "grids.h"),
        ({"grids": {"R": 1.0, "drho": 0.3}}, "grids.drho"),
        ({"grids": {"n": [4, -1]}}, "grids.n"),
        ({"grids": {"zeta": 1}}, "grids.zeta"),
        ({"grids": {"sigma": 0.5}, "test_functions": {"f": [{"kind": "bump", "a": 0, "b": 1, "coef": [[1, 0], [0, 1]]}]}}, "grids.sigma"),
        ({"test_functions": {"f": [{"kind": "wave", "a": 0, "b": 1, "coef": [[1, 0], [0, 1]]}]}}, "test_functions.f[0].kind"),
        ({"test_functions": {"f": [{"kind": "bump", "a": 0, "b": 1, "coef": [1, 0]}]}}, "test_functions.f[0].coef[0]"),
        ({"tolerances": {"kernel": -1}}, "tolerances.kernel"),
    ],
)
def test_errors_name_the_key(d, key):
    with pytest.raises(ConfigError) as err:
        parse_config(d)
    assert err.value.key == key
    assert str(err.value).startswith(key)


def test_table_profile_from_file(tmp_path):
    xs = np.linspace(0, 2, 21)
    np.savetxt(tmp_path / "p.csv", np.column_stack([xs, np.sin(xs), xs]), delimiter=",")
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps({"potential": {"p12": {"kind": "table", "path": "p.csv"}}}))
    cfg = load_config(cfg_path)
    assert isinstance(cfg.potential.p12, Table)
    assert abs(cfg.potential(1.0)[0, 1] - (np.sin(1.0) + 1j)) < 1e-12
    with pytest.raises(ConfigError) as err:
        parse_config({"potential": {"p12": {"kind": "table", "path": "missing.csv"}}}, base=tmp_path)
    assert err.value.key == "potential.p12.path"


def test_unreadable_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError) as err:
        load_config(p)
    assert err.value.key == "--config"
