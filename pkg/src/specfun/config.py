"""Run configuration: JSON files with complex numbers as [re, im] pairs."""

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .algebra import validate_projector
from .errors import ConfigError, NotAdmissible
from .potential import (
    Constant,
    GaussianBump,
    Polynomial,
    PolyGaussian,
    PotentialSpec,
    RaisedCosine,
    Table,
)
from .transforms import RhoGrid, TestFunction

BUNDLED = ("zero", "commuting", "bump")

GRID_DEFAULTS = {
    "X": 2.0,
    "h": 1e-3,
    "R": 200.0,
    "drho": 0.01,
    "sigma": 1.0,
    "n": [64, 256, 1024],
    "nu": 0.0,
    "rho_list": [-10.0, -1.0, 0.0, 1.0, 10.0],
}


def _complex(v, key):
    if isinstance(v, (int, float)):
        return complex(v)
    if isinstance(v, (list, tuple)) and len(v) == 2 and all(isinstance(t, (int, float)) for t in v):
        return complex(v[0], v[1])
    raise ConfigError(key, f"expected a number or an [re, im] pair, got {v!r}")


def _complex_array(v, shape, key):
    if not isinstance(v, (list, tuple)) or len(v) != shape[0]:
        raise ConfigError(key, f"expected a list of length {shape[0]}")
    if len(shape) == 1:
        return np.array([_complex(t, f"{key}[{i}]") for i, t in enumerate(v)])
    return np.array([_complex_array(t, shape[1:], f"{key}[{i}]") for i, t in enumerate(v)])


def _num(d, name, key, default=None, positive=False):
    if name not in d:
        if default is None:
            raise ConfigError(f"{key}.{name}", "missing")
        return default
    v = d[name]
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise ConfigError(f"{key}.{name}", f"expected a number, got {v!r}")
    if positive and v <= 0:
        raise ConfigError(f"{key}.{name}", "must be positive")
    return float(v)


def parse_profile(d, key, base=None):
    if isinstance(d, (int, float, list)):
        return Constant(_complex(d, key))
    if not isinstance(d, dict) or "kind" not in d:
        raise ConfigError(key, "profile needs a 'kind'")
    kind = d["kind"]
    if kind == "constant":
        return Constant(_complex(d.get("value", 0.0), f"{key}.value"))
    if kind == "polynomial":
        return Polynomial(tuple(_complex(c, f"{key}.coeffs") for c in d.get("coeffs", [0.0])))
    if kind == "gaussian":
        return GaussianBump(
            _complex(d.get("amplitude", 1.0), f"{key}.amplitude"),
            _num(d, "center", key),
            _num(d, "width", key, positive=True),
        )
    if kind == "polygaussian":
        return PolyGaussian(
            tuple(_complex(c, f"{key}.coeffs") for c in d.get("coeffs", [1.0])),
            _num(d, "center", key),
            _num(d, "width", key, positive=True),
        )
    if kind == "raised_cosine":
        return RaisedCosine(
            _complex(d.get("amplitude", 1.0), f"{key}.amplitude"),
            _num(d, "center", key),
            _num(d, "halfwidth", key, positive=True),
        )
    if kind == "table":
        if "path" in d:
            path = Path(d["path"])
            if base is not None and not path.is_absolute():
                path = base / path
            try:
                data = np.loadtxt(path, delimiter=",", ndmin=2)
            except OSError as exc:
                raise ConfigError(f"{key}.path", str(exc)) from exc
            xs, vals = data[:, 0], data[:, 1] + (1j * data[:, 2] if data.shape[1] > 2 else 0.0)
        else:
            xs = np.asarray(d.get("x", []), dtype=float)
            vals = np.array([_complex(v, f"{key}.values") for v in d.get("values", [])])
        if xs.size < 4 or xs.size != vals.size:
            raise ConfigError(key, "table needs at least 4 matching x/value samples")
        return Table(xs, vals)
    raise ConfigError(f"{key}.kind", f"unknown profile kind {kind!r}")


def parse_potential(d, base=None):
    key = "potential"
    if d is None:
        return PotentialSpec.zero()
    if not isinstance(d, dict):
        raise ConfigError(key, "expected an object")
    fam = d.get("family", "entries")
    if fam == "zero":
        return PotentialSpec.zero()
    if fam == "commuting":
        return PotentialSpec.commuting(parse_profile(d.get("a", 0.0), f"{key}.a", base), parse_profile(d.get("b", 0.0), f"{key}.b", base))
    if fam == "constant":
        return PotentialSpec.constant(_complex_array(d.get("matrix"), (2, 2), f"{key}.matrix"))
    if fam == "entries":
        unknown = set(d) - {"family", "p11", "p12", "p21", "p22"}
        if unknown:
            raise ConfigError(f"{key}.{sorted(unknown)[0]}", "unknown potential entry")
        return PotentialSpec(*(parse_profile(d.get(n, 0.0), f"{key}.{n}", base) for n in ("p11", "p12", "p21", "p22")))
    raise ConfigError(f"{key}.family", f"unknown family {fam!r}")


def parse_test_function(terms, shape, key):
    if not isinstance(terms, list):
        raise ConfigError(key, "expected a list of terms")
    out = TestFunction.zero(shape)
    for i, t in enumerate(terms):
        k = f"{key}[{i}]"
        kind = t.get("kind")
        a, b = _num(t, "a", k), _num(t, "b", k)
        if not b > a >= 0:
            raise ConfigError(f"{k}.b", "need 0 <= a < b")
        coef = _complex_array(t.get("coef"), shape, f"{k}.coef")
        if kind == "bump":
            # normalize: coef is the value at the midpoint instead of a prefactor
            scale = np.exp(4.0) if t.get("normalize", False) else 1.0
            out = out + TestFunction.bump(a, b, scale * coef)
        elif kind == "indicator":
            out = out + TestFunction.indicator(a, b, coef)
        else:
            raise ConfigError(f"{k}.kind", f"unknown test-function kind {kind!r}")
    return out


@dataclass
class RunConfig:
    name: str
    potential: PotentialSpec
    mu: complex = None
    Q: object = None
    grids: dict = field(default_factory=lambda: dict(GRID_DEFAULTS))
    tests: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)
    source: str = ""

    @property
    def rho_grid(self):
        return RhoGrid(self.grids["R"], self.grids["drho"])

    def tol(self, name, default):
        return float(self.tolerances.get(name, default))

    def require(self, what):
        if what == "mu" and self.mu is None:
            raise ConfigError("boundary.mu", "required by this command")
        if what == "Q" and self.Q is None:
            raise ConfigError("boundary.Q", "required by this command")
        if what in ("f", "g") and what not in self.tests:
            raise ConfigError(f"test_functions.{what}", "required by this command")


def parse_config(d, source="", base=None):
    if not isinstance(d, dict):
        raise ConfigError("<root>", "configuration must be a JSON object")
    known = {"name", "potential", "boundary", "grids", "test_functions", "tolerances"}
    for k in d:
        if k not in known:
            raise ConfigError(k, "unknown key")
    P = parse_potential(d.get("potential"), base)
    bnd = d.get("boundary", {})
    mu = _complex(bnd["mu"], "boundary.mu") if "mu" in bnd else None
    Q = None
    if "Q" in bnd:
        q = _complex_array(bnd["Q"], (2, 2), "boundary.Q")
        try:
            Q = validate_projector(q)
        except NotAdmissible as exc:
            raise ConfigError("boundary.Q", f"not an admissible projector ({exc.constraint})") from exc
    grids = dict(GRID_DEFAULTS)
    gd = d.get("grids", {})
    for k, v in gd.items():
        if k not in GRID_DEFAULTS:
            raise ConfigError(f"grids.{k}", "unknown grid key")
        grids[k] = v
    for k in ("X", "h", "R", "drho", "sigma"):
        _num(grids, k, "grids", positive=True)
    grids["nu"] = _num(grids, "nu", "grids")
    if not isinstance(grids["n"], list) or not all(isinstance(n, int) and n > 0 for n in grids["n"]):
        raise ConfigError("grids.n", "expected a list of positive integers")
    try:
        RhoGrid(grids["R"], grids["drho"])
    except ValueError as exc:
        raise ConfigError("grids.drho", str(exc)) from exc
    tests = {}
    td = d.get("test_functions", {})
    shape = {"vector": (2,), "matrix": (2, 2)}.get(td.get("shape", "matrix"))
    if shape is None:
        raise ConfigError("test_functions.shape", "must be 'vector' or 'matrix'")
    for name in ("f", "g"):
        if name in td:
            tests[name] = parse_test_function(td[name], shape, f"test_functions.{name}")
            if tests[name].support > grids["sigma"] + 1e-12:
                raise ConfigError("grids.sigma", f"sigma must cover the support of {name}")
    tol = d.get("tolerances", {})
    for k, v in tol.items():
        if not isinstance(v, (int, float)) or v <= 0:
            raise ConfigError(f"tolerances.{k}", "must be a positive number")
    return RunConfig(d.get("name", Path(source).stem if source else "config"), P, mu, Q, grids, tests, tol, d, source)


def load_config(path):
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError("--config", str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"invalid JSON: {exc}") from exc
    return parse_config(d, str(path), path.parent)


def bundled_path(name):
    if name not in BUNDLED:
        raise ConfigError("--config", f"no bundled config {name!r}")
    return resources.files("specfun") / "configs" / f"{name}.json"


def bundled(name):
    with resources.as_file(bundled_path(name)) as p:
        return load_config(p)
