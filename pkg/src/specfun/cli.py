"""Command line interface: ``specfun <command> --config FILE --out DIR``.

Every run writes ``manifest.json`` (config echo, versions, grid hashes,
wall times), ``report.json`` and ``report.txt`` into the output directory,
plus command-specific CSV files.  The exit status is 0 exactly when every
report of the run passed.
"""

import argparse
import hashlib
import json
import platform
import sys
import time
from pathlib import Path

import numba
import numpy as np
import scipy

from . import __version__
from .algebra import mu_matrix
from .config import BUNDLED, bundled, load_config
from .errors import ConfigError, SpecfunError
from .kernel import boundary_traces, solve_kernel, transformation_residual
from .potential import PotentialSpec
from .solutions import Sweeper, inverse_solution
from .verify import (
    Theorem2Context,
    VerificationReport,
    expand_free,
    expand_theorem1,
    expand_theorem2,
    parseval_free,
    parseval_theorem1,
    parseval_theorem2,
)

ENTRIES = ("11", "12", "21", "22")
MAX_KERNEL_NODES = 201  # per axis in kernel.csv


# ------------------------------------------------------------------ output helpers


def _columns(prefix, values):
    """Split complex (n, 2) or (n, 2, 2) data into named real/imag columns."""
    v = np.asarray(values).reshape(len(values), -1)
    names = ENTRIES if v.shape[1] == 4 else ("1", "2")
    cols, heads = [], []
    for k, nm in enumerate(names):
        cols += [v[:, k].real, v[:, k].imag]
        heads += [f"re_{prefix}{nm}", f"im_{prefix}{nm}"]
    return cols, heads


def write_csv(path, lead, lead_names, blocks):
    """``lead`` are real columns; ``blocks`` is a list of (prefix, complex array)."""
    cols, heads = list(lead), list(lead_names)
    for prefix, vals in blocks:
        c, h = _columns(prefix, vals)
        cols += c
        heads += h
    np.savetxt(path, np.column_stack(cols), fmt="%.17g", delimiter=",", header=",".join(heads), comments="")
    return path.name


def _hash(a):
    return hashlib.sha256(np.ascontiguousarray(np.asarray(a, dtype=float)).tobytes()).hexdigest()[:16]


class Run:
    """Collects reports, files and timings for one command invocation."""

    def __init__(self, command, cfg, out, argv):
        self.command, self.cfg, self.out, self.argv = command, cfg, out, argv
        self.reports, self.files, self.timings, self.grids = [], [], {}, {}
        self.extra = {}
        out.mkdir(parents=True, exist_ok=True)

    def timed(self, label, fn, *args, **kw):
        t0 = time.perf_counter()
        res = fn(*args, **kw)
        self.timings[label] = time.perf_counter() - t0
        return res

    def csv(self, name, *args):
        self.files.append(write_csv(self.out / name, *args))

    def grid(self, label, arr):
        self.grids[label] = {"n": int(np.size(arr)), "sha256": _hash(arr)}

    @property
    def passed(self):
        return all(r.passed for r in self.reports)

    def finish(self, echo=print):
        cfg = self.cfg
        manifest = {
            "command": self.command,
            "argv": self.argv,
            "config": {"name": cfg.name, "source": cfg.source, "echo": cfg.raw, "grids": cfg.grids},
            "versions": {
                "specfun": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "numba": numba.__version__,
            },
            "grid_hashes": self.grids,
            "wall_times": self.timings,
            "files": sorted(self.files),
            **self.extra,
        }
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
        body = {"command": self.command, "passed": self.passed, "reports": [r.to_dict() for r in self.reports]}
        (self.out / "report.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
        lines = [r.line() for r in self.reports]
        lines.append(f"{'PASS' if self.passed else 'FAIL'}  {self.command}: {sum(r.passed for r in self.reports)}/{len(self.reports)} reports passed")
        (self.out / "report.txt").write_text("\n".join(lines) + "\n")
        for ln in lines:
            echo(ln)
        return 0 if self.passed else 1


def _report(name, residual, tol, details=None, grid=None, wall=0.0):
    return VerificationReport(name, 0.0, float(residual), float(residual), float(tol), grid or {}, 0.0, wall, details or {})


def _tol(args, cfg, name, default):
    return args.tol if args.tol is not None else cfg.tol(name, default)


def _vector_columns(fn):
    """Theorem 1 works with vector data; matrix data is taken column by column."""
    if len(fn.shape) == 1:
        return [("", fn)]
    return [(f"_col{k + 1}", fn.column(k)) for k in range(fn.shape[1])]


# ------------------------------------------------------------------ commands


def cmd_solve(run, args):
    cfg = run.cfg
    g = cfg.grids
    rho = np.asarray(g["rho_list"], dtype=float)
    kinds = {}
    if cfg.mu is not None:
        kinds["phi"] = mu_matrix(cfg.mu)
    if cfg.Q is not None:
        kinds["phi_Q"] = cfg.Q.q
        kinds["phi_tilde"] = cfg.Q.q
    if not kinds:
        raise ConfigError("boundary", "solve needs boundary.mu or boundary.Q")
    tol = _tol(args, cfg, "step_error", 1e-10)
    for label, init in kinds.items():
        kind = "phi_tilde" if label == "phi_tilde" else "phi"
        sw = Sweeper(kind, cfg.potential, init, g["X"], g["h"])
        vals, err = run.timed(label, sw.checked, 1j * rho, budget=np.inf)
        run.grid("x", sw.xgrid)
        for r, v in zip(rho, vals):
            run.csv(f"{label}_rho{r:+.6g}.csv", [sw.xgrid], ["x"], [(label, v)])
        run.reports.append(_report(f"solve_{label}_step_error", err, tol, {"rho": rho.tolist(), "h": sw.h}))
    if cfg.mu is not None:
        ptol = _tol(args, cfg, "inverse", 1e-8)
        worst = 0.0
        for r in rho:
            psi = run.timed(f"psi_rho{r:+.6g}", inverse_solution, cfg.potential, cfg.mu, 1j * r, g["X"], g["h"], check=False)
            phi = Sweeper("phi", cfg.potential, mu_matrix(cfg.mu), g["X"], g["h"])([1j * r])[0]
            worst = max(worst, float(np.max(np.abs(phi @ psi.values - np.eye(2)))))
            run.csv(f"psi_rho{r:+.6g}.csv", [psi.xgrid], ["x"], [("psi", psi.values)])
        run.reports.append(_report("solve_phi_psi_product", worst, ptol))


def cmd_kernel(run, args):
    cfg = run.cfg
    g = cfg.grids
    P = cfg.potential
    if cfg.Q is not None:
        tr, K, Kt = run.timed("kernels", boundary_traces, P, cfg.Q, g["X"], g["h"], return_kernels=True)
        run.csv("traces.csv", [tr.xgrid], ["x"], [("J", tr.J_nodes), ("L", tr.L_nodes)])
        r = tr.residuals
        run.reports.append(_report("trace_relation", r["trace_relation"], _tol(args, cfg, "trace_relation", 1e-7)))
        run.reports.append(_report("edge_QJ-J", r["QJ-J"], _tol(args, cfg, "edge", 1e-8)))
        run.reports.append(_report("edge_LQ-L", r["LQ-L"], _tol(args, cfg, "edge", 1e-8)))
        rho = np.asarray(g["rho_list"], dtype=float)
        res, res_t = run.timed("transformation", transformation_residual, K, cfg.Q, rho, Kt)
        ttol = _tol(args, cfg, "transformation", 5e-6)
        run.reports.append(_report("transformation_formula", res, ttol, {"rho": rho.tolist()}))
        run.reports.append(_report("transformation_formula_adjoint", res_t, ttol, {"rho": rho.tolist()}))
    else:
        cfg.require("mu")
        K = run.timed("kernel", solve_kernel, P, PotentialSpec.zero(), cfg.mu, g["X"], g["h"])
    run.grid("x", K.xgrid)
    stride = max(1, int(np.ceil(K.N / (MAX_KERNEL_NODES - 1))))
    idx = np.arange(0, K.N + 1, stride)
    ii, jj = np.meshgrid(idx, idx, indexing="ij")
    keep = jj <= ii
    ii, jj = ii[keep], jj[keep]
    run.csv("kernel.csv", [K.xgrid[ii], K.xgrid[jj]], ["x", "y"], [("K", K.K(ii, jj))])
    run.extra["kernel_csv_stride"] = stride
    run.reports.append(
        _report("kernel_diagonal_condition", K.diagonal_residual(), _tol(args, cfg, "kernel_structure", 1e-9), {"iterations": K.iterations})
    )
    run.reports.append(_report("kernel_edge_condition", K.edge_residual(), _tol(args, cfg, "kernel_structure", 1e-9)))
    if P.is_commuting():
        run.reports.append(_report("commuting_kernel_vanishes", K.sup_norm(), _tol(args, cfg, "commuting", 1e-8)))


def _theorem2_context(run, cfg):
    cfg.require("Q")
    g = cfg.grids
    ctx = run.timed("context", Theorem2Context.build, cfg.potential, cfg.Q, g["sigma"], cfg.rho_grid, g["h"])
    run.grid("rho", cfg.rho_grid.nodes)
    run.grid("x", ctx.traces.xgrid)
    return ctx


def cmd_density(run, args):
    cfg = run.cfg
    ctx = _theorem2_context(run, cfg)
    D = ctx.density
    run.csv("density.csv", [cfg.rho_grid.nodes], ["rho"], [("D", D.samples.values)])
    ch = ctx.chain_residuals()
    run.reports.append(_report("density_routes", D.route_gap, _tol(args, cfg, "density_routes", 1e-5)))
    chain = max(ch["QDQ-D"], ch["ThetaJ.Q-ThetaJ"], ch["ThetaJ-ThetaL"], ch["Q.ThetaL-ThetaL"])
    run.reports.append(_report("density_chain", chain, _tol(args, cfg, "chain", 1e-6), ch))


def cmd_parseval(run, args):
    cfg = run.cfg
    cfg.require("f")
    cfg.require("g")
    f, g = cfg.tests["f"], cfg.tests["g"]
    grid = cfg.rho_grid
    run.grid("rho", grid.nodes)
    if args.theorem == "free":
        cfg.require("Q")
        rep = run.timed("parseval_free", parseval_free, f, g, cfg.Q, grid, tol=_tol(args, cfg, "parseval_free", 1e-4))
        run.reports.append(rep)
    elif args.theorem == "1":
        cfg.require("mu")
        tol = _tol(args, cfg, "parseval_theorem1", 5e-3)
        for (sf, fk), (sg, gk) in zip(_vector_columns(f), _vector_columns(g)):
            rep = run.timed(f"parseval_theorem1{sf}", parseval_theorem1, fk, gk, cfg.potential, cfg.mu, grid, tol, cfg.grids["h"])
            rep.name += sf
            run.reports.append(rep)
    else:
        ctx = _theorem2_context(run, cfg)
        rep = run.timed(
            "parseval_theorem2",
            parseval_theorem2,
            f,
            g,
            ctx,
            tol_iii=_tol(args, cfg, "parseval_theorem2_iii", 1e-4),
            tol_ii=_tol(args, cfg, "parseval_theorem2_ii", 5e-3),
        )
        run.reports.append(rep)


def cmd_expand(run, args):
    cfg = run.cfg
    cfg.require("f")
    f = cfg.tests["f"]
    grid = cfg.rho_grid
    run.grid("rho", grid.nodes)
    tol = _tol(args, cfg, "expansion", 1e-3)
    if args.theorem == "free":
        cfg.require("Q")
        outs = [("", run.timed("expand_free", expand_free, f, cfg.Q, grid, tol=tol))]
    elif args.theorem == "1":
        cfg.require("mu")
        outs = [
            (sf, run.timed(f"expand_theorem1{sf}", expand_theorem1, fk, cfg.potential, cfg.mu, grid, cfg.grids["h"], tol=tol))
            for sf, fk in _vector_columns(f)
        ]
    else:
        ctx = _theorem2_context(run, cfg)
        outs = [("", run.timed("expand_theorem2", expand_theorem2, f, ctx, tol=tol))]
    for sf, (rep, rec) in outs:
        rep.name += sf
        run.reports.append(rep)
        run.csv(
            f"reconstruction{sf}.csv",
            [rec.x],
            ["x"],
            [("f", rec.target), ("form1_", rec.forms[0]), ("form2_", rec.forms[1])],
        )


def cmd_selftest(run, args):
    from .acceptance import run_all

    results = run_all(echo=print)
    run.extra["criteria"] = [r.to_dict() for r in results]
    for r in results:
        run.reports.append(_report(f"criterion_{r.number:02d}", 0.0 if r.passed else np.inf, 0.0, {"measured": r.to_dict()["measured"]}, wall=r.wall_time))
        run.timings[f"criterion_{r.number}"] = r.wall_time


COMMANDS = {
    "solve": cmd_solve,
    "kernel": cmd_kernel,
    "density": cmd_density,
    "parseval": cmd_parseval,
    "expand": cmd_expand,
    "selftest": cmd_selftest,
}


def build_parser():
    p = argparse.ArgumentParser(prog="specfun", description="Spectral functions of nonsymmetric 2x2 first-order operators.")
    p.add_argument("--version", action="version", version=f"specfun {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument(
            "--config",
            required=name != "selftest",
            help=f"JSON run configuration, or the name of a bundled one ({', '.join(BUNDLED)})",
        )
        sp.add_argument("--out", default=f"specfun-{name}", help="output directory")
        sp.add_argument("--tol", type=float, default=None, help="override the tolerance of the primary checks")
        if name in ("parseval", "expand"):
            sp.add_argument("--theorem", choices=("free", "1", "2"), default="2")
    return p


def _load(arg):
    if arg is None:
        return bundled("zero")
    if arg in BUNDLED and not Path(arg).exists():
        return bundled(arg)
    return load_config(arg)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args.config)
        run = Run(args.command, cfg, Path(args.out), argv)
        COMMANDS[args.command](run, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SpecfunError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return run.finish()


if __name__ == "__main__":
    sys.exit(main())
