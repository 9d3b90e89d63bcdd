"""Parseval identities, expansion formulas and the Volterra solves behind them.

Every check returns a ``VerificationReport`` that carries its own tolerance,
so a report is self-describing once serialized.
"""

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .algebra import ProjectorQ, mu_matrix, validate_projector
from .errors import IllConditioned
from .kernel import boundary_traces, frak_route_b_nodes
from .potential import PotentialSpec, r_matrix
from .quadrature import rho_integral, simpson_weights
from .solutions import free_Q, free_Q_tilde
from .transforms import (
    RhoGrid,
    SampledFunction,
    TestFunction,
    _osc_integral,
    _SweepSet,
    _test_grid,
    density,
    omega_eta,
    phi_transforms,
    theta_transforms,
)

DEFAULT_H = 1e-3


# ------------------------------------------------------------------ reports


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (complex, np.complexfloating)):
        return [float(np.real(v)), float(np.imag(v))]
    if isinstance(v, np.generic):
        return v.item()
    return v


@dataclass
class VerificationReport:
    name: str
    lhs: object
    rhs: object
    residual: float
    tolerance: float
    grid: dict = field(default_factory=dict)
    tail_bound: float = 0.0
    wall_time: float = 0.0
    details: dict = field(default_factory=dict)

    @property
    def relative(self):
        scale = float(np.max(np.abs(self.lhs))) if np.size(self.lhs) else 0.0
        return self.residual / scale if scale > 0 else self.residual

    @property
    def passed(self):
        return bool(np.isfinite(self.residual) and self.residual <= self.tolerance)

    def to_dict(self):
        return _jsonable(
            {
                "name": self.name,
                "lhs": self.lhs,
                "rhs": self.rhs,
                "residual": self.residual,
                "relative_residual": self.relative,
                "tolerance": self.tolerance,
                "tail_bound": self.tail_bound,
                "passed": self.passed,
                "grid": self.grid,
                "wall_time": self.wall_time,
                "details": self.details,
            }
        )

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def line(self):
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag}  {self.name:<40s} residual={self.residual:.3e}  tol={self.tolerance:.3e}"


def _maxabs(a):
    return float(np.max(np.abs(a))) if np.size(a) else 0.0


def _grid_meta(grid, h=None, **extra):
    meta = {"R": grid.R, "drho": grid.drho}
    if h is not None:
        meta["h"] = h
    meta.update(extra)
    return meta


# ------------------------------------------------------------------ x-side integrals


def x_integral(f, g, op, h=1e-4):
    """int op(f(x), g(x)) dx by Simpson on the pieces between breakpoints of f and g."""
    X = max(f.support, g.support)
    n = int(round(X / h))
    n += n % 2
    x = np.linspace(0.0, n * h, n + 1)
    cuts = sorted({0.0, x[-1]} | {b for fn in (f, g) if isinstance(fn, TestFunction) for b in fn.breakpoints()})
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        p, q = int(round(lo / h)), int(round(hi / h))
        if q == p:
            continue
        if (q - p) % 2:
            raise ValueError("breakpoints must split the grid into even pieces")
        xs = x[p : q + 1]
        fv = f.sample(xs, lo, hi) if isinstance(f, TestFunction) else f(xs)
        gv = g.sample(xs, lo, hi) if isinstance(g, TestFunction) else g(xs)
        total = total + np.tensordot(simpson_weights(q - p, h), op(fv, gv), axes=(0, 0))
    return total


def _matprod(a, b):
    return a @ b


def _sesqui(a, b):
    return np.sum(a * np.conj(b), axis=-1)


# ------------------------------------------------------------------ Volterra solves


@dataclass
class VolterraSolution:
    xgrid: np.ndarray
    values: np.ndarray
    sigma_index: int
    adjoint: bool

    def as_function(self):
        return SampledFunction(self.xgrid, self.values)


def _volterra_setup(f, K, sigma):
    x, h = K.xgrid, K.h
    if sigma is None:
        sigma = f.support
    m = int(round(sigma / h))
    if m > K.N:
        raise ValueError("kernel grid must cover the support of f")
    vals = f(x[: m + 1]) if callable(f) else np.asarray(f, dtype=complex)[: m + 1]
    return x, h, m, vals


def _check_diag(R):
    d = np.abs(np.linalg.det(R))
    if np.min(d) < 1e-12:
        raise IllConditioned("diagonal factor is near singular")


def volterra_solve(f, K, sigma=None):
    """Solve f = F R(P,0) + int_x^sigma F(t) K(t,x) dt backward from sigma.

    K is the kernel K(P,0;Q) on its x-grid.  The integral uses the trapezoid
    rule, so each step is a 2x2 linear solve for F(x_i).  F vanishes beyond
    sigma by construction.
    """
    x, h, m, fv = _volterra_setup(f, K, sigma)
    P = K.data.P1
    zero = PotentialSpec.zero()
    R = r_matrix(P, zero, x[: m + 1])
    _check_diag(R)
    F = np.zeros((x.size, 2, 2), dtype=complex)
    F[m] = fv[m] @ np.linalg.inv(R[m])
    for i in range(m - 1, -1, -1):
        k = np.arange(i, m + 1)
        col = K.K(k, np.full_like(k, i))  # K(x_k, x_i), k >= i
        w = np.full(k.size, h)
        w[0] = w[-1] = 0.5 * h
        acc = np.einsum("k,kab,kbc->ac", w[1:], F[k[1:]], col[1:])
        F[i] = (fv[i] - acc) @ np.linalg.inv(R[i] + w[0] * col[0])
    return VolterraSolution(x, F, m, False)


def volterra_solve_adjoint(g, Kt, P, sigma=None):
    """Solve g = R(0,P) G + int_x^sigma Kt^*(t,x) G(t) dt backward from sigma.

    Kt is the adjoint kernel K(-P^*, 0; Q^*); Kt^* is its conjugate transpose.
    """
    x, h, m, gv = _volterra_setup(g, Kt, sigma)
    zero = PotentialSpec.zero()
    R = r_matrix(zero, P, x[: m + 1])
    _check_diag(R)
    G = np.zeros((x.size, 2, 2), dtype=complex)
    G[m] = np.linalg.solve(R[m], gv[m])
    for i in range(m - 1, -1, -1):
        k = np.arange(i, m + 1)
        col = np.conj(np.swapaxes(Kt.K(k, np.full_like(k, i)), -1, -2))
        w = np.full(k.size, h)
        w[0] = w[-1] = 0.5 * h
        acc = np.einsum("k,kab,kbc->ac", w[1:], col[1:], G[k[1:]])
        G[i] = np.linalg.solve(R[i] + w[0] * col[0], gv[i] - acc)
    return VolterraSolution(x, G, m, True)


def volterra_apply(sol, K, P):
    """Forward evaluation of the Volterra map from a solution (dense, row by row)."""
    x, h, m = sol.xgrid, K.h, sol.sigma_index
    zero = PotentialSpec.zero()
    n = m + 1
    full = np.zeros((n, n, 2, 2), dtype=complex)  # K(x_t, x_s) for s <= t
    for t in range(n):
        full[t, : t + 1] = K.row(t)
    # trapezoid weights over t in [x_s, sigma]
    W = np.tril(np.full((n, n), h))
    W[np.arange(n), np.arange(n)] = 0.5 * h
    W[m, :] = 0.5 * h
    W[m, m] = 0.0
    V = sol.values[:n]
    if not sol.adjoint:
        # int_s^sigma F(t) K(t,s) dt, the rule weighted over t in [s, sigma]
        out = V @ r_matrix(P, zero, x[:n])
        out += np.einsum("ts,tab,tsbc->sac", W, V, full)
    else:
        Ks = np.conj(np.swapaxes(full, -1, -2))
        out = r_matrix(zero, P, x[:n]) @ V
        out += np.einsum("ts,tsab,tbc->sac", W, Ks, V)
    return out


def round_trip(f, sol, K, P):
    """L-infinity residual of the forward map applied to a Volterra solution."""
    fv = f(sol.xgrid[: sol.sigma_index + 1])
    return _maxabs(volterra_apply(sol, K, P) - fv)


# ------------------------------------------------------------------ Lemma 4.1


def parseval_free(f, g, Q, grid=None, tol=1e-4):
    """int f g dx against (1/pi) int Theta_f ThetaTilde_g and (1/pi) int Theta_f Q ThetaTilde_g."""
    t0 = time.perf_counter()
    grid = grid or RhoGrid()
    q = _q(Q)
    lhs = x_integral(f, g, _matprod)
    th, tt = theta_transforms(f, g, q, grid)
    r1 = rho_integral(grid.nodes, th.values @ tt.values, 1 / np.pi)
    r2 = rho_integral(grid.nodes, th.values @ q @ tt.values, 1 / np.pi)
    res = max(_maxabs(r1["corrected"] - lhs), _maxabs(r2["corrected"] - lhs))
    return VerificationReport(
        "parseval_free",
        lhs,
        r1["corrected"],
        res,
        tol,
        _grid_meta(grid),
        r1["tail_bound"],
        time.perf_counter() - t0,
        {
            "rhs_raw": r1["raw"],
            "rhs_q_raw": r2["raw"],
            "raw_residual": max(_maxabs(r1["raw"] - lhs), _maxabs(r2["raw"] - lhs)),
            "tail_correction": r1["tail_correction"],
            "forms_gap": _maxabs(r1["raw"] - r2["raw"]),
        },
    )


def _q(Q):
    if isinstance(Q, ProjectorQ):
        return Q.q
    return validate_projector(Q).q


# ------------------------------------------------------------------ Theorem 1


def parseval_theorem1(f, g, P, mu, grid=None, tol=5e-3, h=None, transforms=None):
    """int f^T conj(g) dx against (1/2pi) sum_k int omega_f^k eta_{conj g}^k d rho.

    ``transforms`` may pass precomputed (omega_f, eta_{conj g}).
    """
    t0 = time.perf_counter()
    grid = grid or RhoGrid()
    lhs = x_integral(f, g, _sesqui)
    if transforms is None:
        om, _ = omega_eta(f, P, mu, grid, h)
        _, eb = omega_eta(g.conj(), P, mu, grid, h)
    else:
        om, eb = transforms
    r = rho_integral(grid.nodes, np.sum(om.values * eb.values, axis=1), 1 / (2 * np.pi))
    res = abs(r["corrected"] - lhs)
    return VerificationReport(
        "parseval_theorem1",
        lhs,
        r["corrected"],
        float(res),
        tol,
        _grid_meta(grid, om.meta.get("h"), mu=complex(mu)),
        r["tail_bound"],
        time.perf_counter() - t0,
        {
            "rhs_raw": r["raw"],
            "raw_residual": float(abs(r["raw"] - lhs)),
            "tail_correction": r["tail_correction"],
            "step_error": om.meta.get("step_error"),
        },
    )


# ------------------------------------------------------------------ Theorem 2


@dataclass
class Theorem2Context:
    """Kernels, traces and the density for one (P, Q, sigma) setting."""

    P: PotentialSpec
    Q: ProjectorQ
    sigma: float
    grid: RhoGrid
    h: float
    traces: object
    K: object
    Kt: object
    density: object

    @classmethod
    def build(cls, P, Q, sigma, grid=None, h=DEFAULT_H):
        Q = Q if isinstance(Q, ProjectorQ) else validate_projector(Q)
        grid = grid or RhoGrid()
        X = 2 * sigma + 1
        tr, K, Kt = boundary_traces(P, Q, X, h, return_kernels=True)
        D = density(P, Q, sigma, grid, tr)
        return cls(P, Q, sigma, grid, h, tr, K, Kt, D)

    def chain_residuals(self):
        q = self.Q.q
        tJ, tL = self.density.theta_J, self.density.theta_L
        D = self.density.samples.values
        return {
            "QDQ-D": _maxabs(q @ D @ q - D),
            "ThetaJ.Q-ThetaJ": _maxabs(tJ @ q - tJ),
            "ThetaJ-ThetaL": _maxabs(tJ - tL),
            "Q.ThetaL-ThetaL": _maxabs(q @ tL - tL),
            "density_routes": self.density.route_gap,
        }


def _route_iii(F, G, frak, m, h):
    w = simpson_weights(m, h)
    Fv, Gv = F[: m + 1], G[: m + 1]
    direct = np.einsum("i,iab,ibc->ac", w, Fv, Gv)
    # sum_{x_i, y_j} w_j F(y_j) frak(x_i, y_j) G(x_i) w_i
    inner = np.einsum("j,jab,ijbc->iac", w, Fv, frak)
    return direct + np.einsum("i,iab,ibc->ac", w, inner, Gv)


def parseval_theorem2(f, g, ctx, tol_iii=1e-4, tol_ii=5e-3, phi=None):
    """Three routes for int f g dx: direct, spectral with D, and the Volterra route.

    The report residual is the route (i)-(iii) gap; route (ii) is checked
    against tol_ii plus its tail bound and the pass flag requires both.
    """
    t0 = time.perf_counter()
    K, Kt, h = ctx.K, ctx.Kt, ctx.h
    if max(f.support, g.support) > ctx.sigma + 1e-12:
        raise ValueError("test functions must be supported in [0, sigma]")
    route_i = x_integral(f, g, _matprod)
    Fs = volterra_solve(f, K, ctx.sigma)
    Gs = volterra_solve_adjoint(g, Kt, ctx.P, ctx.sigma)
    m = Fs.sigma_index
    idx = np.arange(m + 1)
    frak = frak_route_b_nodes(ctx.traces, idx[:, None], idx[None, :])
    route_iii = _route_iii(Fs.values, Gs.values, frak, m, h)
    if phi is None:
        phi = phi_transforms(f, g, ctx.P, ctx.Q, ctx.grid, h)
    Pf, Pg = phi
    D = ctx.density.samples.values
    r = rho_integral(ctx.grid.nodes, Pf.values @ D @ Pg.values)
    route_ii = r["corrected"]
    res_iii = _maxabs(route_i - route_iii)
    res_ii = _maxabs(route_i - route_ii)
    # Phi_f = Theta_F on a coarse rho sample checks the Volterra route directly
    rs = np.linspace(-20.0, 20.0, 41)
    sub = np.rint((rs + ctx.grid.R) / ctx.grid.drho).astype(int)
    thF, thG = theta_transforms(
        SampledFunction(Fs.xgrid[: m + 1], Fs.values[: m + 1]), SampledFunction(Gs.xgrid[: m + 1], Gs.values[: m + 1]), ctx.Q, rs
    )
    details = {
        "route_i": route_i,
        "route_ii": route_ii,
        "route_ii_raw": r["raw"],
        "route_iii": route_iii,
        "residual_i_iii": res_iii,
        "residual_i_ii": res_ii,
        "residual_i_ii_raw": _maxabs(route_i - r["raw"]),
        "residual_ii_iii": _maxabs(route_ii - route_iii),
        "tol_iii": tol_iii,
        "tol_ii": tol_ii,
        "Phi_f-Theta_F": _maxabs(Pf.values[sub] - thF),
        "PhiTilde_g-ThetaTilde_G": _maxabs(Pg.values[sub] - thG),
        "round_trip_F": round_trip(f, Fs, K, ctx.P),
        "round_trip_G": round_trip(g, Gs, Kt, ctx.P),
        "chain": ctx.chain_residuals(),
    }
    rep = VerificationReport(
        "parseval_theorem2",
        route_i,
        route_iii,
        res_iii,
        tol_iii,
        _grid_meta(ctx.grid, h, sigma=ctx.sigma, X=float(K.data.X)),
        r["tail_bound"],
        time.perf_counter() - t0,
        details,
    )
    if res_ii > tol_ii + r["tail_bound"]:
        rep.residual = max(res_iii, np.inf if not np.isfinite(res_ii) else res_ii)
        rep.details["route_ii_failed"] = True
    return rep


# ------------------------------------------------------------------ expansions


@dataclass
class Reconstruction:
    x: np.ndarray
    forms: tuple
    target: np.ndarray


def _l2(x, a):
    n = x.size - 1
    if n % 2:
        raise ValueError("reconstruction grid needs an even number of intervals")
    w = simpson_weights(n, x[1] - x[0])
    return float(np.sqrt(np.tensordot(w, np.abs(a.reshape(x.size, -1)) ** 2, axes=(0, 0)).sum()))


def _expansion_report(name, x, forms, target, tol, forms_tol, meta, t0):
    errs = [_l2(x, fm - target) for fm in forms]
    gap = _maxabs(forms[0] - forms[1])
    details = {
        "l2_errors": errs,
        "linf_errors": [_maxabs(fm - target) for fm in forms],
        "forms_gap": gap,
        "forms_tol": forms_tol,
    }
    rep = VerificationReport(name, target, forms[0], max(errs), tol, meta, 0.0, time.perf_counter() - t0, details)
    if gap > forms_tol:
        rep.residual = np.inf
        rep.details["forms_disagree"] = True
    return rep, Reconstruction(x, tuple(forms), target)


def _recon_grid(f, n=200):
    X = f.support if f.terms else 1.0
    return np.linspace(0.0, X, n + 1)


def expand_free(f, Q, grid=None, x=None, tol=1e-3, forms_tol=1e-4):
    """(1/pi) int Theta_f S~(x) d rho and (1/pi) int S(x) ThetaTilde_f d rho."""
    t0 = time.perf_counter()
    grid = grid or RhoGrid()
    q = _q(Q)
    x = _recon_grid(f) if x is None else x
    th, tt = theta_transforms(f, f, q, grid)
    w = grid.weights / np.pi
    rho = grid.nodes
    a = np.zeros((x.size, 2, 2), dtype=complex)
    b = np.zeros((x.size, 2, 2), dtype=complex)
    for s in range(0, rho.size, 2048):
        sl = slice(s, s + 2048)
        St = free_Q_tilde(x, rho[sl], q)  # (nrho, nx, 2, 2)
        S = free_Q(x, rho[sl], q)
        a += np.einsum("r,rab,rxbc->xac", w[sl], th.values[sl], St)
        b += np.einsum("r,rxab,rbc->xac", w[sl], S, tt.values[sl])
    return _expansion_report("expand_free", x, (a, b), f(x), tol, forms_tol, _grid_meta(grid), t0)


def _nodes_on(xgrid, x):
    idx = np.rint(x / (xgrid[1] - xgrid[0])).astype(int)
    if np.max(np.abs(xgrid[idx] - x)) > 1e-9:
        raise ValueError("reconstruction points must lie on the solution grid")
    return idx


def expand_theorem1(f, P, mu, grid=None, h=None, x=None, tol=1e-3, forms_tol=1e-4):
    """(1/2pi) int phi(x) omega_f d rho and (1/2pi) int psi(x) eta_f d rho."""
    t0 = time.perf_counter()
    grid = grid or RhoGrid()
    M = mu_matrix(mu)
    X, h = _test_grid([f], h)
    sws = _SweepSet(P, {"phi": M, "psi": np.linalg.inv(M)}, X, h)
    x = _recon_grid(f) if x is None else x
    idx = _nodes_on(sws.xgrid, x)
    w = grid.weights / (2 * np.pi)
    a = np.zeros((x.size, 2), dtype=complex)
    b = np.zeros((x.size, 2), dtype=complex)
    for sl, rc, Y in sws.chunks(grid.nodes):
        om = _osc_integral(f, sws.xgrid, rc, Y["psi"], -1, "omega")
        et = _osc_integral(f, sws.xgrid, rc, Y["phi"], 1, "eta")
        phi_x = Y["phi"][:, idx]
        psi_x = np.swapaxes(Y["psi"][:, idx], -1, -2)
        a += np.einsum("r,rxab,rb->xa", w[sl], phi_x, om)
        b += np.einsum("r,rxab,rb->xa", w[sl], psi_x, et)
    meta = _grid_meta(grid, h, mu=complex(mu), step_error=sws.step_error(grid.nodes))
    return _expansion_report("expand_theorem1", x, (a, b), f(x), tol, forms_tol, meta, t0)


def expand_theorem2(f, ctx, x=None, tol=1e-3, forms_tol=1e-4):
    """int Phi_f D phi~(x) d rho and int phi(x) D PhiTilde_f d rho."""
    t0 = time.perf_counter()
    grid, q = ctx.grid, ctx.Q.q
    X, h = _test_grid([f], ctx.h)
    sws = _SweepSet(ctx.P, {"phi": q, "phi_tilde": q}, X, h)
    x = _recon_grid(f) if x is None else x
    idx = _nodes_on(sws.xgrid, x)
    D = ctx.density.samples.values
    w = grid.weights
    a = np.zeros((x.size, 2, 2), dtype=complex)
    b = np.zeros((x.size, 2, 2), dtype=complex)
    for sl, rc, Y in sws.chunks(grid.nodes):
        Pf = _osc_integral(f, sws.xgrid, rc, Y["phi"], 1, "Phi")
        Pt = _osc_integral(f, sws.xgrid, rc, Y["phi_tilde"], -1, "PhiTilde")
        phi_x = Y["phi"][:, idx]
        pt_x = np.swapaxes(Y["phi_tilde"][:, idx], -1, -2)
        left = w[sl, None, None] * (Pf @ D[sl])
        right = w[sl, None, None] * (D[sl] @ Pt)
        a += np.einsum("rab,rxbc->xac", left, pt_x)
        b += np.einsum("rxab,rbc->xac", phi_x, right)
    meta = _grid_meta(grid, h, sigma=ctx.sigma)
    return _expansion_report("expand_theorem2", x, (a, b), f(x), tol, forms_tol, meta, t0)


def expand(f, mode, **context):
    """Dispatch to the expansion of the given mode: 'free', 'theorem1' or 'theorem2'."""
    if mode == "free":
        return expand_free(f, context.pop("Q"), **context)
    if mode == "theorem1":
        return expand_theorem1(f, context.pop("P"), context.pop("mu"), **context)
    if mode == "theorem2":
        return expand_theorem2(f, context.pop("ctx"), **context)
    raise ValueError(f"unknown expansion mode {mode!r}")
