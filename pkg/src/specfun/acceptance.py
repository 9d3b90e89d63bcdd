"""The acceptance suite: ten criteria, each reduced to measured numbers and a verdict.

Expensive objects (kernels, traces, spectral sweeps) live on an
``AcceptanceContext`` and are built once per suite run.
"""

import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .algebra import E, mu_matrix, validate_projector
from .config import bundled
from .errors import NotAdmissible
from .kernel import frak_route_a, frak_route_b, solve_kernel, transformation_residual
from .potential import GaussianBump, PotentialSpec, adjoint_potential, r_matrix
from .solutions import Sweeper, inverse_solution
from .transforms import (
    RhoGrid,
    TestFunction,
    delta_n,
    dn_sigma,
    inverse_identity,
    mollified_identity,
    omega_eta,
)
from .verify import (
    Theorem2Context,
    expand_free,
    expand_theorem1,
    expand_theorem2,
    parseval_free,
    parseval_theorem1,
    parseval_theorem2,
    round_trip,
    volterra_solve,
    volterra_solve_adjoint,
)

SUITE_BUDGET = 300.0


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    measured: dict = field(default_factory=dict)
    reports: list = field(default_factory=list)
    wall_time: float = 0.0

    def line(self):
        flag = "PASS" if self.passed else "FAIL"
        vals = ", ".join(f"{k}={_fmt(v)}" for k, v in self.measured.items())
        return f"criterion {self.number:2d} {flag}  {self.title} [{vals}] ({self.wall_time:.1f}s)"

    def to_dict(self):
        return {
            "criterion": self.number,
            "title": self.title,
            "passed": self.passed,
            "measured": {k: _plain(v) for k, v in self.measured.items()},
            "wall_time": self.wall_time,
            "reports": [r.to_dict() for r in self.reports],
        }


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return f"{v:.3e}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(t) for t in v) + "]"
    return str(v)


def _plain(v):
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, (list, tuple)):
        return [_plain(t) for t in v]
    return v


def _maxabs(a):
    return float(np.max(np.abs(a)))


PEAK = np.exp(4.0)  # bump exp(-1/(s(1-s))) has value e^-4 at its midpoint


class AcceptanceContext:
    """Shared fixtures: bundled configurations and the expensive solves."""

    def __init__(self, grid=None, h=1e-3):
        self.grid = grid or RhoGrid(200.0, 0.01)
        self.h = h

    @cached_property
    def zero(self):
        return bundled("zero")

    @cached_property
    def commuting(self):
        return bundled("commuting")

    @cached_property
    def bump(self):
        return bundled("bump")

    @cached_property
    def bump_ctx(self):
        c = self.bump
        return Theorem2Context.build(c.potential, c.Q, c.grids["sigma"], self.grid, self.h)


# ------------------------------------------------------------------ criteria


def criterion_1(ctx):
    """Free Parseval for f = g = Q 1_[0,1], Q = diag(1, 0)."""
    t0 = time.perf_counter()
    Q = validate_projector(np.diag([1.0, 0.0]).astype(complex))
    f = TestFunction.indicator(0.0, 1.0, Q.q)
    rep = parseval_free(f, f, Q, ctx.grid)
    wall = time.perf_counter() - t0
    err = rep.details["raw_residual"]
    bound = 1e-4 + rep.tail_bound
    ok = err <= bound and wall <= 10.0
    return CriterionResult(
        1,
        "free Parseval, spectral side equals Q",
        ok,
        {"raw_error": err, "allowed": bound, "tail_bound": rep.tail_bound, "corrected_error": rep.residual, "runtime_s": wall},
        [rep],
    )


def criterion_2(ctx):
    """Theorem 1 Parseval: P = 0 and a commuting bump potential."""
    f = TestFunction.indicator(0.0, 1.0, [1.0, 0.0])
    # f is real, so conj(g) = f and one pair of sweeps serves both sides
    om, et = omega_eta(f, PotentialSpec.zero(), 0.0, ctx.grid)
    rep0 = parseval_theorem1(f, f, PotentialSpec.zero(), 0.0, ctx.grid, tol=2e-3, transforms=(om, et))
    c = ctx.commuting
    om1, et1 = omega_eta(f, c.potential, c.mu, ctx.grid)
    rep1 = parseval_theorem1(f, f, c.potential, c.mu, ctx.grid, tol=5e-3, transforms=(om1, et1))
    return CriterionResult(
        2,
        "Theorem 1 Parseval",
        rep0.passed and rep1.passed,
        {
            "free_error": rep0.residual,
            "free_raw_error": rep0.details["raw_residual"],
            "free_tail_correction": abs(rep0.details["tail_correction"]),
            "commuting_error": rep1.residual,
            "commuting_raw_error": rep1.details["raw_residual"],
        },
        [rep0, rep1],
    )


def criterion_3(ctx):
    """Transformation formula for the bundled bump potential, and its h-convergence."""
    c = ctx.bump
    rho = np.linspace(-10.0, 10.0, 21)
    b = ctx.bump_ctx
    r1, r1t = transformation_residual(b.K, c.Q, rho, b.Kt, xmax=2.0)
    K2 = solve_kernel(c.potential, PotentialSpec.zero(), c.Q, 2.0, ctx.h / 2)
    r2, _ = transformation_residual(K2, c.Q, rho)
    ratio = r1 / r2 if r2 > 0 else np.inf
    return CriterionResult(
        3,
        "transformation-formula oracle",
        r1 <= 5e-6 and ratio >= 3.0,
        {"residual_h": r1, "residual_h_adjoint": r1t, "residual_h/2": r2, "reduction": ratio},
    )


def _commuting_pair():
    P1 = PotentialSpec.commuting(GaussianBump(0.3, 0.5, 0.15), GaussianBump(0.2, 0.5, 0.15))
    P2 = PotentialSpec.commuting(GaussianBump(-0.25 + 0.1j, 0.8, 0.2), GaussianBump(0.15, 0.3, 0.1))
    return P1, P2


def criterion_4(ctx):
    """Commuting potentials: vanishing kernel and phi_2 = R(P1,P2) phi_1."""
    P1, P2 = _commuting_pair()
    mu = 0.3
    K = solve_kernel(P1, P2, mu, 2.0, ctx.h)
    lam = 1j * np.array([-10.0, -1.0, 0.0, 2.5, 10.0]) + np.array([0.0, 0.2, -0.3, 0.0, 0.1])
    M = mu_matrix(mu)
    sw1 = Sweeper("phi", P1, M, 2.0, ctx.h)
    phi1, phi2 = sw1(lam), Sweeper("phi", P2, M, 2.0, ctx.h)(lam)
    x = sw1.xgrid
    res = _maxabs(phi2 - r_matrix(P1, P2, x)[None] @ phi1)
    sup = K.sup_norm()
    return CriterionResult(4, "commuting potentials", sup <= 1e-8 and res <= 1e-8, {"sup_K": sup, "phi2-R.phi1": res})


def criterion_5(ctx):
    """Trace relation and the projector identities for J and L."""
    r = ctx.bump_ctx.traces.residuals
    ok = r["trace_relation"] <= 1e-7 and r["QJ-J"] <= 1e-8 and r["LQ-L"] <= 1e-8
    return CriterionResult(5, "trace relation", ok, dict(r))


def frak_pde_residual(K, Kt, xs, ys):
    """Central-difference residual of F_x B + B F_y for the integral definition of F."""
    from .algebra import B

    h = K.h
    worst = 0.0
    for x in xs:
        for y in ys:
            if abs(x - y) < 2 * h or x < h or y < h:
                continue  # F has a kink on the diagonal
            fx = (frak_route_a(K, Kt, x + h, y) - frak_route_a(K, Kt, x - h, y)) / (2 * h)
            fy = (frak_route_a(K, Kt, x, y + h) - frak_route_a(K, Kt, x, y - h)) / (2 * h)
            worst = max(worst, _maxabs(fx @ B + B @ fy))
    return worst


def criterion_6(ctx):
    """Two-variable kernel: definition versus closed form, and its PDE."""
    b = ctx.bump_ctx
    pts = np.linspace(0.0, 1.0, 21)
    gap = 0.0
    for x in pts:
        for y in pts:
            gap = max(gap, _maxabs(frak_route_a(b.K, b.Kt, x, y) - frak_route_b(b.traces, x, y)))
    pde = frak_pde_residual(b.K, b.Kt, pts, pts)
    return CriterionResult(6, "two-variable kernel routes", gap <= 1e-5 and pde <= 1e-4, {"route_gap": gap, "pde_residual": pde})


def criterion_7(ctx):
    """Theorem 2 three-route Parseval on the bundled bump configuration."""
    c, b = ctx.bump, ctx.bump_ctx
    rep = parseval_theorem2(c.tests["f"], c.tests["g"], b)
    d = rep.details
    chain = d["chain"]
    chain_max = max(chain["QDQ-D"], chain["ThetaJ.Q-ThetaJ"], chain["ThetaJ-ThetaL"], chain["Q.ThetaL-ThetaL"])
    ok = d["residual_i_iii"] <= 1e-4 and d["residual_i_ii"] <= 5e-3 + rep.tail_bound and chain_max <= 1e-6
    return CriterionResult(
        7,
        "Theorem 2 three routes",
        ok,
        {
            "i-iii": d["residual_i_iii"],
            "i-ii": d["residual_i_ii"],
            "tail_bound": rep.tail_bound,
            "chain": chain_max,
            "Phi_f-Theta_F": d["Phi_f-Theta_F"],
        },
        [rep],
    )


def criterion_8(ctx):
    """Expansion formulas reconstruct a smooth bump."""
    q = ctx.bump.Q
    fm = TestFunction.bump(0.0, 1.0, PEAK * np.array([[1.0, 0.5], [0.25j, 1.0]]))
    fv = TestFunction.bump(0.0, 1.0, PEAK * np.array([1.0, 0.5j]))
    c = ctx.commuting
    reps = [
        expand_free(fm, q, ctx.grid)[0],
        expand_theorem1(fv, c.potential, c.mu, ctx.grid)[0],
        expand_theorem2(fm, ctx.bump_ctx)[0],
    ]
    m = {}
    for r in reps:
        key = r.name.replace("expand_", "")
        m[f"{key}_l2"] = max(r.details["l2_errors"])
        m[f"{key}_forms_gap"] = r.details["forms_gap"]
    return CriterionResult(8, "expansion reconstruction", all(r.passed for r in reps), m, reps)


def _smooth_g():
    return TestFunction.bump(0.0, 2.0, 0.5 * PEAK * np.array([1.0, 0.5]))


def criterion_9(ctx):
    """Delta concentration of U_n and the inverse-transform identity."""
    c = ctx.commuting
    P, nu, sigma = c.potential, 0.3, 2.0
    g = _smooth_g()
    xs = np.linspace(0.05, 1.95, 39)
    errs = []
    for n in (64, 256, 1024):
        Dn = dn_sigma(P, nu, n, sigma, ctx.grid)
        errs.append(_maxabs(mollified_identity(P, nu, Dn, g, xs) - g(xs)))
    # a small n keeps delta_n resolvable within the rho window
    n_inv = 4
    wide = RhoGrid(400.0, 0.01)
    Dn = dn_sigma(P, nu, n_inv, sigma, wide)
    xg = np.linspace(0.0, sigma, 201)
    inv = _maxabs(inverse_identity(P, nu, Dn, xg) - delta_n(xg, n_inv)[:, None, None] * E)
    monotone = errs[0] > errs[1] > errs[2]
    ok = monotone and errs[2] <= 1e-3 and inv <= 1e-4
    return CriterionResult(
        9,
        "delta concentration",
        ok,
        {"err_n64": errs[0], "err_n256": errs[1], "err_n1024": errs[2], "monotone": monotone, "inv_f": inv},
    )


def criterion_10(ctx):
    """Structural invariants."""
    c = ctx.bump
    P = c.potential
    Pc = PotentialSpec(GaussianBump(0.2 + 0.1j, 0.4, 0.2), GaussianBump(-0.3j, 0.6, 0.2), GaussianBump(0.1, 0.2, 0.3), 0.05)
    x = np.linspace(0.0, 2.0, 401)
    zero = PotentialSpec.zero()
    r0 = max(_maxabs(r_matrix(a, b, 0.0) - E) for a, b in ((P, zero), (Pc, P), (zero, Pc)))
    inv = _maxabs(r_matrix(P, Pc, x) @ r_matrix(Pc, P, x) - E)
    conj = _maxabs(r_matrix(adjoint_potential(Pc), adjoint_potential(P), x) - np.conj(r_matrix(P, Pc, x)))
    # projector validation: a valid Q passes, broken ones are rejected
    proj_ok = True
    validate_projector(c.Q.q)
    for bad in (np.eye(2), np.array([[1.0, 1.0], [0.0, 0.0]]), 2 * c.Q.q):
        try:
            validate_projector(bad.astype(complex))
            proj_ok = False
        except NotAdmissible:
            pass
    prod = 0.0
    for lam in (0.0, 5j, -3.0 + 2j, 0.7):
        g = inverse_solution(Pc, 0.25, lam, 2.0, ctx.h)
        prod = max(prod, g.meta["product_residual"])
    b = ctx.bump_ctx
    f, gg = c.tests["f"], c.tests["g"]
    rt = max(
        round_trip(f, volterra_solve(f, b.K, b.sigma), b.K, P),
        round_trip(gg, volterra_solve_adjoint(gg, b.Kt, P, b.sigma), b.Kt, P),
    )
    ok = r0 == 0.0 and inv <= 1e-9 and conj <= 1e-9 and proj_ok and prod <= 1e-8 and rt <= 1e-7
    return CriterionResult(
        10,
        "structural invariants",
        ok,
        {"R(0)-E": r0, "R.R-E": inv, "conjugation": conj, "projectors": proj_ok, "phi.psi-E": prod, "volterra_round_trip": rt},
    )


CRITERIA = (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8, criterion_9, criterion_10)


def run_criterion(number, ctx):
    t0 = time.perf_counter()
    res = CRITERIA[number - 1](ctx)
    res.wall_time = time.perf_counter() - t0
    return res


def run_all(ctx=None, only=None, echo=None):
    """Run the selected criteria in order; criterion 10 also checks the total wall time."""
    ctx = ctx or AcceptanceContext()
    numbers = list(only) if only else list(range(1, len(CRITERIA) + 1))
    t0 = time.perf_counter()
    out = []
    for n in numbers:
        res = run_criterion(n, ctx)
        out.append(res)
        if echo:
            echo(res.line())
    total = time.perf_counter() - t0
    if len(numbers) == len(CRITERIA):
        last = out[-1]
        last.measured["suite_time_s"] = total
        if total > SUITE_BUDGET:
            last.passed = False
            if echo:
                echo(f"criterion 10 FAIL  suite wall time {total:.1f}s exceeds {SUITE_BUDGET:.0f}s")
    return out
