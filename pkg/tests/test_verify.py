import json

import numpy as np
import pytest

from specfun.algebra import E, validate_projector
from specfun.kernel import solve_kernel
from specfun.potential import GaussianBump, PotentialSpec, adjoint_potential, r_matrix
from specfun.transforms import RhoGrid, TestFunction
from specfun.verify import (
    Theorem2Context,
    VerificationReport,
    expand,
    expand_free,
    expand_theorem1,
    parseval_free,
    parseval_theorem1,
    parseval_theorem2,
    round_trip,
    volterra_solve,
    volterra_solve_adjoint,
    x_integral,
)

ZERO = PotentialSpec.zero()
Q0 = validate_projector(np.diag([1.0, 0.0]))
COMM = PotentialSpec.commuting(0.3 * GaussianBump(1.0, 0.5, 0.15), 0.2 * GaussianBump(1.0, 0.5, 0.15))
BUMP = PotentialSpec(p21=GaussianBump(0.5, 0.5, 0.2))
SMALL = RhoGrid(40.0, 0.02)


def mat_bump(a, b, coef):
    return TestFunction.bump(a, b, np.asarray(coef, dtype=complex))


def test_report_fields():
    r = VerificationReport("x", 2.0, 2.5, 0.5, 1.0)
    assert r.passed and r.relative == 0.25
    d = json.loads(r.to_json())
    assert d["passed"] and d["tolerance"] == 1.0
    assert not VerificationReport("x", 1.0, 1.0, float("nan"), 1.0).passed
    assert "PASS" in r.line()


def test_parseval_free_indicator():
    f = TestFunction.indicator(0.0, 1.0, Q0.q)
    rep = parseval_free(f, f, Q0)
    assert np.allclose(rep.lhs, Q0.q, atol=1e-14)
    assert rep.residual <= 1e-4 and rep.passed
    z = TestFunction.zero((2, 2))
    rep = parseval_free(z, f, Q0, SMALL)
    assert np.max(np.abs(rep.lhs)) == 0 and np.max(np.abs(rep.rhs)) == 0


def test_parseval_theorem1_free_example():
    f = TestFunction.indicator(0.0, 1.0, [1.0, 0.0])
    rep = parseval_theorem1(f, f, ZERO, 0.0, h=5e-3)
    assert abs(rep.lhs - 1) < 1e-12
    assert rep.residual <= 2e-3


def test_parseval_theorem1_disjoint_supports():
    f = TestFunction.bump(0.0, 0.4, np.array([1.0, 0.5j]))
    g = TestFunction.bump(0.6, 1.0, np.array([0.3, 1.0 + 1j]))
    rep = parseval_theorem1(f, g, COMM, 0.2, SMALL)
    assert rep.lhs == 0
    assert abs(rep.rhs) <= 1e-4


def test_parseval_theorem1_conjugates_g_only():
    # f^T conj(g) = 1 * conj(1j) + 0.5 * 0.25 on [0, 1]
    f = TestFunction.indicator(0.0, 1.0, [1.0, 0.5])
    g = TestFunction.indicator(0.0, 1.0, [1j, 0.25])
    rep = parseval_theorem1(f, g, COMM, 0.2, RhoGrid(100.0, 0.02), h=2e-3)
    assert abs(rep.lhs - (0.125 - 1j)) < 1e-12
    assert rep.residual <= 5e-3


def test_parseval_theorem1_matches_free_lemma():
    # vector data embedded as the first column of a matrix function
    v = np.array([1.0, 0.5j])
    f = TestFunction.bump(0.0, 1.0, v)
    F = TestFunction.bump(0.0, 1.0, np.column_stack([v, [0, 0]]))
    G = TestFunction.bump(0.0, 1.0, np.column_stack([np.conj(v), [0, 0]]).T)
    t1 = parseval_theorem1(f, f, ZERO, 0.0, SMALL)
    fr = parseval_free(G, F, validate_projector(E - Q0.q), SMALL)
    assert abs(t1.lhs - fr.lhs[0, 0]) <= 1e-10
    assert abs(t1.rhs - fr.rhs[0, 0]) <= t1.tail_bound + fr.tail_bound


def test_parseval_bilinearity():
    rng = np.random.default_rng(3)
    f1 = mat_bump(0.0, 1.0, rng.normal(size=(2, 2)))
    f2 = TestFunction.indicator(0.2, 0.6, rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))
    g = mat_bump(0.1, 0.9, rng.normal(size=(2, 2)))
    a, b = 0.7 - 0.2j, 1.3
    r1 = parseval_free(f1, g, Q0, SMALL)
    r2 = parseval_free(f2, g, Q0, SMALL)
    r12 = parseval_free(a * f1 + b * f2, g, Q0, SMALL)
    for key in ("lhs", "rhs"):
        combo = a * getattr(r1, key) + b * getattr(r2, key)
        assert np.max(np.abs(getattr(r12, key) - combo)) <= 1e-10 * np.max(np.abs(combo))


def test_volterra_free_and_commuting():
    f = mat_bump(0.0, 0.8, [[1.0, 2.0j], [0.5, -1.0]])
    K = solve_kernel(ZERO, ZERO, Q0, 1.0, 1e-2)
    sol = volterra_solve(f, K)
    assert np.max(np.abs(sol.values[: sol.sigma_index + 1] - f(sol.xgrid[: sol.sigma_index + 1]))) < 1e-15
    K = solve_kernel(COMM, ZERO, Q0, 1.0, 1e-2)
    sol = volterra_solve(f, K)
    x = sol.xgrid[: sol.sigma_index + 1]
    ref = f(x) @ r_matrix(ZERO, COMM, x)
    assert np.max(np.abs(sol.values[: x.size] - ref)) <= 1e-13


def test_volterra_support_and_round_trip():
    f = mat_bump(0.0, 0.6, [[1.0, 0.3], [0.2j, 1.0]])
    K = solve_kernel(BUMP, ZERO, Q0, 1.0, 2e-3)
    sol = volterra_solve(f, K, sigma=0.8)
    assert np.all(sol.values[sol.sigma_index + 1 :] == 0)
    assert round_trip(f, sol, K, BUMP) <= 1e-7
    Kt = solve_kernel(adjoint_potential(BUMP), ZERO, Q0, 1.0, 2e-3)
    solg = volterra_solve_adjoint(f, Kt, BUMP, sigma=0.8)
    assert np.all(solg.values[solg.sigma_index + 1 :] == 0)
    assert round_trip(f, solg, Kt, BUMP) <= 1e-7


def test_parseval_theorem2_free():
    ctx = Theorem2Context.build(ZERO, Q0, 0.5, SMALL, h=1e-2)
    f = TestFunction.indicator(0.0, 0.5, [[1.0, 0.5], [0.0, 1.0]])
    g = mat_bump(0.0, 0.5, [[1.0, 0.0], [0.25j, 1.0]])
    rep = parseval_theorem2(f, g, ctx)
    assert rep.details["residual_i_iii"] <= 1e-4
    assert rep.details["residual_i_ii"] <= 1e-4 + rep.tail_bound


def test_parseval_theorem2_bump_route_iii():
    ctx = Theorem2Context.build(BUMP, Q0, 0.5, RhoGrid(20.0, 0.05), h=2e-3)
    f = mat_bump(0.0, 0.5, [[1.0, 0.5], [0.25j, 1.0]])
    g = mat_bump(0.05, 0.45, [[0.3, 1.0], [1.0, 0.5j]])
    rep = parseval_theorem2(f, g, ctx)
    assert rep.details["residual_i_iii"] <= 1e-4
    assert rep.details["round_trip_F"] <= 1e-7
    twice = parseval_theorem2(2 * f, g, ctx)
    assert np.max(np.abs(twice.details["route_iii"] - 2 * rep.details["route_iii"])) <= 1e-12
    with pytest.raises(ValueError):
        parseval_theorem2(mat_bump(0.0, 0.9, E), g, ctx)


def test_expand_free_bump():
    f = mat_bump(0.0, 1.0, [[1.0, 0.5], [0.0, 1.0]])
    rep, rec = expand_free(f, Q0)
    assert rep.residual <= 1e-3 and rep.details["forms_gap"] <= 1e-4
    assert rec.target.shape == rec.forms[0].shape


def test_expand_zero_and_dispatch():
    rep, rec = expand(TestFunction.zero((2,)), "theorem1", P=ZERO, mu=0.0, grid=SMALL)
    assert np.max(np.abs(rec.forms[0])) == 0 and np.max(np.abs(rec.forms[1])) == 0
    with pytest.raises(ValueError):
        expand(TestFunction.zero((2,)), "bogus")


def test_expand_theorem1_free_bump():
    f = TestFunction.bump(0.0, 1.0, np.array([1.0, 0.5j]))
    rep, _ = expand_theorem1(f, ZERO, 0.0, h=5e-3, x=np.linspace(0, 1, 201))
    assert rep.residual <= 1e-3 and rep.details["forms_gap"] <= 1e-4
