import numpy as np
import pytest
import sympy as sp

from specfun.algebra import B, E, mu_matrix, validate_projector
from specfun.errors import NoConvergence, RouteMismatch
from specfun.kernel import (
    assemble_F,
    boundary_traces,
    coeff_A,
    coeff_Bx,
    derive_goursat_data,
    diagonal_matrix,
    frak_route_a,
    frak_route_b,
    frak_route_b_nodes,
    k_to_l,
    l_to_k,
    solve_kernel,
    transformation_residual,
)
from specfun.potential import GaussianBump, Polynomial, PotentialSpec, r_matrix
from specfun.solutions import Sweeper

ZERO = PotentialSpec.zero()
Q0 = validate_projector(np.diag([1.0, 0.0]))
BUMP = PotentialSpec(p21=GaussianBump(0.5, 1.0, 0.3))


@pytest.fixture(scope="module")
def bump_traces():
    # coarse grid keeps this fixture cheap; accuracy checks use their own solves
    return boundary_traces(BUMP, Q0, 2.0, 2e-3, return_kernels=True)


def test_coefficient_tables_match_symbolic_expansion():
    # f_k are the L-combinations of N = K P1 - P2 K; re-derive and compare entrywise
    L = sp.symbols("L1:5")
    p = sp.symbols("p11 p12 p21 p22")
    q = sp.symbols("q11 q12 q21 q22")
    P1 = sp.Matrix([[p[0], p[1]], [p[2], p[3]]])
    P2 = sp.Matrix([[q[0], q[1]], [q[2], q[3]]])
    K = sp.Matrix([[(L[2] + L[1]) / 2, (L[3] + L[0]) / 2], [(L[3] - L[0]) / 2, (L[2] - L[1]) / 2]])
    N = K * P1 - P2 * K
    f = [N[1, 1] - N[0, 0], N[1, 0] - N[0, 1], N[1, 0] + N[0, 1], N[0, 0] + N[1, 1]]
    rng = np.random.default_rng(7)
    pv = rng.normal(size=4) + 1j * rng.normal(size=4)
    qv = rng.normal(size=4) + 1j * rng.normal(size=4)
    A = coeff_A(pv.reshape(2, 2))
    Bx = coeff_Bx(qv.reshape(2, 2))
    subs = dict(zip(p, pv)) | dict(zip(q, qv))
    for k in range(4):
        e = sp.expand(2 * f[k])
        for m in range(4):
            c = complex(e.coeff(L[m]).subs(subs))
            assert abs(c - (A[k, m] + Bx[k, m])) < 1e-12
            # the split between P1 and P2 parts is also fixed
            cp = complex(e.coeff(L[m]).subs({s: 0 for s in q}).subs(subs))
            assert abs(cp - A[k, m]) < 1e-12


def test_k_l_roundtrip():
    K = np.random.default_rng(1).normal(size=(5, 2, 2)) + 0j
    assert np.allclose(l_to_k(k_to_l(K)), K, atol=1e-15)
    # K B - B K has the [[L1, L2], [-L2, -L1]] form
    L = k_to_l(K)
    M = K @ B - B @ K
    assert np.allclose(M[:, 0, 0], L[:, 0]) and np.allclose(M[:, 0, 1], L[:, 1])


def test_goursat_data_examples():
    d = derive_goursat_data(BUMP, BUMP, 0.3, 1.0, 1e-2)
    assert np.max(np.abs(d.r)) == 0
    comm = PotentialSpec.commuting(GaussianBump(0.3, 0.5, 0.2), 0.1)
    assert np.max(np.abs(diagonal_matrix(comm, ZERO, np.linspace(0, 2, 21)))) < 1e-15
    # p21 = x, P2 = 0: R = exp(x^2/4) E, so M = exp(x^2/4) [[0, x/2], [-x/2, 0]]
    lin = PotentialSpec(p21=Polynomial((0.0, 1.0)))
    d = derive_goursat_data(lin, ZERO, 0.0, 1.0, 0.1)
    s = np.linspace(0, 1, 21)
    assert np.max(np.abs(d.r[:, 0])) < 1e-15
    assert np.max(np.abs(d.r[:, 1] - 0.5 * s * np.exp(s * s / 4))) < 1e-14
    assert d.structure_residual < 1e-14


def test_zero_potentials_give_zero_kernel():
    K = solve_kernel(ZERO, ZERO, 0.7, 1.0, 1e-2)
    assert K.sup_norm() == 0 and K.iterations == 1


def test_commuting_kernel_vanishes():
    P1 = PotentialSpec.commuting(GaussianBump(0.3, 0.5, 0.15), GaussianBump(0.2, 0.5, 0.15))
    P2 = PotentialSpec.commuting(GaussianBump(-0.25 + 0.1j, 0.8, 0.2), 0.15)
    assert solve_kernel(P1, P2, 0.3, 2.0, 1e-3).sup_norm() <= 1e-8


def test_transformation_formula_bump():
    K = solve_kernel(BUMP, ZERO, Q0, 2.0, 1e-3)
    rho = np.linspace(-10, 10, 21)
    res, _ = transformation_residual(K, Q0, rho)
    assert res <= 5e-6


def _transform_gap(P1, P2, boundary, start, X=1.5, h=1e-3):
    K = solve_kernel(P1, P2, boundary, X, h)
    lam = 1j * np.array([-6.0, 0.0, 4.0])
    sw1 = Sweeper("phi", P1, start, X, h)
    phi1, phi2 = sw1(lam), Sweeper("phi", P2, start, X, h)(lam)
    x = sw1.xgrid
    worst = np.zeros(2)
    for i in range(1, x.size, 25):
        w = np.full(i + 1, h)
        w[0] = w[-1] = h / 2
        integral = np.einsum("j,jab,rjbc->rac", w, K.row(i), phi1[:, : i + 1])
        rhs = r_matrix(P1, P2, x[i]) @ phi1[:, i] + integral
        worst = np.maximum(worst, np.max(np.abs(phi2[:, i] - rhs), axis=(0, 1)))
    return worst


TWO = (
    PotentialSpec(GaussianBump(0.2, 0.6, 0.2), 0, GaussianBump(0.4, 0.8, 0.3), 0),
    PotentialSpec(0, GaussianBump(-0.3j, 0.5, 0.25), 0, 0.1),
)


def test_transformation_formula_two_potentials():
    # phi_2 = R(P1, P2) phi_1 + int K phi_1 with both sides started from Q
    q = validate_projector(0.5 * (E + np.cosh(0.4) * np.diag([1.0, -1.0]) + np.sinh(0.4) * np.array([[0, 1], [-1, 0]])))
    assert np.max(_transform_gap(*TWO, q, q.q)) <= 5e-6


def test_mu_kernel_transforms_first_column():
    # from the mu-matrix only the (cosh mu, sinh mu) column is mapped; the
    # second column leaves a y = 0 boundary term unless K vanishes
    gap = _transform_gap(*TWO, 0.2, mu_matrix(0.2))
    assert gap[0] <= 5e-6 and gap[1] > 1e-3


def test_lattice_conditions(bump_traces):
    _, K, Kt = bump_traces
    for k in (K, Kt):
        assert k.diagonal_residual() <= 1e-12
        assert k.edge_residual() <= 1e-12
        assert k.delta <= 1e-10


def test_factorial_iteration_bound(bump_traces):
    _, K, _ = bump_traces
    d = K.data
    for n, delta in enumerate(K.history, start=1):
        assert delta <= d.increment_bound(n) * (1 + 1e-9) + 1e-15


def test_no_convergence():
    with pytest.raises(NoConvergence):
        solve_kernel(BUMP, ZERO, Q0, 2.0, 1e-2, tol=1e-14, n_max=2)


def test_traces_zero_and_commuting():
    for P in (ZERO, PotentialSpec.commuting(GaussianBump(0.4, 0.5, 0.2), 0.1)):
        tr = boundary_traces(P, Q0, 1.0, 1e-2)
        assert np.max(np.abs(tr.J_nodes)) <= 1e-12
        assert np.max(np.abs(tr.L_nodes)) <= 1e-12


def test_trace_identities(bump_traces):
    tr, _, _ = bump_traces
    q = Q0.q
    assert np.max(np.abs(q @ tr.J_nodes - tr.J_nodes)) <= 1e-8
    assert np.max(np.abs(tr.L_nodes @ q - tr.L_nodes)) <= 1e-8
    J, L = tr.J_nodes, tr.L_nodes
    assert np.max(np.abs((J - B @ J @ B) - (L - B @ L @ B))) <= 1e-7


def test_frak_routes(bump_traces):
    tr, K, Kt = bump_traces
    a, b = assemble_F(tr, (K, Kt), 1.2, 0.4)
    assert np.max(np.abs(a - b)) <= 1e-5
    # the node variant reads the same traces
    assert np.max(np.abs(frak_route_b_nodes(tr, 600, 200) - frak_route_b(tr, 1.2, 0.4))) < 1e-12


def test_frak_continuous_on_diagonal(bump_traces):
    tr, _, _ = bump_traces
    x = np.linspace(0.05, 0.95, 19)
    d = 1e-9
    below = frak_route_b(tr, x, x - d)
    above = frak_route_b(tr, x, x + d)
    assert np.max(np.abs(below - above)) <= 1e-7


def test_frak_zero_potential():
    tr, K, Kt = boundary_traces(ZERO, Q0, 1.0, 1e-2, return_kernels=True)
    assert np.max(np.abs(frak_route_a(K, Kt, 0.5, 0.2))) == 0
    assert np.max(np.abs(frak_route_b(tr, 0.5, 0.7))) == 0


def test_route_mismatch_reported(bump_traces):
    tr, K, Kt = bump_traces
    with pytest.raises(RouteMismatch) as err:
        assemble_F(tr, (K, Kt), 1.2, 0.4, tol=0.0)
    assert err.value.args


def test_edge_identity_K_times_Q():
    q = 0.5 * (E + np.cosh(0.5) * np.diag([1.0, -1.0]) + np.sinh(0.5) * np.array([[0, 1], [-1, 0]]))
    K = solve_kernel(BUMP, ZERO, q, 1.0, 2e-3)
    L = K.trace()
    assert np.max(np.abs(L @ q - L)) <= 1e-8


def test_kernel_pde_by_finite_differences():
    # B K_x + K_y B + P2(x) K - K P1(y) = 0 away from the lattice edges
    P1 = BUMP
    h = 1e-3
    K = solve_kernel(P1, ZERO, Q0, 1.0, h)
    worst = 0.0
    for i, j in [(600, 200), (800, 100), (500, 450), (900, 850)]:
        Kx = (K.K(i + 1, j) - K.K(i - 1, j)) / (2 * h)
        Ky = (K.K(i, j + 1) - K.K(i, j - 1)) / (2 * h)
        y = j * h
        worst = max(worst, np.max(np.abs(B @ Kx + Ky @ B - K.K(i, j) @ P1(y))))
    assert worst <= 1e-4
