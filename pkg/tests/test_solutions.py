import numpy as np
import pytest

from specfun.algebra import E, conj_transpose, mu_matrix
from specfun.errors import InverseDrift, StepTooLarge
from specfun.potential import GaussianBump, PotentialSpec, adjoint_potential
from specfun.solutions import (
    Sweeper,
    commuting_phi,
    commuting_psi,
    free_inverse,
    free_Q,
    free_Q_tilde,
    free_solution,
    integrate_phi,
    integrate_phi_tilde,
    inverse_solution,
    make_grid,
)

Q0 = np.diag([1.0, 0.0]).astype(complex)
ZERO = PotentialSpec.zero()
COMM = PotentialSpec.commuting(GaussianBump(0.3, 0.5, 0.15), GaussianBump(0.2, 0.5, 0.15))
GEN = PotentialSpec(GaussianBump(0.2 + 0.1j, 0.4, 0.2), GaussianBump(-0.3j, 0.6, 0.2), GaussianBump(0.5, 1.0, 0.3), 0.05)


def test_free_solution_examples():
    rho = np.array([-3.0, 0.0, 1.0, 7.5])
    assert np.allclose(free_solution(0.0, rho, 0.0), E, atol=0)
    assert np.allclose(free_solution(np.pi / 2, 1.0, 0.0), [[0, 1j], [1j, 0]], atol=1e-15)
    x = np.linspace(0, 2, 9)
    fq = free_Q(x, 2.0, Q0)
    ref = np.zeros((9, 2, 2), dtype=complex)
    ref[:, 0, 0] = np.cos(2 * x)
    ref[:, 1, 0] = 1j * np.sin(2 * x)
    assert np.allclose(fq, ref, atol=1e-15)
    # inverse flips the off-diagonal sign
    assert np.allclose(free_inverse(x, 2.0, 0.3) @ free_solution(x, 2.0, 0.3), E, atol=1e-14)


def test_free_solution_boundary_matches_mu_matrix():
    mu = 0.4 + 0.1j
    assert np.allclose(free_solution(0.0, 5.0, -1j * mu), mu_matrix(mu), atol=1e-15)


def test_make_grid():
    x, h = make_grid(2.0, 1e-3)
    assert x.size == 2001 and h == 1e-3 and x[-1] == 2.0
    x, h = make_grid(3.0)
    assert h == 3e-3
    with pytest.raises(ValueError):
        make_grid(1.0, 0.3)


def test_phi_free_case():
    sol = integrate_phi(ZERO, E, 1j, 2.0, 1e-3)
    assert sol.side == "phi" and np.array_equal(sol.values[0], E)
    assert np.max(np.abs(sol.values - free_solution(sol.xgrid, 1.0))) <= 1e-9


def test_phi_constant_at_zero_lambda():
    sol = integrate_phi(ZERO, Q0, 0.0, 2.0, 1e-2)
    assert np.max(np.abs(sol.values - Q0)) == 0
    solt = integrate_phi_tilde(ZERO, Q0, 0.0, 2.0, 1e-2)
    assert np.max(np.abs(solt.values - Q0)) == 0


def test_phi_commuting_closed_form():
    mu = 0.2
    rho = np.array([-10.0, -2.5, 0.0, 2.5, 10.0])
    sw = Sweeper("phi", COMM, mu_matrix(mu), 2.0, 1e-3)
    ref = commuting_phi(COMM, mu, sw.xgrid, rho)
    assert np.max(np.abs(sw(1j * rho) - ref)) <= 1e-8


def test_phi_tilde_free_case():
    rho = np.array([-4.0, 0.5, 3.0])
    sw = Sweeper("phi_tilde", ZERO, Q0, 2.0, 1e-3)
    assert np.max(np.abs(sw(1j * rho) - free_Q_tilde(sw.xgrid, rho, Q0))) <= 1e-9
    # S(x, i rho) for Q matches free_Q with a phi sweep from Q
    sw2 = Sweeper("phi", ZERO, Q0, 2.0, 1e-3)
    assert np.max(np.abs(sw2(1j * rho) - free_Q(sw2.xgrid, rho, Q0))) <= 1e-9


def test_phi_tilde_conjugate_transpose_route():
    # conj(phi~^T) solves the phi-problem with -conj(P^T) at -conj(lam), started from conj(Q^T)
    q = 0.5 * np.array([[1 + np.cosh(0.5), np.sinh(0.5)], [-np.sinh(0.5), 1 - np.cosh(0.5)]])
    lam = 0.3 + 2.0j
    pt = integrate_phi_tilde(GEN, q, lam, 2.0, 1e-3)
    ph = integrate_phi(adjoint_potential(GEN), conj_transpose(q), -np.conj(lam), 2.0, 1e-3)
    assert np.max(np.abs(conj_transpose(pt.values) - ph.values)) <= 1e-8


def test_inverse_solution():
    psi = inverse_solution(ZERO, 0.0, 3j, 2.0, 1e-3)
    assert psi.side == "psi_inverse"
    assert np.max(np.abs(psi.values - free_inverse(psi.xgrid, 3.0))) <= 1e-9
    mu = 0.25
    psi = inverse_solution(COMM, mu, 5j, 2.0, 1e-3)
    assert np.max(np.abs(psi.values - commuting_psi(COMM, mu, psi.xgrid, 5.0))) <= 1e-8
    for lam in (0.0, 5j, -3.0 + 2j):
        g = inverse_solution(GEN, mu, lam, 2.0, 1e-3)
        assert g.meta["product_residual"] <= 1e-8


def test_inverse_solution_at_zero_length():
    mu = 0.3 + 0.2j
    psi = inverse_solution(GEN, mu, 4j, 0.0, 1e-3)
    assert psi.values.shape == (1, 2, 2)
    assert np.allclose(psi.values[0], np.linalg.inv(mu_matrix(mu)), atol=1e-15)


def test_coarse_inverse_is_rejected():
    # the step check fires before the phi psi = E check can drift
    with pytest.raises((StepTooLarge, InverseDrift)):
        inverse_solution(GEN, 0.0, 40j, 2.0, 0.25, scheme="rk4")


def test_step_budget():
    sw = Sweeper("phi", GEN, E, 2.0, 0.05, scheme="rk4")
    with pytest.raises(StepTooLarge):
        sw.checked([30j])
    with pytest.raises(ValueError):
        Sweeper("phi", GEN, E, 2.0, 0.05, scheme="euler")


def test_magnus_is_exact_for_constant_potential():
    P = PotentialSpec.constant([[0.3, 0.1j], [0.5, -0.2]])
    M = mu_matrix(0.1)
    lam = 2.0j
    sw = Sweeper("phi", P, M, 1.0, 0.1)
    A = np.array([[0, 1], [1, 0]]) @ (lam * E - P(0.0))
    w, V = np.linalg.eig(A)
    ref = np.array([V @ np.diag(np.exp(w * x)) @ np.linalg.inv(V) @ M for x in sw.xgrid])
    assert np.max(np.abs(sw([lam])[0] - ref)) <= 1e-12


@pytest.mark.parametrize("scheme", ["magnus4", "rk4"])
def test_fourth_order_convergence(scheme):
    lam = [3j]
    errs = []
    ref = Sweeper("phi", GEN, E, 1.0, 1e-3, scheme)(lam)[0, -1]
    for h in (0.04, 0.02):
        errs.append(np.max(np.abs(Sweeper("phi", GEN, E, 1.0, h, scheme)(lam)[0, -1] - ref)))
    assert 12 < errs[0] / errs[1] < 20


def test_entire_in_lambda():
    # mean over a circle equals the centre value (discrete Cauchy formula)
    sw = Sweeper("phi", GEN, mu_matrix(0.2), 1.0, 1e-3)
    centre = 0.5 + 2.0j
    lams = centre + 0.5 * np.exp(2j * np.pi * np.arange(64) / 64)
    vals = sw(lams)[:, -1]
    assert np.max(np.abs(vals.mean(axis=0) - sw([centre])[0, -1])) <= 1e-7


def test_orientation_and_batching():
    sw = Sweeper("phi_tilde", GEN, Q0, 1.0, 1e-2)
    lams = np.array([1j, -2j, 0.5])
    batch = sw(lams)
    single = np.stack([sw([lam])[0] for lam in lams])
    assert np.array_equal(batch, single)
    assert np.allclose(batch[:, 0], Q0, atol=0)
    assert np.array_equal(np.swapaxes(sw.raw(lams), -1, -2), batch)
