"""Transformation kernels K(P1, P2; Q) via characteristics.

Write K through the combinations

    L1 = K12 - K21,  L2 = K11 - K22,  L3 = K11 + K22,  L4 = K12 + K21

and use characteristic coordinates xi = (x + y)/2, eta = (x - y)/2.  The
kernel equation B K_x + K_y B + P2(x) K - K P1(y) = 0 becomes

    d/deta L_k = f_k  (k = 1, 2),    d/dxi L_k = f_k  (k = 3, 4),

with f = C(x, y) L and C = (A(P1(y)) + Bx(P2(x)))/2 given by the tables
``coeff_A`` and ``coeff_Bx``.  These tables were obtained by expanding
N = K P1 - P2 K symbolically; ``tests/test_kernel.py`` re-derives them with
sympy.  Data are L_{1,2} = r on the diagonal eta = 0 and the edge relation
L3 = sinh(2mu) L1 + cosh(2mu) L2, L4 = -cosh(2mu) L1 - sinh(2mu) L2 on y = 0.

The lattice has spacing h/2 in (xi, eta): node (a, b) sits at
x = (a + b) h/2, y = (a - b) h/2, with 0 <= b <= a and a + b <= 2N.
The x-grid point (x_i, y_j) is node (i + j, i - j).
"""

from dataclasses import dataclass, field
from math import lgamma, log

import numba
import numpy as np
from scipy.interpolate import CubicSpline

from .algebra import B, ProjectorQ, conj_transpose, validate_projector
from .errors import NoConvergence, RouteMismatch, StructureViolation, TraceRelationViolation
from .potential import PotentialSpec, adjoint_potential, r_matrix, r_matrix_derivative
from .solutions import make_grid

N_MAX = 200
TOL = 1e-10
STRUCT_TOL = 1e-9


# ------------------------------------------------------------- coefficient tables


def coeff_A(p):
    """Coefficients of L in 2 (K P1)-part of f; p = P1(y), shape (..., 2, 2)."""
    p11, p12, p21, p22 = p[..., 0, 0], p[..., 0, 1], p[..., 1, 0], p[..., 1, 1]
    rows = [
        [-p12 - p21, -p11 - p22, -p11 + p22, p12 - p21],
        [-p11 - p22, -p12 - p21, -p12 + p21, p11 - p22],
        [-p11 + p22, p12 - p21, p12 + p21, p11 + p22],
        [-p12 + p21, p11 - p22, p11 + p22, p12 + p21],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def coeff_Bx(q):
    """Coefficients of L in 2 (-P2 K)-part of f; q = P2(x), shape (..., 2, 2)."""
    q11, q12, q21, q22 = q[..., 0, 0], q[..., 0, 1], q[..., 1, 0], q[..., 1, 1]
    rows = [
        [-q12 - q21, q11 + q22, q11 - q22, q12 - q21],
        [q11 + q22, -q12 - q21, q12 - q21, q11 - q22],
        [-q11 + q22, q12 - q21, -q12 - q21, -q11 - q22],
        [q12 - q21, -q11 + q22, -q11 - q22, -q12 - q21],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def k_to_l(K):
    K = np.asarray(K)
    k11, k12, k21, k22 = K[..., 0, 0], K[..., 0, 1], K[..., 1, 0], K[..., 1, 1]
    return np.stack([k12 - k21, k11 - k22, k11 + k22, k12 + k21], axis=-1)


def l_to_k(L):
    L = np.asarray(L)
    out = np.empty(L.shape[:-1] + (2, 2), dtype=complex)
    out[..., 0, 0] = 0.5 * (L[..., 2] + L[..., 1])
    out[..., 1, 1] = 0.5 * (L[..., 2] - L[..., 1])
    out[..., 0, 1] = 0.5 * (L[..., 3] + L[..., 0])
    out[..., 1, 0] = 0.5 * (L[..., 3] - L[..., 0])
    return out


# ------------------------------------------------------------- Goursat data


def boundary_mu(boundary):
    """Return (mu, sinh 2mu, cosh 2mu) from a complex mu or a projector Q.

    For Q the pivot column u of the rank-1 factorization is parallel to
    (cosh mu, sinh mu).  The mixing constants are computed rationally from u,
    and mu = log((u1 + u2)/(u1 - u2))/2 covers u1 = 0 as well, so no second
    parametrization is required.  u1^2 = u2^2 cannot occur for admissible Q.
    """
    if isinstance(boundary, ProjectorQ):
        s2, c2 = boundary.hyperbolic_2mu()
        return boundary.mu, s2, c2
    if np.ndim(boundary) == 2:
        return boundary_mu(validate_projector(boundary))
    mu = complex(boundary)
    return mu, complex(np.sinh(2 * mu)), complex(np.cosh(2 * mu))


@dataclass
class GoursatData:
    P1: PotentialSpec
    P2: PotentialSpec
    mu: complex
    sinh2mu: complex
    cosh2mu: complex
    X: float
    h: float
    N: int
    r: np.ndarray  # (2N + 1, 2): r1, r2 at xi = a h/2
    a_coef: np.ndarray  # (2N + 1, 4, 4): A(P1(y))/2 at y = k h/2
    b_coef: np.ndarray  # (2N + 1, 4, 4): Bx(P2(x))/2 at x = k h/2
    structure_residual: float

    @property
    def alpha(self):
        return (self.sinh2mu, -self.cosh2mu)

    @property
    def beta(self):
        return (self.cosh2mu, -self.sinh2mu)

    @property
    def omega(self):
        m = abs(self.sinh2mu) + abs(self.cosh2mu) + 1.0
        return m * float(np.max(np.abs(self.r[:, 0]) + np.abs(self.r[:, 1])))

    @property
    def zeta(self):
        m = abs(self.sinh2mu) + abs(self.cosh2mu) + 1.0
        s = np.linspace(0.0, self.X, 2 * self.N + 1)
        tot = np.sum(np.abs(self.P1(s)) + np.abs(self.P2(s)), axis=(-1, -2))
        return m * self.X * 0.5 * float(np.max(tot))

    def increment_bound(self, n):
        """omega zeta^(n-1)/(n-1)!, the bound on the n-th Picard increment."""
        if self.omega == 0.0:
            return 0.0
        if self.zeta == 0.0:
            return self.omega if n == 1 else 0.0
        return float(np.exp(log(self.omega) + (n - 1) * log(self.zeta) - lgamma(n)))

    def tail_bound(self, n):
        """Bound on the sum of all increments after iteration n."""
        tot, m = 0.0, n + 1
        while True:
            t = self.increment_bound(m)
            tot += t
            if t <= 1e-17 * max(tot, 1e-300) or m > n + 2000:
                return tot
            m += 1


def diagonal_matrix(P1, P2, x):
    """M = B R' + P2 R - R P1 at x."""
    return B @ r_matrix_derivative(P1, P2, x) + P2(x) @ r_matrix(P1, P2, x) - r_matrix(P1, P2, x) @ P1(x)


def derive_goursat_data(P1, P2, boundary, X, h=None):
    """Diagonal data, coefficient tables and edge constants on the lattice."""
    xgrid, h = make_grid(X, h)
    N = xgrid.size - 1
    mu, s2, c2 = boundary_mu(boundary)
    s = np.linspace(0.0, float(X), 2 * N + 1)
    M = diagonal_matrix(P1, P2, s)
    res = float(
        max(np.max(np.abs(M[:, 1, 1] + M[:, 0, 0])), np.max(np.abs(M[:, 1, 0] + M[:, 0, 1])))
    )
    if res > STRUCT_TOL:
        raise StructureViolation(f"diagonal matrix lacks the [[m, n], [-n, -m]] pattern (residual {res:.2e})")
    r = np.stack([M[:, 0, 0], M[:, 0, 1]], axis=-1)
    a_coef = 0.5 * coeff_A(P1(s))
    b_coef = 0.5 * coeff_Bx(P2(s))
    return GoursatData(P1, P2, mu, s2, c2, float(X), h, N, r, a_coef, b_coef, res)


# ------------------------------------------------------------- compiled solvers


@numba.njit(cache=True)
def _offsets(N):
    off = np.empty(2 * N + 2, dtype=np.int64)
    off[0] = 0
    for a in range(2 * N + 1):
        off[a + 1] = off[a] + min(a, 2 * N - a) + 1
    return off


@numba.njit(cache=True)
def _picard(r, ac, bc, s2, c2, dl, N, tol, nmax, tail):
    off = _offsets(N)
    L = np.zeros((off[2 * N + 1], 4), dtype=np.complex128)
    hist = np.zeros(nmax)
    f = np.empty((N + 1, 4), dtype=np.complex128)
    new = np.empty((N + 1, 4), dtype=np.complex128)
    acc = np.zeros((N + 1, 2), dtype=np.complex128)
    fprev = np.zeros((N + 1, 2), dtype=np.complex128)
    edge = np.zeros((N + 1, 2), dtype=np.complex128)
    hd = 0.5 * dl
    nit = 0
    for it in range(nmax):
        dmax = 0.0
        for a in range(2 * N + 1):
            bm = min(a, 2 * N - a)
            base = off[a]
            for b in range(bm + 1):
                for k in range(4):
                    s = 0j
                    for m in range(4):
                        s += (ac[a - b, k, m] + bc[a + b, k, m]) * L[base + b, m]
                    f[b, k] = s
            new[0, 0] = r[a, 0]
            new[0, 1] = r[a, 1]
            for b in range(1, bm + 1):
                for k in range(2):
                    new[b, k] = new[b - 1, k] + hd * (f[b - 1, k] + f[b, k])
            if bm == a:
                edge[a, 0] = s2 * new[a, 0] + c2 * new[a, 1]
                edge[a, 1] = -c2 * new[a, 0] - s2 * new[a, 1]
            for b in range(bm + 1):
                for k in range(2):
                    if b < a:
                        acc[b, k] += hd * (fprev[b, k] + f[b, 2 + k])
                    else:
                        acc[b, k] = 0j
                    fprev[b, k] = f[b, 2 + k]
                    new[b, 2 + k] = edge[b, k] + acc[b, k]
            for b in range(bm + 1):
                for k in range(4):
                    d = abs(new[b, k] - L[base + b, k])
                    if d > dmax:
                        dmax = d
                    L[base + b, k] = new[b, k]
        hist[it] = dmax
        nit = it + 1
        if dmax <= tol or tail[nit] <= tol:
            break
    return L, hist[:nit]


@numba.njit(cache=True)
def _solve_small(Am, rhs, n):
    # Gaussian elimination with partial pivoting on an n x n complex system.
    A = Am.copy()
    x = rhs.copy()
    for c in range(n):
        p = c
        for i in range(c + 1, n):
            if abs(A[i, c]) > abs(A[p, c]):
                p = i
        if p != c:
            for j in range(n):
                A[c, j], A[p, j] = A[p, j], A[c, j]
            x[c], x[p] = x[p], x[c]
        for i in range(c + 1, n):
            m = A[i, c] / A[c, c]
            for j in range(c, n):
                A[i, j] -= m * A[c, j]
            x[i] -= m * x[c]
    for i in range(n - 1, -1, -1):
        s = x[i]
        for j in range(i + 1, n):
            s -= A[i, j] * x[j]
        x[i] = s / A[i, i]
    return x


@numba.njit(cache=True)
def _march(r, ac, bc, s2, c2, dl, N):
    """Direct solve of the same trapezoid equations, node by node."""
    off = _offsets(N)
    L = np.zeros((off[2 * N + 1], 4), dtype=np.complex128)
    F = np.zeros((off[2 * N + 1], 4), dtype=np.complex128)
    hd = 0.5 * dl
    C = np.empty((4, 4), dtype=np.complex128)
    M4 = np.empty((4, 4), dtype=np.complex128)
    M2 = np.empty((2, 2), dtype=np.complex128)
    v4 = np.empty(4, dtype=np.complex128)
    v2 = np.empty(2, dtype=np.complex128)
    T = np.array([[s2, c2], [-c2, -s2]])
    for a in range(2 * N + 1):
        bm = min(a, 2 * N - a)
        for b in range(bm + 1):
            idx = off[a] + b
            for k in range(4):
                for m in range(4):
                    C[k, m] = ac[a - b, k, m] + bc[a + b, k, m]
            if b == 0 and a == 0:
                L[idx, 0] = r[0, 0]
                L[idx, 1] = r[0, 1]
                L[idx, 2] = s2 * r[0, 0] + c2 * r[0, 1]
                L[idx, 3] = -c2 * r[0, 0] - s2 * r[0, 1]
            elif b == a:
                # edge node: L12 from the column, L34 = T L12
                prev = off[a] + b - 1
                for k in range(2):
                    v2[k] = L[prev, k] + hd * F[prev, k]
                    for m in range(2):
                        M2[k, m] = -hd * (C[k, m] + C[k, 2] * T[0, m] + C[k, 3] * T[1, m])
                    M2[k, k] += 1.0
                sol = _solve_small(M2, v2, 2)
                L[idx, 0] = sol[0]
                L[idx, 1] = sol[1]
                L[idx, 2] = T[0, 0] * sol[0] + T[0, 1] * sol[1]
                L[idx, 3] = T[1, 0] * sol[0] + T[1, 1] * sol[1]
            else:
                left = off[a - 1] + b
                for k in range(4):
                    for m in range(4):
                        M4[k, m] = 0j
                if b == 0:
                    # diagonal node: L12 known, solve for L34
                    L[idx, 0] = r[a, 0]
                    L[idx, 1] = r[a, 1]
                    for k in range(2):
                        v2[k] = L[left, 2 + k] + hd * F[left, 2 + k]
                        v2[k] += hd * (C[2 + k, 0] * r[a, 0] + C[2 + k, 1] * r[a, 1])
                        for m in range(2):
                            M2[k, m] = -hd * C[2 + k, 2 + m]
                        M2[k, k] += 1.0
                    sol = _solve_small(M2, v2, 2)
                    L[idx, 2] = sol[0]
                    L[idx, 3] = sol[1]
                else:
                    prev = off[a] + b - 1
                    for k in range(4):
                        if k < 2:
                            v4[k] = L[prev, k] + hd * F[prev, k]
                        else:
                            v4[k] = L[left, k] + hd * F[left, k]
                        for m in range(4):
                            M4[k, m] = -hd * C[k, m]
                        M4[k, k] += 1.0
                    sol = _solve_small(M4, v4, 4)
                    for k in range(4):
                        L[idx, k] = sol[k]
            for k in range(4):
                s = 0j
                for m in range(4):
                    s += C[k, m] * L[idx, m]
                F[idx, k] = s
    return L


# ------------------------------------------------------------- kernel field


@dataclass
class KernelField:
    """Solved kernel on the characteristic lattice."""

    data: GoursatData
    L: np.ndarray
    offsets: np.ndarray
    iterations: int
    delta: float
    history: np.ndarray
    method: str = "picard"
    meta: dict = field(default_factory=dict)

    @property
    def N(self):
        return self.data.N

    @property
    def h(self):
        return self.data.h

    @property
    def xgrid(self):
        return np.linspace(0.0, self.data.X, self.N + 1)

    def lattice_index(self, a, b):
        return self.offsets[np.asarray(a)] + np.asarray(b)

    def grid_index(self, i, j):
        """Packed index of the x-grid node (x_i, y_j), j <= i."""
        i, j = np.asarray(i), np.asarray(j)
        if np.any(j > i) or np.any(i > self.N) or np.any(j < 0):
            raise IndexError("need 0 <= j <= i <= N")
        return self.lattice_index(i + j, i - j)

    def K(self, i, j):
        """K(x_i, y_j) on x-grid indices (broadcasting)."""
        return l_to_k(self.L[self.grid_index(i, j)])

    def row(self, i):
        """K(x_i, y_j) for j = 0..i."""
        j = np.arange(i + 1)
        return self.K(np.full_like(j, i), j)

    def trace(self):
        """K(x_i, 0) for i = 0..N."""
        i = np.arange(self.N + 1)
        return self.K(i, np.zeros_like(i))

    def diagonal(self):
        i = np.arange(self.N + 1)
        return self.K(i, i)

    def full(self):
        """Dense K(x_i, y_j) with zeros for j > i; shape (N+1, N+1, 2, 2)."""
        n = self.N + 1
        out = np.zeros((n, n, 2, 2), dtype=complex)
        ii, jj = np.tril_indices(n)
        out[ii, jj] = self.K(ii, jj)
        return out

    def sup_norm(self):
        return float(np.max(np.abs(l_to_k(self.L)))) if self.L.size else 0.0

    def lattice_coords(self):
        """(x, y) of every packed lattice node."""
        N = self.N
        a = np.repeat(np.arange(2 * N + 1), np.diff(self.offsets))
        b = np.arange(self.L.shape[0]) - self.offsets[a]
        dl = 0.5 * self.h
        return (a + b) * dl, (a - b) * dl

    def diagonal_residual(self):
        """max |L_{1,2}(x, x) - r(x)| over lattice diagonal nodes."""
        idx = self.offsets[: 2 * self.N + 1]
        return float(np.max(np.abs(self.L[idx, :2] - self.data.r)))

    def edge_residual(self):
        a = np.arange(self.N + 1)
        l = self.L[self.lattice_index(a, a)]
        s2, c2 = self.data.sinh2mu, self.data.cosh2mu
        r3 = l[:, 2] - (s2 * l[:, 0] + c2 * l[:, 1])
        r4 = l[:, 3] - (-c2 * l[:, 0] - s2 * l[:, 1])
        return float(max(np.max(np.abs(r3)), np.max(np.abs(r4))))


def solve_kernel(P1, P2, boundary, X, h=None, tol=TOL, n_max=N_MAX, method="picard"):
    """Solve for K(P1, P2; boundary) on the triangle 0 <= y <= x <= X.

    ``boundary`` is mu (complex), a ProjectorQ, or a 2x2 matrix that is
    validated as a projector.  ``method='march'`` solves the same discrete
    equations directly instead of iterating.
    """
    if isinstance(boundary, np.ndarray) and boundary.ndim == 2:
        boundary = validate_projector(boundary)
    data = derive_goursat_data(P1, P2, boundary, X, h)
    N = data.N
    r = np.ascontiguousarray(data.r)
    ac = np.ascontiguousarray(data.a_coef)
    bc = np.ascontiguousarray(data.b_coef)
    dl = 0.5 * data.h
    off = _offsets(N)
    if method == "picard":
        tail = np.array([data.tail_bound(n) for n in range(n_max + 1)])
        L, hist = _picard(r, ac, bc, data.sinh2mu, data.cosh2mu, dl, N, tol, n_max, tail)
        n = hist.size
        delta = float(hist[-1])
        if delta > tol and tail[n] > tol:
            raise NoConvergence(f"no convergence after {n} sweeps (delta {delta:.2e})")
    elif method == "march":
        L = _march(r, ac, bc, data.sinh2mu, data.cosh2mu, dl, N)
        hist, n, delta = np.zeros(0), 0, 0.0
    else:
        raise ValueError("method must be 'picard' or 'march'")
    return KernelField(data, L, off, n, delta, hist, method)


# ------------------------------------------------------------- traces


@dataclass
class TraceFunctions:
    """J(x) = conj(K_tilde(x, 0))^T and L(y) = K(y, 0) on the x-grid."""

    xgrid: np.ndarray
    J_nodes: np.ndarray
    L_nodes: np.ndarray
    Q: ProjectorQ
    residuals: dict = field(default_factory=dict)

    def __post_init__(self):
        self._J = _spline(self.xgrid, self.J_nodes)
        self._L = _spline(self.xgrid, self.L_nodes)

    def J(self, x):
        return self._J(x)

    def L(self, y):
        return self._L(y)


def _spline(x, vals):
    flat = vals.reshape(vals.shape[0], -1)
    re, im = CubicSpline(x, flat.real), CubicSpline(x, flat.imag)

    def ev(t):
        t = np.asarray(t, dtype=float)
        return (re(t) + 1j * im(t)).reshape(t.shape + vals.shape[1:])

    return ev


def trace_relation_residual(J, L):
    return float(np.max(np.abs((J - B @ J @ B) - (L - B @ L @ B))))


def boundary_traces(P, Q, X, h=None, tol=TOL, method="picard", return_kernels=False):
    """Solve K(P, 0; Q) and K(-P^*, 0; Q^*) and extract their traces at y = 0."""
    if not isinstance(Q, ProjectorQ):
        Q = validate_projector(Q)
    Qs = Q.conj_transpose()
    zero = PotentialSpec.zero()
    K = solve_kernel(P, zero, Q, X, h, tol, method=method)
    Kt = solve_kernel(adjoint_potential(P), zero, Qs, X, h, tol, method=method)
    L = K.trace()
    J = conj_transpose(Kt.trace())
    q = Q.q
    res = {
        "QJ-J": float(np.max(np.abs(q @ J - J))),
        "LQ-L": float(np.max(np.abs(L @ q - L))),
        "trace_relation": trace_relation_residual(J, L),
    }
    if res["trace_relation"] > 1e-6:
        raise TraceRelationViolation(f"J - BJB != L - BLB (residual {res['trace_relation']:.2e})")
    tr = TraceFunctions(K.xgrid, J, L, Q, res)
    return (tr, K, Kt) if return_kernels else tr


# ------------------------------------------------------------- the two-variable kernel


def _grid_pos(K, x):
    i = np.rint(np.asarray(x) / K.h).astype(int)
    if np.any(np.abs(i * K.h - np.asarray(x)) > 1e-9) or np.any(i > K.N) or np.any(i < 0):
        raise ValueError("route A needs points on the kernel x-grid")
    return i


def _trap(vals, h):
    """Trapezoid along axis 0; zero for a single node."""
    if vals.shape[0] < 2:
        return np.zeros(vals.shape[1:], dtype=complex)
    return h * (vals.sum(axis=0) - 0.5 * (vals[0] + vals[-1]))


def frak_route_a(K, Kt, x, y):
    """The integral definition of the two-variable kernel at one grid point."""
    i, j = int(_grid_pos(K, x)), int(_grid_pos(K, y))
    zero = PotentialSpec.zero()
    P = K.data.P1
    m = min(i, j)
    t = np.arange(m + 1)
    Kts = conj_transpose(Kt.K(np.full_like(t, i), t))  # K_tilde^*(x, t)
    Ky = K.K(np.full_like(t, j), t)  # K(y, t)
    integral = _trap(Ky @ Kts, K.h)
    if j <= i:
        return r_matrix(P, zero, y) @ Kts[j] + integral
    return K.K(j, i) @ r_matrix(zero, P, x) + integral


def frak_route_b(traces, x, y):
    """Closed piecewise form built from the traces (vectorized over x, y)."""
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    lower = y <= x
    out = np.empty(x.shape + (2, 2), dtype=complex)
    if np.any(lower):
        s, d = x[lower] + y[lower], x[lower] - y[lower]
        Js, Jd = traces.J(s), traces.J(d)
        out[lower] = 0.5 * (Js + Jd) - 0.5 * B @ (Js - Jd) @ B
    if np.any(~lower):
        s, d = x[~lower] + y[~lower], y[~lower] - x[~lower]
        Ls, Ld = traces.L(s), traces.L(d)
        out[~lower] = 0.5 * (Ls + Ld) - 0.5 * B @ (Ls - Ld) @ B
    return out


def frak_route_b_nodes(traces, i, j):
    """Route B at x-grid indices, reading the traces at nodes only."""
    i, j = np.broadcast_arrays(np.asarray(i), np.asarray(j))
    J, L = traces.J_nodes, traces.L_nodes
    lower = j <= i
    out = np.empty(i.shape + (2, 2), dtype=complex)
    s, d = i + j, np.abs(i - j)
    if np.any(lower):
        Js, Jd = J[s[lower]], J[d[lower]]
        out[lower] = 0.5 * (Js + Jd) - 0.5 * B @ (Js - Jd) @ B
    if np.any(~lower):
        Ls, Ld = L[s[~lower]], L[d[~lower]]
        out[~lower] = 0.5 * (Ls + Ld) - 0.5 * B @ (Ls - Ld) @ B
    return out


def assemble_F(traces, kernels, x, y, tol=1e-5, check=True):
    """Return (route A, route B) values of the two-variable kernel at (x, y)."""
    K, Kt = kernels
    a = frak_route_a(K, Kt, x, y)
    b = frak_route_b(traces, x, y)
    if check and np.max(np.abs(a - b)) > tol:
        raise RouteMismatch(f"routes differ by {np.max(np.abs(a - b)):.2e} at ({x}, {y})", a, b)
    return a, b


# ------------------------------------------------------------- transformation formula


def transformation_residual(K, Q, rho, Kt=None, xmax=None):
    """Residuals of the transformation formulas on the kernel x-grid.

    Checks S_Q = R(P,0) phi + int_0^x K(x,y) phi(y) dy and, when the adjoint
    kernel is given, S~_Q = phi~ R(0,P) + int_0^x phi~(y) Kt^*(x,y) dy, where
    phi and phi~ start from Q and are integrated independently of the kernel.
    The y-integrals use the trapezoid rule on the kernel rows.  Returns the
    largest entrywise residual of each formula (None when Kt is omitted),
    taken over x <= xmax when given.
    """
    from .solutions import Sweeper, free_Q, free_Q_tilde

    q = Q.q if isinstance(Q, ProjectorQ) else np.asarray(Q, dtype=complex)
    P = K.data.P1
    zero = PotentialSpec.zero()
    x, h = K.xgrid, K.h
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    lam = 1j * rho
    phi = Sweeper("phi", P, q, K.data.X, h)(lam)
    S = free_Q(x, rho, q)
    lhs = r_matrix(P, zero, x)[None] @ phi
    if Kt is not None:
        phit = Sweeper("phi_tilde", P, q, K.data.X, h)(lam)
        St = free_Q_tilde(x, rho, q)
        lhs_t = phit @ r_matrix(zero, P, x)[None]
    nr = rho.size
    # (j, b, r, c) layouts turn each row integral into one matrix product
    phi_t = np.ascontiguousarray(phi.transpose(1, 2, 0, 3)).reshape(-1, 2 * nr)
    if Kt is not None:
        phit_t = np.ascontiguousarray(phit.transpose(0, 2, 1, 3)).reshape(nr * 2, -1)
    n = K.N if xmax is None else min(K.N, int(np.floor(xmax / h + 1e-9)))
    for i in range(1, n + 1):
        w = np.full(i + 1, h)
        w[0] = w[-1] = 0.5 * h
        row = K.row(i) * w[:, None, None]
        m = row.transpose(1, 0, 2).reshape(2, -1) @ phi_t[: 2 * (i + 1)]
        lhs[:, i] += m.reshape(2, nr, 2).transpose(1, 0, 2)
        if Kt is not None:
            rowt = conj_transpose(Kt.row(i)) * w[:, None, None]
            mt = phit_t.reshape(nr * 2, -1, 2)[:, : i + 1].reshape(nr * 2, -1) @ rowt.reshape(-1, 2)
            lhs_t[:, i] += mt.reshape(nr, 2, 2)
    sl = slice(0, n + 1)
    res = float(np.max(np.abs(S[:, sl] - lhs[:, sl])))
    res_t = float(np.max(np.abs(St[:, sl] - lhs_t[:, sl]))) if Kt is not None else None
    return res, res_t
