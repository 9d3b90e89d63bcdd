"""Free solutions in closed form and numerical solutions of the matrix ODEs.

All three ODEs are written as ``Y' = (c0(x) + lam * c1) Y`` for a suitable
unknown Y:

* phi:        Y = phi,          c1 =  B, c0 = -B P
* phi_tilde:  Y = phi_tilde^T,  c1 = -B, c0 =  B P^T
* psi:        Y = psi^T,        c1 = -B, c0 =  P^T B      (psi = phi^{-1})

The default one-step scheme is the fourth-order Magnus integrator with two
Gauss points and a closed-form 2x2 exponential.  It is exact when P is
constant, so its error does not grow with |lam| the way classical RK4 does.
RK4 is kept as an option.
"""

from dataclasses import dataclass, field

import numba
import numpy as np

from .algebra import B, E, inv, mu_matrix
from .errors import InverseDrift, StepTooLarge
from .potential import PotentialSpec, r_matrix

STEP_BUDGET = 1e-10
SCHEMES = ("magnus4", "rk4")
_G = np.sqrt(3.0) / 6.0


# ---------------------------------------------------------------- closed forms


def _pack(c, s_off):
    out = np.empty(np.shape(c) + (2, 2), dtype=complex)
    out[..., 0, 0] = c
    out[..., 1, 1] = c
    out[..., 0, 1] = s_off
    out[..., 1, 0] = s_off
    return out


def free_solution(x, rho, nu=0.0):
    """S(x, i rho) = [[cos t, i sin t], [i sin t, cos t]] with t = rho x + nu."""
    t = np.multiply.outer(np.asarray(rho), np.asarray(x, dtype=float)) + nu
    return _pack(np.cos(t), 1j * np.sin(t))


def free_inverse(x, rho, nu=0.0):
    t = np.multiply.outer(np.asarray(rho), np.asarray(x, dtype=float)) + nu
    return _pack(np.cos(t), -1j * np.sin(t))


def free_Q(x, rho, Q):
    """Q cos(rho x) + i B Q sin(rho x)."""
    Q = np.asarray(getattr(Q, "q", Q), dtype=complex)
    t = np.multiply.outer(np.asarray(rho), np.asarray(x, dtype=float))
    return np.cos(t)[..., None, None] * Q + 1j * np.sin(t)[..., None, None] * (B @ Q)


def free_Q_tilde(x, rho, Q):
    """Q cos(rho x) - i Q B sin(rho x)."""
    Q = np.asarray(getattr(Q, "q", Q), dtype=complex)
    t = np.multiply.outer(np.asarray(rho), np.asarray(x, dtype=float))
    return np.cos(t)[..., None, None] * Q - 1j * np.sin(t)[..., None, None] * (Q @ B)


def commuting_phi(P, mu, x, rho):
    """phi = R(0, P)(x) S(x, i rho) for a potential with BP = PB."""
    z = PotentialSpec.zero()
    return r_matrix(z, P, x) @ free_solution(x, rho, -1j * mu)


def commuting_psi(P, mu, x, rho):
    """psi = S^{-1}(x, i rho) R(P, 0)(x) for a potential with BP = PB."""
    z = PotentialSpec.zero()
    return free_inverse(x, rho, -1j * mu) @ r_matrix(P, z, x)


# ---------------------------------------------------------------- grids


def make_grid(X, h=None):
    """Uniform grid on [0, X]; h must divide X."""
    X = float(X)
    if h is None:
        h = 1e-3 * max(1.0, X)
    if h <= 0:
        raise ValueError("h must be positive")
    n = int(round(X / h))
    if abs(n * h - X) > 1e-9 * max(1.0, X):
        raise ValueError(f"h={h} does not divide X={X}")
    return np.linspace(0.0, X, n + 1), X / n if n else h


@dataclass
class SolutionGrid:
    xgrid: np.ndarray
    values: np.ndarray
    lam: complex
    side: str
    h: float
    scheme: str = "magnus4"
    step_error: float = 0.0
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------- compiled engine


@numba.njit(cache=True)
def _mm(a, b, out):
    out[0, 0] = a[0, 0] * b[0, 0] + a[0, 1] * b[1, 0]
    out[0, 1] = a[0, 0] * b[0, 1] + a[0, 1] * b[1, 1]
    out[1, 0] = a[1, 0] * b[0, 0] + a[1, 1] * b[1, 0]
    out[1, 1] = a[1, 0] * b[0, 1] + a[1, 1] * b[1, 1]


@numba.njit(cache=True)
def _expm2(m, out):
    t = 0.5 * (m[0, 0] + m[1, 1])
    a = m[0, 0] - t
    d = m[1, 1] - t
    q2 = -(a * d - m[0, 1] * m[1, 0])
    if abs(q2) < 1e-8:
        ch = 1.0 + q2 / 2.0 + q2 * q2 / 24.0 + q2 * q2 * q2 / 720.0
        sh = 1.0 + q2 / 6.0 + q2 * q2 / 120.0 + q2 * q2 * q2 / 5040.0
    else:
        q = np.sqrt(q2)
        ch = np.cosh(q)
        sh = np.sinh(q) / q
    et = np.exp(t)
    out[0, 0] = et * (ch + sh * a)
    out[0, 1] = et * sh * m[0, 1]
    out[1, 0] = et * sh * m[1, 0]
    out[1, 1] = et * (ch + sh * d)


@numba.njit(cache=True)
def _magnus_step(a1, a2, h, y, out, w1, w2, w3):
    # Omega = h/2 (A1 + A2) + sqrt(3)/12 h^2 [A2, A1]
    _mm(a2, a1, w1)
    _mm(a1, a2, w2)
    c = np.sqrt(3.0) / 12.0 * h * h
    for i in range(2):
        for j in range(2):
            w3[i, j] = 0.5 * h * (a1[i, j] + a2[i, j]) + c * (w1[i, j] - w2[i, j])
    _expm2(w3, w1)
    _mm(w1, y, out)


@numba.njit(cache=True)
def _rk4_step(a0, am, a1, h, y, out, k1, k2, k3, k4, t):
    _mm(a0, y, k1)
    for i in range(2):
        for j in range(2):
            t[i, j] = y[i, j] + 0.5 * h * k1[i, j]
    _mm(am, t, k2)
    for i in range(2):
        for j in range(2):
            t[i, j] = y[i, j] + 0.5 * h * k2[i, j]
    _mm(am, t, k3)
    for i in range(2):
        for j in range(2):
            t[i, j] = y[i, j] + h * k3[i, j]
    _mm(a1, t, k4)
    for i in range(2):
        for j in range(2):
            out[i, j] = y[i, j] + h / 6.0 * (k1[i, j] + 2.0 * k2[i, j] + 2.0 * k3[i, j] + k4[i, j])


@numba.njit(cache=True)
def _expm2_scalar(m00, m01, m10, m11):
    # exp of a 2x2 matrix via exp(t +- q), where q^2 = -det(m - tE)
    t = 0.5 * (m00 + m11)
    a = m00 - t
    q2 = a * a + m01 * m10
    if abs(q2) < 1e-8:
        ch = 1.0 + q2 / 2.0 + q2 * q2 / 24.0 + q2 * q2 * q2 / 720.0
        sh = 1.0 + q2 / 6.0 + q2 * q2 / 120.0 + q2 * q2 * q2 / 5040.0
        et = np.exp(t)
        ch = et * ch
        sh = et * sh
    else:
        q = np.sqrt(q2)
        ep = np.exp(t + q)
        em = np.exp(t - q)
        ch = 0.5 * (ep + em)
        sh = 0.5 * (ep - em) / q
    return ch + sh * a, sh * m01, sh * m10, ch - sh * a


@numba.njit(cache=True)
def _propagate_magnus(c0s, c1, lams, y0, h, out):
    c = np.sqrt(3.0) / 12.0 * h * h
    for l in range(lams.shape[0]):
        lam = lams[l]
        b00 = lam * c1[0, 0]
        b01 = lam * c1[0, 1]
        b10 = lam * c1[1, 0]
        b11 = lam * c1[1, 1]
        y00, y01, y10, y11 = y0[l, 0, 0], y0[l, 0, 1], y0[l, 1, 0], y0[l, 1, 1]
        out[l, 0, 0, 0] = y00
        out[l, 0, 0, 1] = y01
        out[l, 0, 1, 0] = y10
        out[l, 0, 1, 1] = y11
        for n in range(c0s.shape[0]):
            p00 = c0s[n, 0, 0, 0] + b00
            p01 = c0s[n, 0, 0, 1] + b01
            p10 = c0s[n, 0, 1, 0] + b10
            p11 = c0s[n, 0, 1, 1] + b11
            q00 = c0s[n, 1, 0, 0] + b00
            q01 = c0s[n, 1, 0, 1] + b01
            q10 = c0s[n, 1, 1, 0] + b10
            q11 = c0s[n, 1, 1, 1] + b11
            # commutator [A2, A1] with A1 = p, A2 = q
            k00 = q01 * p10 - p01 * q10
            k01 = q00 * p01 + q01 * p11 - p00 * q01 - p01 * q11
            k10 = q10 * p00 + q11 * p10 - p10 * q00 - p11 * q10
            k11 = q10 * p01 - p10 * q01
            e00, e01, e10, e11 = _expm2_scalar(
                0.5 * h * (p00 + q00) + c * k00,
                0.5 * h * (p01 + q01) + c * k01,
                0.5 * h * (p10 + q10) + c * k10,
                0.5 * h * (p11 + q11) + c * k11,
            )
            y00, y01, y10, y11 = (
                e00 * y00 + e01 * y10,
                e00 * y01 + e01 * y11,
                e10 * y00 + e11 * y10,
                e10 * y01 + e11 * y11,
            )
            out[l, n + 1, 0, 0] = y00
            out[l, n + 1, 0, 1] = y01
            out[l, n + 1, 1, 0] = y10
            out[l, n + 1, 1, 1] = y11


@numba.njit(cache=True)
def _propagate(c0s, c1, lams, y0, h, scheme):
    """c0s has shape (nsteps, nstage, 2, 2): stage values of c0 per step."""
    nl = lams.shape[0]
    ns = c0s.shape[0]
    out = np.empty((nl, ns + 1, 2, 2), dtype=np.complex128)
    a = np.empty((3, 2, 2), dtype=np.complex128)
    w = np.empty((5, 2, 2), dtype=np.complex128)
    if scheme == 0:
        _propagate_magnus(c0s, c1, lams, y0, h, out)
        return out
    for l in range(nl):
        lam = lams[l]
        for i in range(2):
            for j in range(2):
                out[l, 0, i, j] = y0[l, i, j]
        for n in range(ns):
            for s in range(c0s.shape[1]):
                for i in range(2):
                    for j in range(2):
                        a[s, i, j] = c0s[n, s, i, j] + lam * c1[i, j]
            if scheme == 0:
                _magnus_step(a[0], a[1], h, out[l, n], out[l, n + 1], w[0], w[1], w[2])
            else:
                _rk4_step(a[0], a[1], a[2], h, out[l, n], out[l, n + 1], w[0], w[1], w[2], w[3], w[4])
    return out


@numba.njit(cache=True)
def _local_errors(c0s, c0s_half, c1, lam, ys, h, scheme):
    """Step-doubling estimate: one step of h versus two steps of h/2 from ys[n]."""
    ns = c0s.shape[0]
    err = np.empty(ns)
    a = np.empty((3, 2, 2), dtype=np.complex128)
    w = np.empty((5, 2, 2), dtype=np.complex128)
    y1 = np.empty((2, 2), dtype=np.complex128)
    ym = np.empty((2, 2), dtype=np.complex128)
    y2 = np.empty((2, 2), dtype=np.complex128)
    for n in range(ns):
        for s in range(c0s.shape[1]):
            for i in range(2):
                for j in range(2):
                    a[s, i, j] = c0s[n, s, i, j] + lam * c1[i, j]
        if scheme == 0:
            _magnus_step(a[0], a[1], h, ys[n], y1, w[0], w[1], w[2])
        else:
            _rk4_step(a[0], a[1], a[2], h, ys[n], y1, w[0], w[1], w[2], w[3], w[4])
        cur = ys[n]
        for half in range(2):
            for s in range(c0s.shape[1]):
                for i in range(2):
                    for j in range(2):
                        a[s, i, j] = c0s_half[2 * n + half, s, i, j] + lam * c1[i, j]
            if scheme == 0:
                _magnus_step(a[0], a[1], 0.5 * h, cur, ym if half == 0 else y2, w[0], w[1], w[2])
            else:
                _rk4_step(a[0], a[1], a[2], 0.5 * h, cur, ym if half == 0 else y2, w[0], w[1], w[2], w[3], w[4])
            cur = ym
        e = 0.0
        nrm = 0.0
        for i in range(2):
            for j in range(2):
                e = max(e, abs(y1[i, j] - y2[i, j]))
                nrm = max(nrm, abs(y2[i, j]))
        err[n] = e / (1.0 + nrm)
    return err


# ---------------------------------------------------------------- drivers


def _stage_points(xgrid, scheme):
    x0 = xgrid[:-1]
    h = xgrid[1] - xgrid[0] if xgrid.size > 1 else 0.0
    if scheme == "magnus4":
        return np.stack([x0 + (0.5 - _G) * h, x0 + (0.5 + _G) * h], axis=1)
    return np.stack([x0, x0 + 0.5 * h, x0 + h], axis=1)


def _coefficients(kind, P, pts):
    Pv = P(pts)
    Pt = np.swapaxes(Pv, -1, -2)
    if kind == "phi":
        return -B @ Pv, B
    if kind == "phi_tilde":
        return B @ Pt, -B
    if kind == "psi":
        return Pt @ B, -B
    raise ValueError(f"unknown solution kind {kind!r}")


def _orient(kind, Y):
    return Y if kind == "phi" else np.swapaxes(Y, -1, -2)


class Sweeper:
    """Integrates one kind of ODE for batches of spectral parameters.

    Potential samples at the stage points are computed once and reused for
    every batch of lam values.
    """

    def __init__(self, kind, P, init, X, h=None, scheme="magnus4"):
        if scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        self.kind, self.P, self.scheme = kind, P, scheme
        self.xgrid, self.h = make_grid(X, h)
        init = np.asarray(init, dtype=complex)
        self.y0 = init if kind == "phi" else np.swapaxes(init, -1, -2)
        pts = _stage_points(self.xgrid, scheme)
        c0, c1 = _coefficients(kind, P, pts)
        self.c0 = np.ascontiguousarray(c0)
        self.c1 = np.ascontiguousarray(c1)
        self._code = 0 if scheme == "magnus4" else 1

    def raw(self, lams):
        lams = np.atleast_1d(np.asarray(lams, dtype=complex))
        y0 = np.ascontiguousarray(np.broadcast_to(self.y0, lams.shape + (2, 2)))
        if self.xgrid.size == 1:
            return y0[:, None].copy()
        return _propagate(self.c0, self.c1, lams, y0, self.h, self._code)

    def __call__(self, lams):
        """Values in natural orientation, shape (len(lams), N + 1, 2, 2)."""
        return _orient(self.kind, self.raw(lams))

    def step_error(self, lams):
        """Worst step-doubling estimate over the given lam values."""
        if self.xgrid.size == 1:
            return 0.0
        lams = np.atleast_1d(np.asarray(lams, dtype=complex))
        fine = np.linspace(0.0, self.xgrid[-1], 2 * (self.xgrid.size - 1) + 1)
        c0h, _ = _coefficients(self.kind, self.P, _stage_points(fine, self.scheme))
        c0h = np.ascontiguousarray(c0h)
        worst = 0.0
        for lam in lams:
            ys = np.ascontiguousarray(self.raw([lam])[0])
            err = _local_errors(self.c0, c0h, self.c1, complex(lam), ys, self.h, self._code)
            worst = max(worst, float(err.max()))
        return worst

    def checked(self, lams, budget=STEP_BUDGET):
        """Integrate, then validate the step on the worst-case lam values."""
        lams = np.atleast_1d(np.asarray(lams, dtype=complex))
        vals = self(lams)
        probe = {int(np.argmax(np.abs(lams))), int(np.argmax(np.abs(lams.real)))}
        err = self.step_error(lams[sorted(probe)])
        if err > budget:
            raise StepTooLarge(f"step error {err:.2e} exceeds budget {budget:.1e} (h={self.h})")
        return vals, err


def _single(kind, P, init, lam, X, h, scheme, side):
    sw = Sweeper(kind, P, init, X, h, scheme)
    vals, err = sw.checked([lam])
    return SolutionGrid(sw.xgrid, vals[0], complex(lam), side, sw.h, scheme, err)


def integrate_phi(P, init, lam, X, h=None, scheme="magnus4"):
    """Solve B phi' + P phi = lam phi with phi(0) = init."""
    return _single("phi", P, init, lam, X, h, scheme, "phi")


def integrate_phi_tilde(P, Q, lam, X, h=None, scheme="magnus4"):
    """Solve -phi_tilde' B + phi_tilde P = lam phi_tilde with phi_tilde(0) = Q."""
    Q = np.asarray(getattr(Q, "q", Q), dtype=complex)
    return _single("phi_tilde", P, Q, lam, X, h, scheme, "phi_tilde")


def inverse_solution(P, mu, lam, X, h=None, scheme="magnus4", check=True):
    """Solve for psi = phi^{-1} through its own ODE psi' = psi B (P - lam).

    The product phi psi is compared with E at every node; the residual is
    stored in ``meta['product_residual']``.
    """
    M = mu_matrix(mu)
    g = _single("psi", P, inv(M), lam, X, h, scheme, "psi_inverse")
    if check:
        phi = integrate_phi(P, M, lam, X, h, scheme)
        res = float(np.max(np.abs(phi.values @ g.values - E)))
        g.meta["product_residual"] = res
        if res > 1e-6:
            raise InverseDrift(f"max |phi psi - E| = {res:.2e}")
    return g
