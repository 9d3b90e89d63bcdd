"""Spectral-side objects: transforms, regularized densities, and D(rho).

Solutions are factored as ``Y = exp(+-i rho x B) u`` with a slowly varying
u.  Writing exp(i t B) = Pi+ e^{it} + Pi- e^{-it} with Pi+- = (E +- B)/2,
every x-integral becomes a pair of Fourier integrals of slow functions,
which ``quadrature.fourier_weights`` evaluates (Simpson for small |rho|,
Filon above).
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.integrate import quad

from .algebra import B, E, ProjectorQ, mu_matrix
from .errors import DensityMismatch, QuadratureFailure
from .potential import PotentialSpec, r_matrix
from .quadrature import fourier_weights, trapezoid_weights
from .solutions import Sweeper

PI_P = 0.5 * (E + B)
PI_M = 0.5 * (E - B)
CHUNK = 256
KINDS = ("omega", "eta", "Phi", "PhiTilde", "Theta", "ThetaTilde", "Dn", "Density", "Un")


# ------------------------------------------------------------------ grids


@dataclass(frozen=True)
class RhoGrid:
    """Symmetric uniform grid on [-R, R] with step drho."""

    R: float = 200.0
    drho: float = 0.01

    def __post_init__(self):
        if self.R <= 0 or self.drho <= 0:
            raise ValueError("R and drho must be positive")
        m = self.R / self.drho
        if abs(m - round(m)) > 1e-6 * max(1.0, m):
            raise ValueError("drho must divide R")

    @property
    def M(self):
        return int(round(self.R / self.drho))

    @cached_property
    def nodes(self):
        return self.drho * np.arange(-self.M, self.M + 1)

    @property
    def weights(self):
        return trapezoid_weights(self.nodes.size, self.drho)

    def __len__(self):
        return self.nodes.size


@dataclass
class SpectralSamples:
    grid: RhoGrid
    values: np.ndarray
    kind: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")

    @property
    def rho(self):
        return self.grid.nodes

    def at(self, rho):
        i = int(round((rho + self.grid.R) / self.grid.drho))
        return self.values[i]


# ------------------------------------------------------------------ test functions


def _raw_bump(s):
    s = np.asarray(s, dtype=float)
    inside = (s > 0) & (s < 1)
    out = np.zeros_like(s)
    si = s[inside]
    out[inside] = np.exp(-1.0 / (si * (1.0 - si)))
    return out


@dataclass(frozen=True)
class Term:
    kind: str  # "indicator", "bump" or "callable"
    a: float
    b: float
    coef: np.ndarray
    fn: object = None

    def scalar(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "indicator":
            return ((x >= self.a) & (x <= self.b)).astype(float)
        if self.kind == "bump":
            return _raw_bump((x - self.a) / (self.b - self.a))
        return np.where((x >= self.a) & (x <= self.b), self.fn(x), 0.0)


class TestFunction:
    """A sum of scalar profiles times constant vectors (2,) or matrices (2, 2).

    Indicator terms are integrated piecewise: their end points are treated
    as breakpoints and each smooth piece is integrated separately.
    """

    __test__ = False  # not a pytest class

    def __init__(self, terms, shape):
        self.terms = tuple(terms)
        self.shape = tuple(shape)

    # constructors
    @classmethod
    def indicator(cls, a, b, coef):
        coef = np.asarray(coef, dtype=complex)
        return cls([Term("indicator", float(a), float(b), coef)], coef.shape)

    @classmethod
    def bump(cls, a, b, coef):
        """coef * exp(-1/(s(1-s))) with s = (x - a)/(b - a)."""
        coef = np.asarray(coef, dtype=complex)
        return cls([Term("bump", float(a), float(b), coef)], coef.shape)

    @classmethod
    def from_callable(cls, fn, a, b, coef):
        coef = np.asarray(coef, dtype=complex)
        return cls([Term("callable", float(a), float(b), coef, fn)], coef.shape)

    @classmethod
    def zero(cls, shape):
        return cls([], shape)

    # algebra
    def __add__(self, other):
        if self.shape != other.shape:
            raise ValueError("shape mismatch")
        return TestFunction(self.terms + other.terms, self.shape)

    def __mul__(self, c):
        c = complex(c)
        return TestFunction([Term(t.kind, t.a, t.b, c * t.coef, t.fn) for t in self.terms], self.shape)

    __rmul__ = __mul__

    def conj(self):
        out = []
        for t in self.terms:
            fn = t.fn
            if t.kind == "callable":
                fn = _Conj(t.fn)
            out.append(Term(t.kind, t.a, t.b, np.conj(t.coef), fn))
        return TestFunction(out, self.shape)

    def column(self, k):
        """Column k of a matrix-valued test function, as a vector function."""
        if len(self.shape) != 2:
            raise ValueError("column() needs a matrix-valued test function")
        return TestFunction([Term(t.kind, t.a, t.b, t.coef[:, k], t.fn) for t in self.terms], self.shape[:1])

    @property
    def support(self):
        return max((t.b for t in self.terms), default=0.0)

    @property
    def smoothness(self):
        return "continuous" if any(t.kind == "indicator" for t in self.terms) else "smooth-bump"

    def breakpoints(self):
        pts = {0.0}
        for t in self.terms:
            if t.kind == "indicator":
                pts.update((t.a, t.b))
        return sorted(pts)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape + self.shape, dtype=complex)
        for t in self.terms:
            out += np.multiply.outer(t.scalar(x), t.coef)
        return out

    def sample(self, x, lo, hi):
        """Values on a piece [lo, hi] between breakpoints (one-sided at ends)."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape + self.shape, dtype=complex)
        for t in self.terms:
            if t.kind == "indicator":
                if lo >= t.a - 1e-12 and hi <= t.b + 1e-12:
                    out += t.coef
            else:
                out += np.multiply.outer(t.scalar(x), t.coef)
        return out

    def segments(self, xgrid):
        """Index ranges (p, q) of the pieces on xgrid, each with an even interval count."""
        h = xgrid[1] - xgrid[0]
        bps = [b for b in self.breakpoints() if b <= xgrid[-1] + 1e-12]
        if any(abs(b - round(b / h) * h) > 1e-9 for b in bps):
            raise QuadratureFailure("breakpoints must sit on the grid")
        idx = sorted({int(round(b / h)) for b in bps} | {xgrid.size - 1})
        segs = []
        for p, q in zip(idx[:-1], idx[1:]):
            if (q - p) % 2:
                raise QuadratureFailure("breakpoints must split the grid into even pieces")
            segs.append((p, q))
        return segs

    def pieces(self, xgrid):
        for p, q in self.segments(xgrid):
            xs = xgrid[p : q + 1]
            yield p, q, self.sample(xs, xgrid[p], xgrid[q])


class _Conj:
    def __init__(self, fn):
        self.fn = fn

    def __call__(self, x):
        return np.conj(self.fn(x))


class SampledFunction:
    """Values on a uniform grid starting at 0, treated as one smooth piece."""

    def __init__(self, xgrid, values):
        self.xgrid = np.asarray(xgrid, dtype=float)
        self.values = np.asarray(values, dtype=complex)
        self.shape = self.values.shape[1:]

    @property
    def support(self):
        return float(self.xgrid[-1])

    def segments(self, xgrid):
        return [(0, self.xgrid.size - 1)]

    def pieces(self, xgrid):
        if xgrid.size < self.xgrid.size or np.max(np.abs(xgrid[: self.xgrid.size] - self.xgrid)) > 1e-12:
            raise ValueError("sample grid does not match")
        yield 0, self.xgrid.size - 1, self.values


# ------------------------------------------------------------------ regularizers


def _bump_mass():
    return quad(lambda s: np.exp(-1.0 / (s * (1.0 - s))), 0.0, 1.0, epsabs=1e-16, epsrel=1e-14)[0]


_BUMP_MASS = _bump_mass()


def delta_n(t, n):
    """Unit-mass smooth bump supported on (0, 1/n): n beta(n t)."""
    return n * _raw_bump(n * np.asarray(t, dtype=float)) / _BUMP_MASS


def gamma_sigma(x, sigma):
    """C^2 window: 1 on [0, sigma], quintic smoothstep down to 0 at sigma + 1."""
    s = np.clip(np.asarray(x, dtype=float) - sigma, 0.0, 1.0)
    return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s * s)


# ------------------------------------------------------------------ Fourier helpers


def _rot(rho, x, sign):
    """exp(sign i rho x B) for every (rho, x); shape (nrho, nx, 2, 2)."""
    t = sign * np.multiply.outer(rho, x)
    out = np.empty(t.shape + (2, 2), dtype=complex)
    c, s = np.cos(t), 1j * np.sin(t)
    out[..., 0, 0] = c
    out[..., 1, 1] = c
    out[..., 0, 1] = s
    out[..., 1, 0] = s
    return out


def _fourier_pair(x, rho, values):
    """(int e^{i rho x} v dx, int e^{-i rho x} v dx) per rho.

    ``values`` has shape (nx, ...) and is shared by every rho.
    """
    flat = values.reshape(x.size, -1)
    plus = np.empty((rho.size, flat.shape[1]), dtype=complex)
    minus = np.empty_like(plus)
    step = max(1, 2**22 // x.size)  # bounds the weight matrix size
    for s in range(0, rho.size, step):
        W = fourier_weights(x, rho[s : s + step])
        plus[s : s + step] = W @ flat
        minus[s : s + step] = np.conj(W) @ flat
    shp = (rho.size,) + values.shape[1:]
    return plus.reshape(shp), minus.reshape(shp)


def fourier_pair(fn, rho, xgrid):
    """Fourier pair of a test or sampled function, piecewise, with closed forms for indicators."""
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    shp = (rho.size,) + tuple(fn.shape)
    plus = np.zeros(shp, dtype=complex)
    minus = np.zeros(shp, dtype=complex)
    if isinstance(fn, TestFunction):
        ind = [t for t in fn.terms if t.kind == "indicator"]
        rest = TestFunction([t for t in fn.terms if t.kind != "indicator"], fn.shape)
        for t in ind:
            ip = _exp_integral(rho, t.a, t.b)
            plus += np.multiply.outer(ip, t.coef)
            minus += np.multiply.outer(np.conj(ip), t.coef)
        if not rest.terms:
            return plus, minus
        fn = rest
    for p, q, vals in fn.pieces(xgrid):
        a, b = _fourier_pair(xgrid[p : q + 1], rho, vals)
        plus += a
        minus += b
    return plus, minus


def _exp_integral(rho, a, b):
    """int_a^b e^{i rho x} dx."""
    out = np.empty(rho.shape, dtype=complex)
    small = np.abs(rho) * max(abs(a), abs(b)) < 1e-8
    r = rho[~small]
    out[~small] = (np.exp(1j * r * b) - np.exp(1j * r * a)) / (1j * r)
    out[small] = b - a
    return out


# ------------------------------------------------------------------ Theta transforms


def _q(Q):
    return np.asarray(Q.q if isinstance(Q, ProjectorQ) else Q, dtype=complex)


def theta_transforms(F, G, Q, grid, h=None):
    """Theta_F = int F S dx and ThetaTilde_G = int S~ G dx with the free Q-solutions."""
    q = _q(Q)
    rho = grid.nodes if isinstance(grid, RhoGrid) else np.atleast_1d(grid)
    out = []
    for fn, tilde in ((F, False), (G, True)):
        xg = _grid_for(fn, h)
        ip, im = fourier_pair(fn, rho, xg)
        if not tilde:
            val = 0.5 * (ip @ (q + B @ q) + im @ (q - B @ q))
        else:
            val = 0.5 * ((q - q @ B) @ ip + (q + q @ B) @ im)
        out.append(val)
    if isinstance(grid, RhoGrid):
        return SpectralSamples(grid, out[0], "Theta"), SpectralSamples(grid, out[1], "ThetaTilde")
    return out[0], out[1]


def _grid_for(fn, h=None):
    if isinstance(fn, SampledFunction):
        return fn.xgrid
    X = max(fn.support, 1e-3)
    if h is None:
        h = 1e-3
    n = int(round(X / h))
    n += n % 2
    return np.linspace(0.0, n * h, n + 1)


# ------------------------------------------------------------------ sweep-based transforms


class _SweepSet:
    """Chunked sweeps of several solution kinds on a common x-grid."""

    def __init__(self, P, inits, X, h):
        self.sweepers = {k: Sweeper(k, P, init, X, h) for k, init in inits.items()}
        sw = next(iter(self.sweepers.values()))
        self.xgrid, self.h = sw.xgrid, sw.h

    def step_error(self, rho):
        lam = 1j * np.array([rho[np.argmax(np.abs(rho))]])
        return max(sw.step_error(lam) for sw in self.sweepers.values())

    def chunks(self, rho, size=CHUNK):
        """Yield (slice, rho chunk, raw solutions per kind)."""
        for s in range(0, rho.size, size):
            rc = rho[s : s + size]
            yield slice(s, s + rc.size), rc, {k: sw.raw(1j * rc) for k, sw in self.sweepers.items()}


def _test_grid(fns, h):
    X = max(f.support for f in fns) or 1.0  # zero functions get a unit grid
    if h is None:
        h = 1e-3 * max(1.0, X)
    n = max(int(round(X / h)), 2)
    n += n % 2
    return n * h, h


def _osc_integral(fn, xgrid, rc, Y, sign, kind):
    """x-integral of a transform integrand that is linear in Y = exp(sign i rho x B) u.

    Pi+ Y = e^{sign i rho x} Pi+ u and Pi- Y = e^{-sign i rho x} Pi- u, so
    splitting Y with the projectors leaves slow functions times a pure
    exponential.  With V = W(rho) e^{-i rho x} (W the Fourier weights) the
    e^{+i rho x} piece integrates with V and the e^{-i rho x} piece with
    conj(V).  The projector is moved onto the test function (or the output)
    so each piece costs one contraction.
    """
    pf, ps = (PI_P, PI_M) if sign > 0 else (PI_M, PI_P)
    total = 0.0
    for p, q, vals in fn.pieces(xgrid):
        x = xgrid[p : q + 1]
        V = fourier_weights(x, rc) * np.exp(-1j * np.multiply.outer(rc, x))
        Vc = np.conj(V)
        Yp = Y[:, p : q + 1]
        if kind == "omega":  # psi^T f with raw Y = psi^T; projector on the output
            Yf = np.einsum("rxij,xj->rxi", Yp, vals)
            part = np.einsum("rx,rxi->ri", V, Yf) @ pf.T + np.einsum("rx,rxi->ri", Vc, Yf) @ ps.T
        elif kind == "eta":  # phi^T g with raw Y = phi
            Z = V[:, :, None] * (vals @ pf.T)[None] + Vc[:, :, None] * (vals @ ps.T)[None]
            part = np.einsum("rxji,rxj->ri", Yp, Z)
        elif kind == "Phi":  # f phi
            Z = V[:, :, None, None] * (vals @ pf)[None] + Vc[:, :, None, None] * (vals @ ps)[None]
            part = np.einsum("rxab,rxbc->rac", Z, Yp)
        else:  # phi~ g with raw Y = phi~^T
            Z = V[:, :, None, None] * (pf @ vals)[None] + Vc[:, :, None, None] * (ps @ vals)[None]
            part = np.einsum("rxji,rxjc->ric", Yp, Z)
        total = total + part
    return total


def _samples_or_array(grid, values, kind, meta=None):
    if isinstance(grid, RhoGrid):
        return SpectralSamples(grid, values, kind, meta or {})
    return values


def _rho_of(grid):
    return grid.nodes if isinstance(grid, RhoGrid) else np.atleast_1d(np.asarray(grid, dtype=float))


def omega_eta(f, P, mu, grid, h=None):
    """Transforms omega_f^k and eta_f^k (k = 1, 2) of a vector test function.

    Columns of psi come from the inverse-solution ODE and columns of phi from
    the forward ODE, both at lam = i rho.
    """
    if not P.is_commuting():
        raise ValueError("omega/eta transforms need a potential with BP = PB")
    rho = _rho_of(grid)
    M = mu_matrix(mu)
    X, h = _test_grid([f], h)
    sws = _SweepSet(P, {"phi": M, "psi": np.linalg.inv(M)}, X, h)
    om = np.zeros((rho.size, 2), dtype=complex)
    et = np.zeros((rho.size, 2), dtype=complex)
    for sl, rc, Y in sws.chunks(rho):
        om[sl] = _osc_integral(f, sws.xgrid, rc, Y["psi"], -1, "omega")
        et[sl] = _osc_integral(f, sws.xgrid, rc, Y["phi"], 1, "eta")
    meta = {"h": sws.h, "X": X, "step_error": sws.step_error(rho)}
    return _samples_or_array(grid, om, "omega", meta), _samples_or_array(grid, et, "eta", meta)


def phi_transforms(f, g, P, Q, grid, h=None):
    """Phi_f = int f phi dx and PhiTilde_g = int phi~ g dx at lam = i rho."""
    q = _q(Q)
    rho = _rho_of(grid)
    X, h = _test_grid([f, g], h)
    sws = _SweepSet(P, {"phi": q, "phi_tilde": q}, X, h)
    Pf = np.zeros((rho.size, 2, 2), dtype=complex)
    Pg = np.zeros((rho.size, 2, 2), dtype=complex)
    for sl, rc, Y in sws.chunks(rho):
        Pf[sl] = _osc_integral(f, sws.xgrid, rc, Y["phi"], 1, "Phi")
        Pg[sl] = _osc_integral(g, sws.xgrid, rc, Y["phi_tilde"], -1, "PhiTilde")
    meta = {"h": sws.h, "X": X, "step_error": sws.step_error(rho)}
    return _samples_or_array(grid, Pf, "Phi", meta), _samples_or_array(grid, Pg, "PhiTilde", meta)


# ------------------------------------------------------------------ D_n and U_n

_GL_X, _GL_W = np.polynomial.legendre.leggauss(48)


def _mollifier_nodes(n, sigma, panels=8):
    """Composite Gauss-Legendre nodes on (0, 1/n) and weights times delta_n gamma_sigma."""
    edges = np.linspace(0.0, 1.0 / n, panels + 1)
    a, b = edges[:-1, None], edges[1:, None]
    t = (0.5 * (b - a) * (_GL_X + 1.0) + a).ravel()
    w = (0.5 * (b - a) * _GL_W).ravel()
    return t, w * delta_n(t, n) * gamma_sigma(t, sigma)


def dn_sigma(P, nu, n, sigma, grid, chunk=4096):
    """D_n^sigma(rho) = 1/(2 pi) int S^{-1}(t) R(P,0)(t) delta_n(t) gamma_sigma(t) dt S(0)."""
    rho = grid.nodes if isinstance(grid, RhoGrid) else np.atleast_1d(np.asarray(grid, dtype=float))
    t, w = _mollifier_nodes(n, sigma)
    Mt = r_matrix(P, PotentialSpec.zero(), t) * w[:, None, None]
    left = np.array([[np.cos(nu), -1j * np.sin(nu)], [-1j * np.sin(nu), np.cos(nu)]])  # exp(-i nu B)
    right = np.array([[np.cos(nu), 1j * np.sin(nu)], [1j * np.sin(nu), np.cos(nu)]])
    out = np.empty((rho.size, 2, 2), dtype=complex)
    flat = Mt.reshape(t.size, 4)
    for s in range(0, rho.size, chunk):
        r = rho[s : s + chunk]
        ex = np.exp(-1j * np.multiply.outer(r, t))
        a = (ex @ flat).reshape(-1, 2, 2)  # int e^{-i rho t} M
        b = (np.conj(ex) @ flat).reshape(-1, 2, 2)
        # exp(-i rho t B) = Pi+ e^{-i rho t} + Pi- e^{i rho t}
        out[s : s + r.size] = left @ (PI_P @ a + PI_M @ b) @ right / (2 * np.pi)
    meta = {"n": n, "sigma": sigma, "nu": complex(nu)}
    return _samples_or_array(grid, out, "Dn", meta)


def _phi_closed(P, nu, x, rho):
    """phi(x, i rho) = R(0,P)(x) exp(i(rho x + nu) B) for commuting P; shape (nrho, nx, 2, 2)."""
    Rx = r_matrix(PotentialSpec.zero(), P, np.atleast_1d(x))
    t = np.multiply.outer(rho, np.atleast_1d(x)) + nu
    return Rx @ _pack_rot(t, 1.0)


def _psi_closed(P, nu, y, rho):
    Ry = r_matrix(P, PotentialSpec.zero(), np.atleast_1d(y))
    t = np.multiply.outer(rho, np.atleast_1d(y)) + nu
    return _pack_rot(t, -1.0) @ Ry


def _pack_rot(t, sign):
    out = np.empty(t.shape + (2, 2), dtype=complex)
    c, s = np.cos(t), sign * 1j * np.sin(t)
    out[..., 0, 0] = c
    out[..., 1, 1] = c
    out[..., 0, 1] = s
    out[..., 1, 0] = s
    return out


def un_apply(P, nu, Dn, x, right):
    """int phi(x, i rho) D_n(rho) right(rho) d rho for each x (trapezoid in rho).

    ``right`` has shape (nrho, 2, 2) or (nrho, 2).
    """
    rho = Dn.grid.nodes
    w = Dn.grid.weights
    V = Dn.values @ right if right.ndim == 3 else np.einsum("rab,rb->ra", Dn.values, right)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    ex = np.exp(1j * (np.multiply.outer(x, rho) + nu)) * w  # (nx, nrho)
    flat = V.reshape(rho.size, -1)
    ap = (ex @ flat).reshape((x.size,) + V.shape[1:])
    am = (np.conj(ex) @ flat).reshape((x.size,) + V.shape[1:])
    # exp(i(rho x + nu) B) = Pi+ e^{i(..)} + Pi- e^{-i(..)}
    inner = np.einsum("ab,xb...->xa...", PI_P, ap) + np.einsum("ab,xb...->xa...", PI_M, am)
    Rx = r_matrix(PotentialSpec.zero(), P, x)
    return np.einsum("xab,xb...->xa...", Rx, inner)


def un_sigma(P, nu, n, sigma, x, y, grid, Dn=None):
    """U_n^sigma(x, y) = int phi(x) D_n phi^{-1}(y) d rho for commuting P."""
    if Dn is None:
        Dn = dn_sigma(P, nu, n, sigma, grid)
    right = _psi_closed(P, nu, y, grid.nodes)[:, 0]
    return un_apply(P, nu, Dn, x, right)[0 if np.ndim(x) == 0 else slice(None)]


def un_closed(P, n, x, y):
    """Exact U_n(x, y) = R(0,P)(x) R(P,0)(x-y) delta_n(x-y) R(P,0)(y) (gamma = 1)."""
    z = PotentialSpec.zero()
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    dd = np.clip(d, 0.0, None)
    return (
        r_matrix(z, P, x) @ r_matrix(P, z, dd) @ r_matrix(P, z, y) * delta_n(dd, n)[..., None, None] * (d > 0)[..., None, None]
    )


def inverse_identity(P, nu, Dn, x):
    """Left side of the inverse-transform identity: int phi(x) D_n S^{-1}(0) d rho."""
    Sinv0 = np.array([[np.cos(nu), -1j * np.sin(nu)], [-1j * np.sin(nu), np.cos(nu)]])
    right = np.broadcast_to(Sinv0, (Dn.grid.nodes.size, 2, 2))
    return un_apply(P, nu, Dn, x, np.ascontiguousarray(right))


def mollified_identity(P, nu, Dn, g, x, h=1e-3):
    """int U_n(x, y) g(y) dy computed through the spectral side.

    Gamma(rho) = int phi^{-1}(y) g(y) dy, then int phi(x) D_n Gamma d rho.
    """
    rho = Dn.grid.nodes
    xg = _grid_for(g, h)
    Ry = r_matrix(P, PotentialSpec.zero(), xg)
    gy = np.einsum("xab,xb...->xa...", Ry, g(xg))
    ip, im = _fourier_pair(xg, rho, gy)
    # phi^{-1}(y) = exp(-i nu B) exp(-i rho y B) R(P,0)(y)
    inner = np.einsum("ab,rb...->ra...", PI_P, im) + np.einsum("ab,rb...->ra...", PI_M, ip)
    left = np.array([[np.cos(nu), -1j * np.sin(nu)], [-1j * np.sin(nu), np.cos(nu)]])
    gamma = np.einsum("ab,rb...->ra...", left, inner)
    return un_apply(P, nu, Dn, x, gamma)


# ------------------------------------------------------------------ density


@dataclass
class Density:
    """D(rho) by the J route with the L-route cross-check."""

    samples: SpectralSamples
    from_L: np.ndarray
    theta_J: np.ndarray
    theta_L: np.ndarray
    route_gap: float


def density(P, Q, sigma, grid, traces, tol=1e-5):
    """D = (Q + Theta_{J_w})/pi, cross-computed as (Q + ThetaTilde_{L_w})/pi.

    sigma bounds the supports of the test functions.  The two-variable kernel
    on [0, sigma]^2 reads the traces up to x + y = 2 sigma, so the window is
    gamma_{2 sigma} and the traces must cover [0, 2 sigma + 1].
    """
    q = _q(Q)
    x = traces.xgrid
    edge = 2.0 * sigma
    if x[-1] < edge + 1 - 1e-12:
        raise ValueError("traces must cover [0, 2 sigma + 1]")
    m = int(round((edge + 1) / (x[1] - x[0])))
    m += m % 2
    m = min(m, x.size - 1 - (x.size - 1) % 2)
    xs = x[: m + 1]
    win = gamma_sigma(xs, edge)[:, None, None]
    Js = SampledFunction(xs, traces.J_nodes[: m + 1] * win)
    Ls = SampledFunction(xs, traces.L_nodes[: m + 1] * win)
    rho = grid.nodes if isinstance(grid, RhoGrid) else np.atleast_1d(grid)
    tJ, _ = theta_transforms(Js, Ls, q, rho)
    _, tL = theta_transforms(Ls, Ls, q, rho)
    DJ = (q + tJ) / np.pi
    DL = (q + tL) / np.pi
    gap = float(np.max(np.abs(DJ - DL)))
    if gap > tol:
        raise DensityMismatch(f"J and L routes differ by {gap:.2e}")
    meta = {"sigma": sigma, "window": edge, "route_gap": gap, "window_end": float(xs[-1])}
    samples = _samples_or_array(grid, DJ, "Density", meta) if isinstance(grid, RhoGrid) else DJ
    return Density(samples, DL, tJ, tL, gap)


def free_density(Q, grid):
    q = _q(Q)
    vals = np.broadcast_to(q / np.pi, (len(grid), 2, 2)).copy()
    return SpectralSamples(grid, vals, "Density", {"free": True})
