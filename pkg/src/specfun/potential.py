"""Coefficient matrices P(x) and the explicit R-matrix.

A potential is four scalar complex profiles.  Each profile evaluates itself,
its derivative and (when a closed form exists) its antiderivative from 0.
Profiles without a closed-form antiderivative get a cumulative table built
once with adaptive Gauss-Kronrod quadrature on cells, refined inside a cell
by fixed Gauss-Legendre.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline
from scipy.special import erf

from .algebra import B, E
from .errors import QuadratureFailure

QUAD_TOL = 1e-10
_CELL = 0.125
_GL_X, _GL_W = np.polynomial.legendre.leggauss(20)


class Profile:
    """A complex-valued C^1 function on [0, inf)."""

    support = np.inf

    def __call__(self, x):
        raise NotImplementedError

    def deriv(self, x):
        raise NotImplementedError

    def closed_integral(self, x):
        """Antiderivative vanishing at 0, or None if there is no closed form."""
        return None

    def is_zero(self):
        return False

    def integral(self, x):
        x = np.asarray(x, dtype=float)
        out = self.closed_integral(x)
        if out is not None:
            return out
        return self._table.evaluate(x)

    @cached_property
    def _table(self):
        return _CumulativeTable(self)

    def conj(self):
        return Conjugated(self)

    def __mul__(self, c):
        return Scaled(self, complex(c))

    __rmul__ = __mul__

    def __neg__(self):
        return Scaled(self, -1.0)

    def __add__(self, other):
        return Sum((self, other))

    def describe(self):
        return {"kind": type(self).__name__}


class _CumulativeTable:
    def __init__(self, prof):
        self.prof = prof
        self.nodes = np.array([0.0])
        self.values = np.array([0j])

    def _extend(self, xmax):
        # Cells beyond the support contribute nothing.
        while self.nodes[-1] < xmax:
            a = self.nodes[-1]
            b = a + _CELL
            acc = 0j
            if a < self.prof.support:
                acc = self._cell(a, min(b, self.prof.support))
            self.nodes = np.append(self.nodes, b)
            self.values = np.append(self.values, self.values[-1] + acc)

    def _cell(self, a, b):
        parts = []
        for fn in (lambda s: self.prof(s).real, lambda s: self.prof(s).imag):
            val, err = quad(fn, a, b, epsabs=QUAD_TOL * 1e-2, epsrel=1e-13, limit=200)
            if err > QUAD_TOL * 1e-2:
                raise QuadratureFailure(f"antiderivative cell [{a}, {b}] error {err:.2e}")
            parts.append(val)
        return complex(parts[0], parts[1])

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        if x.size == 0:
            return np.zeros(x.shape, dtype=complex)
        self._extend(float(np.max(x)))
        k = np.clip(np.searchsorted(self.nodes, x, side="right") - 1, 0, len(self.nodes) - 2)
        a = self.nodes[k]
        half = 0.5 * (x - a)
        pts = a[..., None] + half[..., None] * (_GL_X + 1.0)
        return self.values[k] + half * np.sum(self.prof(pts) * _GL_W, axis=-1)


@dataclass(frozen=True, eq=False)
class Constant(Profile):
    c: complex = 0j

    def __call__(self, x):
        return np.full(np.shape(x), complex(self.c))

    def deriv(self, x):
        return np.zeros(np.shape(x), dtype=complex)

    def closed_integral(self, x):
        return complex(self.c) * np.asarray(x, dtype=float)

    def is_zero(self):
        return self.c == 0

    @property
    def support(self):
        return 0.0 if self.c == 0 else np.inf

    def describe(self):
        return {"kind": "constant", "value": [self.c.real, self.c.imag]}


@dataclass(frozen=True, eq=False)
class Polynomial(Profile):
    """sum_k coeffs[k] x^k."""

    coeffs: tuple = (0j,)

    def __call__(self, x):
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), np.asarray(self.coeffs, dtype=complex))

    def deriv(self, x):
        c = np.polynomial.polynomial.polyder(np.asarray(self.coeffs, dtype=complex))
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), c) + 0j

    def closed_integral(self, x):
        c = np.polynomial.polynomial.polyint(np.asarray(self.coeffs, dtype=complex))
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), c) + 0j

    def is_zero(self):
        return all(c == 0 for c in self.coeffs)

    def describe(self):
        return {"kind": "polynomial", "coeffs": [[complex(c).real, complex(c).imag] for c in self.coeffs]}


@dataclass(frozen=True, eq=False)
class GaussianBump(Profile):
    """amplitude * exp(-((x - center)/width)^2)."""

    amplitude: complex = 1.0
    center: float = 0.0
    width: float = 1.0

    def __call__(self, x):
        z = (np.asarray(x, dtype=float) - self.center) / self.width
        return complex(self.amplitude) * np.exp(-z * z)

    def deriv(self, x):
        z = (np.asarray(x, dtype=float) - self.center) / self.width
        return complex(self.amplitude) * (-2.0 * z / self.width) * np.exp(-z * z)

    def closed_integral(self, x):
        z = (np.asarray(x, dtype=float) - self.center) / self.width
        z0 = -self.center / self.width
        return complex(self.amplitude) * 0.5 * np.sqrt(np.pi) * self.width * (erf(z) - erf(z0))

    def describe(self):
        a = complex(self.amplitude)
        return {"kind": "gaussian", "amplitude": [a.real, a.imag], "center": self.center, "width": self.width}


@dataclass(frozen=True, eq=False)
class PolyGaussian(Profile):
    """Polynomial in (x - center) times exp(-((x - center)/width)^2)."""

    coeffs: tuple = (1.0,)
    center: float = 0.0
    width: float = 1.0

    def _parts(self, x):
        s = np.asarray(x, dtype=float) - self.center
        c = np.asarray(self.coeffs, dtype=complex)
        g = np.exp(-(s / self.width) ** 2)
        return s, c, g

    def __call__(self, x):
        s, c, g = self._parts(x)
        return np.polynomial.polynomial.polyval(s, c) * g

    def deriv(self, x):
        s, c, g = self._parts(x)
        p = np.polynomial.polynomial.polyval(s, c)
        dp = np.polynomial.polynomial.polyval(s, np.polynomial.polynomial.polyder(c))
        return (dp - 2.0 * s / self.width**2 * p) * g

    def describe(self):
        return {
            "kind": "polygaussian",
            "coeffs": [[complex(c).real, complex(c).imag] for c in self.coeffs],
            "center": self.center,
            "width": self.width,
        }


@dataclass(frozen=True, eq=False)
class RaisedCosine(Profile):
    """amplitude * (1 + cos(pi (x - center)/halfwidth))/2 on |x - center| < halfwidth."""

    amplitude: complex = 1.0
    center: float = 1.0
    halfwidth: float = 1.0

    @property
    def support(self):
        return self.center + self.halfwidth

    def _s(self, x):
        return np.clip((np.asarray(x, dtype=float) - self.center) / self.halfwidth, -1.0, 1.0)

    def __call__(self, x):
        return complex(self.amplitude) * 0.5 * (1.0 + np.cos(np.pi * self._s(x)))

    def deriv(self, x):
        return complex(self.amplitude) * (-0.5 * np.pi / self.halfwidth) * np.sin(np.pi * self._s(x))

    def closed_integral(self, x):
        def prim(s):
            return 0.5 * self.halfwidth * (s + np.sin(np.pi * s) / np.pi)

        return complex(self.amplitude) * (prim(self._s(x)) - prim(self._s(0.0)))

    def describe(self):
        a = complex(self.amplitude)
        return {"kind": "raised_cosine", "amplitude": [a.real, a.imag], "center": self.center, "halfwidth": self.halfwidth}


class Table(Profile):
    """Cubic-spline interpolation of tabulated (x, value) samples.

    The supplier is responsible for the data being C^1 smooth.  Beyond the
    last sample the profile is held at zero.
    """

    def __init__(self, x, values):
        x = np.asarray(x, dtype=float)
        v = np.asarray(values, dtype=complex)
        self.x = x
        self._re = CubicSpline(x, v.real)
        self._im = CubicSpline(x, v.imag)
        self._re_int = self._re.antiderivative()
        self._im_int = self._im.antiderivative()
        self._i0 = complex(self._re_int(0.0), self._im_int(0.0))
        self.support = float(x[-1])

    def _inside(self, x):
        x = np.asarray(x, dtype=float)
        return x, (x <= self.x[-1])

    def __call__(self, x):
        x, m = self._inside(x)
        return np.where(m, self._re(x) + 1j * self._im(x), 0j)

    def deriv(self, x):
        x, m = self._inside(x)
        return np.where(m, self._re(x, 1) + 1j * self._im(x, 1), 0j)

    def closed_integral(self, x):
        x = np.minimum(np.asarray(x, dtype=float), self.x[-1])
        return self._re_int(x) + 1j * self._im_int(x) - self._i0

    def describe(self):
        return {"kind": "table", "n": int(self.x.size)}


class Scaled(Profile):
    def __init__(self, base, c):
        self.base = base
        self.c = complex(c)
        self.support = base.support

    def __call__(self, x):
        return self.c * self.base(x)

    def deriv(self, x):
        return self.c * self.base.deriv(x)

    def closed_integral(self, x):
        v = self.base.closed_integral(x)
        return None if v is None else self.c * v

    def integral(self, x):
        return self.c * self.base.integral(x)

    def is_zero(self):
        return self.c == 0 or self.base.is_zero()

    def describe(self):
        return {"kind": "scaled", "factor": [self.c.real, self.c.imag], "base": self.base.describe()}


class Conjugated(Profile):
    def __init__(self, base):
        self.base = base
        self.support = base.support

    def __call__(self, x):
        return np.conj(self.base(x))

    def deriv(self, x):
        return np.conj(self.base.deriv(x))

    def closed_integral(self, x):
        v = self.base.closed_integral(x)
        return None if v is None else np.conj(v)

    def integral(self, x):
        return np.conj(self.base.integral(x))

    def is_zero(self):
        return self.base.is_zero()

    def conj(self):
        return self.base

    def describe(self):
        return {"kind": "conjugate", "base": self.base.describe()}


class Sum(Profile):
    def __init__(self, terms):
        self.terms = tuple(terms)
        self.support = max(t.support for t in self.terms)

    def __call__(self, x):
        return sum(t(x) for t in self.terms)

    def deriv(self, x):
        return sum(t.deriv(x) for t in self.terms)

    def integral(self, x):
        return sum(t.integral(x) for t in self.terms)

    def is_zero(self):
        return all(t.is_zero() for t in self.terms)

    def describe(self):
        return {"kind": "sum", "terms": [t.describe() for t in self.terms]}


ZERO = Constant(0j)


@dataclass(frozen=True, eq=False)
class PotentialSpec:
    """P(x) = [[p11, p12], [p21, p22]] given by four profiles."""

    p11: Profile = ZERO
    p12: Profile = ZERO
    p21: Profile = ZERO
    p22: Profile = ZERO
    declared: str = field(default="", compare=False)

    def __post_init__(self):
        # plain numbers become constant profiles
        for name in ("p11", "p12", "p21", "p22"):
            object.__setattr__(self, name, _as_profile(getattr(self, name)))

    @property
    def entries(self):
        return (self.p11, self.p12, self.p21, self.p22)

    @property
    def support_radius(self):
        return max(p.support for p in self.entries)

    def _stack(self, vals):
        out = np.empty(np.shape(vals[0]) + (2, 2), dtype=complex)
        out[..., 0, 0], out[..., 0, 1], out[..., 1, 0], out[..., 1, 1] = vals
        return out

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self._stack([np.broadcast_to(p(x), x.shape) for p in self.entries])

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        return self._stack([np.broadcast_to(p.deriv(x), x.shape) for p in self.entries])

    def is_zero(self):
        return all(p.is_zero() for p in self.entries)

    def is_commuting(self, xgrid=None, tol=1e-12):
        """True when p11 = p22 and p12 = p21 on the sample grid (BP = PB)."""
        if self.is_zero():
            return True
        if self.p11 is self.p22 and self.p12 is self.p21:
            return True
        if xgrid is None:
            xgrid = np.linspace(0.0, max(2.0, min(self.support_radius, 50.0)), 2001)
        v = self(xgrid)
        return bool(
            np.max(np.abs(v[:, 0, 0] - v[:, 1, 1])) <= tol and np.max(np.abs(v[:, 0, 1] - v[:, 1, 0])) <= tol
        )

    def family(self, xgrid=None):
        if self.is_zero():
            return "zero"
        return "commuting" if self.is_commuting(xgrid) else "general"

    def describe(self):
        return {
            "family": self.family(),
            "p11": self.p11.describe(),
            "p12": self.p12.describe(),
            "p21": self.p21.describe(),
            "p22": self.p22.describe(),
        }

    # constructors -----------------------------------------------------

    @classmethod
    def zero(cls):
        return cls()

    @classmethod
    def commuting(cls, a, b):
        """P = a E + b B for scalar profiles a, b."""
        a, b = _as_profile(a), _as_profile(b)
        return cls(a, b, b, a)

    @classmethod
    def constant(cls, m):
        m = np.asarray(m, dtype=complex)
        return cls(Constant(m[0, 0]), Constant(m[0, 1]), Constant(m[1, 0]), Constant(m[1, 1]))


def _as_profile(p):
    if isinstance(p, Profile):
        return p
    return Constant(complex(p))


def adjoint_potential(P):
    """Entry (k, l) of the result is -conj(p_lk)."""
    return PotentialSpec(-P.p11.conj(), -P.p21.conj(), -P.p12.conj(), -P.p22.conj())


def theta_pair(P1, P2, x):
    """Return (theta1(x), theta2(x)) as arrays shaped like x."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("theta_pair needs x >= 0")

    def ig(p):
        return np.broadcast_to(p.integral(x), x.shape) if not p.is_zero() else np.zeros(x.shape, dtype=complex)

    t1 = 0.5 * (ig(P2.p12) + ig(P2.p21) - ig(P1.p12) - ig(P1.p21))
    t2 = 0.5 * (ig(P2.p11) + ig(P2.p22) - ig(P1.p11) - ig(P1.p22))
    return t1, t2


def theta_derivs(P1, P2, x):
    """Pointwise derivatives of theta1 and theta2."""
    x = np.asarray(x, dtype=float)
    a, b = P1(x), P2(x)
    d1 = 0.5 * (b[..., 0, 1] + b[..., 1, 0] - a[..., 0, 1] - a[..., 1, 0])
    d2 = 0.5 * (b[..., 0, 0] + b[..., 1, 1] - a[..., 0, 0] - a[..., 1, 1])
    return d1, d2


def _hyperbolic(t1, t2, sign=-1.0):
    e = np.exp(-t1)
    out = np.empty(np.shape(t1) + (2, 2), dtype=complex)
    c, s = e * np.cosh(t2), sign * e * np.sinh(t2)
    out[..., 0, 0] = c
    out[..., 1, 1] = c
    out[..., 0, 1] = s
    out[..., 1, 0] = s
    return out


def r_matrix(P1, P2, x):
    """R(P1, P2)(x) = exp(-theta1) (cosh theta2 E - sinh theta2 B)."""
    t1, t2 = theta_pair(P1, P2, x)
    return _hyperbolic(t1, t2)


def r_matrix_derivative(P1, P2, x):
    """R' = -(theta1' E + theta2' B) R."""
    R = r_matrix(P1, P2, x)
    d1, d2 = theta_derivs(P1, P2, x)
    gen = d1[..., None, None] * E + d2[..., None, None] * B
    return -gen @ R
