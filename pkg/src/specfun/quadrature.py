"""Quadrature rules on uniform grids.

``fourier_weights`` returns weights W with  int e^{i rho x} g(x) dx ~ W @ g
on a uniform grid with an even number of intervals: composite Simpson times
the exponential for small |rho| and Filon-Simpson (exact integration of the
exponential against the piecewise-quadratic interpolant of g) above.
"""

import numpy as np

from .errors import QuadratureFailure

FILON_THRESHOLD = 20.0


def simpson_weights(n_intervals, h):
    """Composite Simpson weights; n_intervals must be even."""
    if n_intervals % 2:
        raise QuadratureFailure(f"Simpson needs an even number of intervals, got {n_intervals}")
    w = np.ones(n_intervals + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * h / 3.0


def _moments(theta):
    """int_{-1}^{1} t^k e^{i theta t} dt for k = 0, 1, 2."""
    theta = np.asarray(theta, dtype=float)
    small = np.abs(theta) < 1.0
    t = np.where(small, 1.0, theta)
    s, c = np.sin(t), np.cos(t)
    i0 = 2 * s / t
    i1 = 2j * (s - t * c) / t**2
    i2 = 2 * ((t * t - 2) * s + 2 * t * c) / t**3
    if np.any(small):
        ts = theta[small]
        a0 = np.zeros_like(ts)
        a1 = np.zeros_like(ts)
        a2 = np.zeros_like(ts)
        term = np.ones_like(ts)  # theta^(2m)/(2m)! with sign
        for m in range(12):
            a0 += term / (2 * m + 1)
            a2 += term / (2 * m + 3)
            a1 += term * ts / ((2 * m + 1) * (2 * m + 3))
            term = -term * ts * ts / ((2 * m + 1) * (2 * m + 2))
        i0 = np.where(small, 0j, i0)
        i1 = np.where(small, 0j, i1)
        i2 = np.where(small, 0j, i2)
        i0[small] = 2 * a0
        i1[small] = 2j * a1
        i2[small] = 2 * a2
    return i0, i1, i2


def filon_weights(x, rho):
    """Filon-Simpson weights, shape (len(rho), len(x))."""
    x = np.asarray(x, dtype=float)
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    n = x.size - 1
    if n % 2:
        raise QuadratureFailure(f"Filon needs an even number of intervals, got {n}")
    h = (x[-1] - x[0]) / n
    i0, i1, i2 = _moments(rho * h)
    cm = h * (i2 - i1) / 2
    c0 = h * (i0 - i2)
    cp = h * (i2 + i1) / 2
    centres = x[1::2]
    ph = np.exp(1j * np.multiply.outer(rho, centres))
    w = np.zeros((rho.size, n + 1), dtype=complex)
    w[:, 0:-1:2] += cm[:, None] * ph
    w[:, 1::2] += c0[:, None] * ph
    w[:, 2::2] += cp[:, None] * ph
    return w


def fourier_weights(x, rho, threshold=FILON_THRESHOLD):
    """Weights for int e^{i rho x} g(x) dx over the grid x, per rho."""
    x = np.asarray(x, dtype=float)
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    n = x.size - 1
    if n == 0:
        return np.zeros((rho.size, 1), dtype=complex)
    h = (x[-1] - x[0]) / n
    w = np.empty((rho.size, x.size), dtype=complex)
    low = np.abs(rho) <= threshold
    if np.any(low):
        w[low] = simpson_weights(n, h) * np.exp(1j * np.multiply.outer(rho[low], x))
    if np.any(~low):
        w[~low] = filon_weights(x, rho[~low])
    return w


def trapezoid_weights(n, h):
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


def rho_integral(rho, values, prefactor=1.0, window=0.8):
    """Trapezoid integral over a symmetric rho grid with a tail estimate.

    Returns a dict with ``raw`` (prefactor times the trapezoid sum),
    ``corrected`` (raw plus the estimated contribution of |rho| > R assuming
    c/rho^2 decay), ``tail_bound`` (prefactor (C+ + C-)/R with C the maximum
    of rho^2 |I| over the outer window) and ``tail_correction``.
    """
    rho = np.asarray(rho, dtype=float)
    values = np.asarray(values)
    d = rho[1] - rho[0]
    w = trapezoid_weights(rho.size, d)
    raw = prefactor * np.tensordot(w, values, axes=(0, 0))
    R = float(rho[-1])
    corr = np.zeros(values.shape[1:], dtype=complex)
    bound = 0.0
    for side in (rho >= window * R, rho <= -window * R):
        r = np.abs(rho[side])
        scaled = (r**2).reshape((-1,) + (1,) * (values.ndim - 1)) * values[side]
        bound += float(np.max(np.abs(scaled))) if scaled.size else 0.0
        # Hann weights suppress oscillatory parts of rho^2 I in the mean.
        t = (r - window * R) / ((1 - window) * R)
        hann = np.sin(np.pi * t) ** 2
        c = np.tensordot(hann, scaled, axes=(0, 0)) / hann.sum()
        corr = corr + c / R
    return {
        "raw": raw,
        "tail_correction": prefactor * corr,
        "corrected": raw + prefactor * corr,
        "tail_bound": abs(prefactor) * bound / R,
    }
