import numpy as np
import pytest

from specfun.errors import QuadratureFailure
from specfun.quadrature import (
    FILON_THRESHOLD,
    filon_weights,
    fourier_weights,
    rho_integral,
    simpson_weights,
)


def exact_poly_fourier(rho, a, b):
    # int_a^b (1 + x + x^2) e^{i rho x} dx by repeated integration by parts
    def F(x):
        e = np.exp(1j * rho * x)
        p, dp, ddp = 1 + x + x * x, 1 + 2 * x, 2.0
        return e * (p / (1j * rho) - dp / (1j * rho) ** 2 + ddp / (1j * rho) ** 3)

    return F(b) - F(a)


def test_simpson_exact_for_cubics():
    x = np.linspace(0.0, 2.0, 11)
    w = simpson_weights(10, 0.2)
    assert abs(w @ (x**3 - 2 * x + 1) - (4 - 4 + 2)) < 1e-13
    with pytest.raises(QuadratureFailure):
        simpson_weights(5, 0.1)


def test_filon_exact_for_quadratics():
    # Filon-Simpson integrates the quadratic interpolant exactly, so quadratics are exact
    x = np.linspace(0.0, 2.0, 21)
    rho = np.array([25.0, -40.0, 300.0])
    got = filon_weights(x, rho) @ (1 + x + x * x)
    ref = np.array([exact_poly_fourier(r, 0.0, 2.0) for r in rho])
    assert np.max(np.abs(got - ref)) < 1e-12


def test_filon_small_theta_series():
    # the moment series branch (|rho h| < 1) agrees with the closed form branch
    x = np.linspace(0.0, 1.0, 201)
    rho = np.array([50.0, 199.0, 201.0])
    got = filon_weights(x, rho) @ np.cos(x)
    ref = [np.trapezoid(np.cos(xs) * np.exp(1j * r * xs), xs) for r, xs in zip(rho, [np.linspace(0, 1, 400001)] * 3)]
    assert np.max(np.abs(got - np.array(ref))) < 1e-9


def test_fourier_weights_continuous_at_threshold():
    x = np.linspace(0.0, 2.0, 2001)
    g = np.exp(-x) * np.sin(3 * x)
    lo = fourier_weights(x, [FILON_THRESHOLD])[0] @ g
    hi = fourier_weights(x, [FILON_THRESHOLD + 1e-9])[0] @ g
    assert abs(lo - hi) < 1e-10
    assert fourier_weights(np.array([0.0]), [1.0]).shape == (1, 1)


def test_rho_integral_tail_correction():
    # (2 - 2 cos rho)/rho^2 integrates to 2 pi over the real line
    R, d = 200.0, 0.01
    rho = d * np.arange(-int(R / d), int(R / d) + 1)
    safe = np.where(rho == 0, 1.0, rho)
    vals = np.where(rho == 0, 1.0, (2 - 2 * np.cos(rho)) / safe**2)
    out = rho_integral(rho, vals)
    raw_err = abs(out["raw"] - 2 * np.pi)
    corr_err = abs(out["corrected"] - 2 * np.pi)
    assert raw_err <= out["tail_bound"]
    assert corr_err < 0.02 * raw_err
