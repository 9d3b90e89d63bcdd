"""Complex 2x2 matrices and the boundary projector Q.

Matrices are plain ``(2, 2)`` complex numpy arrays, and batches are arrays
with shape ``(..., 2, 2)``. Structural constants are read-only arrays.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NotAdmissible, SingularMatrix

EPS_SING = 1e-12
EPS_ALG = 1e-13


def _frozen(a):
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


E = _frozen(np.eye(2))
B = _frozen([[0, 1], [1, 0]])
# Remaining Pauli-type basis elements, used for the anticommuting part of P.
C = _frozen([[1, 0], [0, -1]])
D = _frozen([[0, 1], [-1, 0]])


def mat2(m11, m12, m21, m22):
    """Build a matrix from its four entries in row-major order."""
    return _frozen([[m11, m12], [m21, m22]])


def as_mat(a):
    a = np.asarray(a, dtype=complex)
    if a.shape[-2:] != (2, 2):
        raise ValueError(f"expected trailing shape (2, 2), got {a.shape}")
    return a


def add(a, b):
    return as_mat(a) + as_mat(b)


def mul(a, b):
    return as_mat(a) @ as_mat(b)


def det(a):
    a = as_mat(a)
    return a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]


def inv(a, eps=EPS_SING):
    """Closed-form inverse; raises SingularMatrix when |det| <= eps."""
    a = as_mat(a)
    d = det(a)
    if np.any(np.abs(d) <= eps):
        raise SingularMatrix(f"|det| = {np.min(np.abs(d)):.3e} <= {eps:.1e}")
    out = np.empty_like(a)
    out[..., 0, 0] = a[..., 1, 1]
    out[..., 0, 1] = -a[..., 0, 1]
    out[..., 1, 0] = -a[..., 1, 0]
    out[..., 1, 1] = a[..., 0, 0]
    return out / d[..., None, None]


def conj_transpose(a):
    return np.conj(np.swapaxes(as_mat(a), -1, -2))


def commutator(a, b):
    a, b = as_mat(a), as_mat(b)
    return a @ b - b @ a


def sup_norm(a):
    """Largest entry modulus."""
    return float(np.max(np.abs(a))) if np.size(a) else 0.0


@dataclass(frozen=True)
class ProjectorQ:
    """An admissible boundary projector together with its rank-1 factors.

    ``q = outer(column, row)`` where ``column`` is the pivot column of q
    (the larger-norm column, ties going to the first) and ``row`` holds the
    multipliers of that column.
    """

    q: np.ndarray
    column: np.ndarray
    row: np.ndarray
    pivot: int

    @property
    def mu(self):
        """The boundary parameter mu with (cosh mu, sinh mu) parallel to ``column``."""
        u1, u2 = self.column
        # tanh mu = u2/u1; the log form also covers u1 = 0 (mu = i pi/2).
        return 0.5 * np.log(complex((u1 + u2) / (u1 - u2)))

    def hyperbolic_2mu(self):
        """Return (sinh 2mu, cosh 2mu) computed rationally from the pivot column."""
        u1, u2 = self.column
        den = u1 * u1 - u2 * u2
        return complex(2 * u1 * u2 / den), complex((u1 * u1 + u2 * u2) / den)

    def conj_transpose(self):
        return validate_projector(conj_transpose(self.q))


def validate_projector(q, eps=EPS_ALG):
    """Check that q is an admissible boundary projector and factor it."""
    q = as_mat(q).copy()
    if q.shape != (2, 2):
        raise ValueError("validate_projector expects a single 2x2 matrix")
    r = sup_norm(q @ B + B @ q - B)
    if r > eps:
        raise NotAdmissible("QB + BQ = B", r)
    r = sup_norm(q @ q - q)
    if r > eps:
        raise NotAdmissible("Q^2 = Q", r)
    r = abs(det(q))
    if r > eps:
        raise NotAdmissible("det Q = 0", r)
    norms = np.linalg.norm(q, axis=0)
    pivot = 0 if norms[0] >= norms[1] else 1
    column = q[:, pivot].copy()
    k = int(np.argmax(np.abs(column)))
    row = q[k, :] / column[k]
    return ProjectorQ(_frozen(q), _frozen(column), _frozen(row), pivot)


def mu_matrix(mu):
    """The boundary matrix [[cosh mu, sinh mu], [sinh mu, cosh mu]]."""
    mu = np.asarray(mu, dtype=complex)
    c, s = np.cosh(mu), np.sinh(mu)
    out = np.empty(mu.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = c
    out[..., 0, 1] = s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    return out
