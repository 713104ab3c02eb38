"""Complexified Clifford algebra of R^3 and its matrix-pair representation.

Multivectors are stored as complex arrays whose last axis holds the eight
coordinates in the order

    (alpha, a1, a2, a3, b1, b2, b3, beta)

with respect to the basis (1, e1, e2, e3, e2^e3, e3^e1, e1^e2, e1^e2^e3).
Every function here broadcasts over leading axes, so a boundary density of
N nodes is simply an ``(N, 8)`` array.

Matrix pairs are stored as ``(..., 2, 2, 2)`` arrays: axis ``-3`` selects
the member of the pair, the last two axes are the 2x2 matrix.  Pairwise
multiplication is then plain ``np.matmul``.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "Multivector",
    "BASIS_LABELS",
    "GRADE",
    "as_mv",
    "basis",
    "scalar",
    "vector",
    "bivector",
    "trivector",
    "structure_constants",
    "clifford_mul",
    "exterior_mul",
    "rho",
    "rho_inv",
    "pair_mul",
    "involution",
    "involution_pair",
    "hodge_star",
    "reflect_N",
    "project_N_plus",
    "project_N_minus",
    "reflect_S",
    "project_S_plus",
    "project_S_minus",
    "project_T_plus",
    "project_T_minus",
    "left_mul_matrix",
    "right_mul_matrix",
    "involution_matrix",
    "check_unit",
    "SIGMA",
    "IDENTITY_PAIR",
]

BASIS_LABELS = ("1", "e1", "e2", "e3", "e23", "e31", "e12", "e123")
GRADE = np.array([0, 1, 1, 1, 2, 2, 2, 3])

_INVOLUTION_SIGNS = np.array([1, -1, -1, -1, 1, 1, 1, -1], dtype=float)
_HODGE_PERM = np.array([7, 4, 5, 6, 1, 2, 3, 0])

SIGMA = np.array(
    [
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)
IDENTITY_PAIR = np.array([np.eye(2), np.eye(2)], dtype=complex)

UNIT_TOL = 1e-12


def as_mv(w) -> np.ndarray:
    """Coerce to a complex coordinate array with trailing axis 8."""
    arr = np.asarray(w, dtype=complex)
    if arr.shape[-1:] != (8,):
        raise ValueError(f"multivector arrays need a trailing axis of length 8, got {arr.shape}")
    return arr


def basis(i: int) -> np.ndarray:
    e = np.zeros(8, dtype=complex)
    e[i] = 1.0
    return e


def scalar(alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=complex)
    out = np.zeros(alpha.shape + (8,), dtype=complex)
    out[..., 0] = alpha
    return out


def vector(a) -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    out = np.zeros(a.shape[:-1] + (8,), dtype=complex)
    out[..., 1:4] = a
    return out


def bivector(b) -> np.ndarray:
    """Bivector with coordinates ``b`` in the basis (e23, e31, e12), i.e. ``*b``."""
    b = np.asarray(b, dtype=complex)
    out = np.zeros(b.shape[:-1] + (8,), dtype=complex)
    out[..., 4:7] = b
    return out


def trivector(beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=complex)
    out = np.zeros(beta.shape + (8,), dtype=complex)
    out[..., 7] = beta
    return out


def _vector_left_action(u) -> np.ndarray:
    """8x8 matrix of w -> u w for a vector u, read off the component formula

        u w = u.a + (u alpha - u x b) + *(u x a + u beta) + *(u.b)
    """
    u = np.asarray(u, dtype=float)
    L = np.zeros((8, 8))
    # scalar <- u.a
    L[0, 1:4] = u
    # vector <- u alpha - u x b
    L[1:4, 0] = u
    L[1:4, 4:7] = -_cross_matrix(u)
    # bivector <- u x a + u beta
    L[4:7, 1:4] = _cross_matrix(u)
    L[4:7, 7] = u
    # trivector <- u.b
    L[7, 4:7] = u
    return L


def _cross_matrix(u) -> np.ndarray:
    return np.array([[0, -u[2], u[1]], [u[2], 0, -u[0]], [-u[1], u[0], 0]], dtype=float)


def _build_structure_constants() -> np.ndarray:
    e = np.eye(3)
    L1, L2, L3 = (_vector_left_action(e[i]) for i in range(3))
    # each basis blade as a product of vectors: e23 = e2 e3 etc.
    lefts = [np.eye(8), L1, L2, L3, L2 @ L3, L3 @ L1, L1 @ L2, L1 @ L2 @ L3]
    G = np.zeros((8, 8, 8))
    for a, La in enumerate(lefts):
        G[a] = La.T
    G[np.abs(G) < 0.5] = 0.0
    return G


_TABLE = _build_structure_constants()
_TABLE.setflags(write=False)


def structure_constants() -> np.ndarray:
    """The frozen table ``G`` with ``e_a e_b = sum_c G[a, b, c] e_c``."""
    return _TABLE


def clifford_mul(w1, w2, table: np.ndarray | None = None) -> np.ndarray:
    """Clifford product, broadcasting over leading axes."""
    G = _TABLE if table is None else table
    w1 = as_mv(w1)
    w2 = as_mv(w2)
    return np.einsum("...a,...b,abc->...c", w1, w2, G, optimize=True)


def exterior_mul(u, w) -> np.ndarray:
    """Exterior product ``u ^ w`` of a vector ``u`` with a multivector ``w``."""
    u = as_mv(u)
    w = as_mv(w)
    if np.any(u[..., [0, 4, 5, 6, 7]] != 0):
        raise ValueError("exterior_mul expects a pure vector as left factor")
    uv = u[..., 1:4]
    alpha, a, b = w[..., 0], w[..., 1:4], w[..., 4:7]
    out = np.zeros(np.broadcast_shapes(u.shape, w.shape), dtype=complex)
    out[..., 1:4] = uv * alpha[..., None]
    out[..., 4:7] = np.cross(uv, a)
    out[..., 7] = np.sum(uv * b, axis=-1)
    return out


def rho(w) -> np.ndarray:
    """Matrix-pair image of a multivector."""
    w = as_mv(w)
    al, a1, a2, a3, b1, b2, b3, be = np.moveaxis(w, -1, 0)
    m = np.empty(w.shape[:-1] + (2, 2, 2), dtype=complex)
    m[..., 0, 0, 0] = al + a3 + 1j * (b3 + be)
    m[..., 0, 0, 1] = a1 + b2 + 1j * (-a2 + b1)
    m[..., 0, 1, 0] = a1 - b2 + 1j * (a2 + b1)
    m[..., 0, 1, 1] = al - a3 + 1j * (-b3 + be)
    m[..., 1, 0, 0] = al - a3 + 1j * (b3 - be)
    m[..., 1, 0, 1] = a1 - b2 + 1j * (-a2 - b1)
    m[..., 1, 1, 0] = a1 + b2 + 1j * (a2 - b1)
    m[..., 1, 1, 1] = al + a3 + 1j * (-b3 - be)
    return m


def rho_inv(m) -> np.ndarray:
    """Inverse of :func:`rho`, in closed form."""
    m = np.asarray(m, dtype=complex)
    if m.shape[-3:] != (2, 2, 2):
        raise ValueError(f"matrix pairs need trailing shape (2, 2, 2), got {m.shape}")
    p00, p01, p10, p11 = m[..., 0, 0, 0], m[..., 0, 0, 1], m[..., 0, 1, 0], m[..., 0, 1, 1]
    q00, q01, q10, q11 = m[..., 1, 0, 0], m[..., 1, 0, 1], m[..., 1, 1, 0], m[..., 1, 1, 1]
    out = np.empty(m.shape[:-3] + (8,), dtype=complex)
    # sums and differences of matching entries isolate each grade
    out[..., 0] = (p00 + p11 + q00 + q11) / 4
    out[..., 7] = (p00 + p11 - q00 - q11) / 4j
    out[..., 3] = (p00 - p11 - q00 + q11) / 4
    out[..., 6] = (p00 - p11 + q00 - q11) / 4j
    out[..., 1] = (p01 + p10 + q01 + q10) / 4
    out[..., 5] = (p01 - p10 - q01 + q10) / 4
    out[..., 2] = (-p01 + p10 - q01 + q10) / 4j
    out[..., 4] = (p01 + p10 - q01 - q10) / 4j
    return out


def pair_mul(m1, m2) -> np.ndarray:
    return np.matmul(m1, m2)


def involution(w) -> np.ndarray:
    """Negate the vector and trivector parts."""
    return as_mv(w) * _INVOLUTION_SIGNS


def involution_pair(h) -> np.ndarray:
    """Involution in the matrix-pair picture: ``(h1, h2) -> (s3 h2 s3, s3 h1 s3)``."""
    h = np.asarray(h, dtype=complex)
    flip = np.array([[1, -1], [-1, 1]])
    return h[..., ::-1, :, :] * flip


def hodge_star(w) -> np.ndarray:
    return as_mv(w)[..., _HODGE_PERM]


def check_unit(n) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    if n.shape[-1:] != (3,):
        raise ValueError(f"normals need a trailing axis of length 3, got {n.shape}")
    err = np.abs(np.linalg.norm(n, axis=-1) - 1.0)
    if np.any(err > UNIT_TOL):
        raise ValueError(f"normal is not a unit vector (|n| - 1 = {err.max():.3e})")
    return n


def reflect_N(f, n) -> np.ndarray:
    """``N f = n f^ n``."""
    nv = vector(check_unit(n))
    return clifford_mul(clifford_mul(nv, involution(f)), nv)


def project_N_plus(f, n) -> np.ndarray:
    """Tangential part ``n (n ^ f)``."""
    nv = vector(check_unit(n))
    return clifford_mul(nv, exterior_mul(nv, f))


def project_N_minus(f, n) -> np.ndarray:
    return as_mv(f) - project_N_plus(f, n)


def reflect_S(f, n) -> np.ndarray:
    """``S f = n f``."""
    return clifford_mul(vector(check_unit(n)), f)


def project_S_plus(f, n) -> np.ndarray:
    return 0.5 * (as_mv(f) + reflect_S(f, n))


def project_S_minus(f, n) -> np.ndarray:
    return 0.5 * (as_mv(f) - reflect_S(f, n))


def project_T_plus(f) -> np.ndarray:
    """Scalar and bivector parts."""
    f = as_mv(f)
    return 0.5 * (f + involution(f))


def project_T_minus(f) -> np.ndarray:
    """Vector and trivector parts."""
    f = as_mv(f)
    return 0.5 * (f - involution(f))


def left_mul_matrix(w, table: np.ndarray | None = None) -> np.ndarray:
    """Matrix ``L`` with ``L @ v == clifford_mul(w, v)`` on coordinate vectors."""
    G = _TABLE if table is None else table
    return np.einsum("...a,abc->...cb", as_mv(w), G)


def right_mul_matrix(w, table: np.ndarray | None = None) -> np.ndarray:
    """Matrix ``R`` with ``R @ v == clifford_mul(v, w)``."""
    G = _TABLE if table is None else table
    return np.einsum("...a,bac->...cb", as_mv(w), G)


def involution_matrix() -> np.ndarray:
    return np.diag(_INVOLUTION_SIGNS).astype(complex)


class Multivector:
    """Immutable convenience wrapper around one 8-coordinate array.

    ``*`` is the Clifford product (or scaling by a number), ``^`` the
    exterior product with a vector on the left.
    """

    __slots__ = ("_c",)

    def __init__(self, coords=None, *, alpha=0, a=(0, 0, 0), b=(0, 0, 0), beta=0):
        if coords is None:
            coords = np.concatenate([[alpha], np.asarray(a), np.asarray(b), [beta]])
        c = np.array(coords, dtype=complex).reshape(8)
        c.setflags(write=False)
        self._c = c

    @property
    def coords(self) -> np.ndarray:
        return self._c

    @property
    def alpha(self) -> complex:
        return complex(self._c[0])

    @property
    def a(self) -> np.ndarray:
        return self._c[1:4]

    @property
    def b(self) -> np.ndarray:
        return self._c[4:7]

    @property
    def beta(self) -> complex:
        return complex(self._c[7])

    def __array__(self, dtype=None, copy=None):
        return self._c if dtype is None else self._c.astype(dtype)

    def __add__(self, other):
        return Multivector(self._c + np.asarray(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Multivector(self._c - np.asarray(other))

    def __neg__(self):
        return Multivector(-self._c)

    def __mul__(self, other):
        if np.isscalar(other):
            return Multivector(self._c * other)
        return Multivector(clifford_mul(self._c, np.asarray(other)))

    def __rmul__(self, other):
        if np.isscalar(other):
            return Multivector(self._c * other)
        return Multivector(clifford_mul(np.asarray(other), self._c))

    def __xor__(self, other):
        return Multivector(exterior_mul(self._c, np.asarray(other)))

    def __eq__(self, other):
        try:
            return bool(np.array_equal(self._c, np.asarray(other, dtype=complex)))
        except (TypeError, ValueError):
            return NotImplemented

    def __hash__(self):
        return hash(self._c.tobytes())

    def __repr__(self):
        terms = [f"{c:.6g}*{lab}" for c, lab in zip(self._c, BASIS_LABELS) if c != 0]
        return "Multivector(" + (" + ".join(terms) if terms else "0") + ")"

    def hat(self) -> "Multivector":
        return Multivector(involution(self._c))

    def star(self) -> "Multivector":
        return Multivector(hodge_star(self._c))

    def matrix_pair(self) -> np.ndarray:
        return rho(self._c)
