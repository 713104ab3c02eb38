"""Nystrom assembly of the boundary operators.

Densities are ``(N, 8)`` arrays of nodal multivectors, flattened node-major
to length ``8N`` when a plain vector is needed.  Every integral operator
used here acts blockwise by *left* Clifford multiplication,

    (K h)_i = sum_j K_ij h_j,

so it is stored compactly as a kernel field ``K`` of shape ``(N, N, 8)``
(:class:`CliffordOperator`) and only expanded to an ``8N x 8N`` matrix on
request.  Pointwise operators (M, N, S) are :class:`BlockDiagonal`.

Quadrature: centroid rule in the far field, midpoint-refined panels in the
near field (``r_factor`` panel diameters), a Duffy-type polar rule for the
weakly singular self-panel terms, and for the strongly singular part of
``C_k`` the subtraction

    C_k f(x) = f(x) + 2 pv int Psi_0(y-x) n(y) [f(y) - f(x)] dy
                    + 2 int (Psi_k - Psi_0)(y-x) n(y) f(y) dy,

which uses ``2 pv int Psi_0(y-x) n(y) dy = 1`` on smooth closed surfaces.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import clifford as cl
from .geometry import QuadratureSurface, _refine, gradient_stencil, polar_rule
from .kernels import FOUR_PI

__all__ = [
    "NearField",
    "DenseOperator",
    "CliffordOperator",
    "BlockDiagonal",
    "panel_integrals",
    "assemble_Ck",
    "assemble_Rk",
    "assemble_M",
    "assemble_N",
    "assemble_S",
    "spin_system",
    "rotation_system",
    "spin_apply",
    "rotation_apply",
    "field_eval_RkOmega",
    "assemble_classical",
    "ClassicalOperators",
    "proposition_blocks",
    "classical_blocks",
    "tangent_frames",
    "BLOCK_LABELS",
    "matrix_free_apply",
    "cauchy_constant_sum",
    "flatten",
    "unflatten",
]

_LEFT = np.stack([cl.left_mul_matrix(cl.basis(a)) for a in range(8)])
_RIGHT = np.stack([cl.right_mul_matrix(cl.basis(a)) for a in range(8)])
_INV = cl.involution_matrix()


@dataclass(frozen=True)
class NearField:
    """Near-field quadrature settings."""

    r_factor: float = 3.0
    levels: int = 3
    self_order: int = 8
    curved: bool = False
    # "linear" adds a least-squares gradient term to the density on near and
    # self panels; "constant" freezes it at the panel's nodal value
    density: str = "linear"
    # target rows per assembly chunk
    chunk: int = 128


def flatten(h) -> np.ndarray:
    return np.ascontiguousarray(h, dtype=complex).reshape(-1)


def unflatten(h) -> np.ndarray:
    h = np.asarray(h, dtype=complex)
    if h.ndim == 1:
        if h.size % 8:
            raise ValueError(f"density length {h.size} is not divisible by 8")
        return h.reshape(-1, 8)
    return h


@dataclass(eq=False)
class DenseOperator:
    """An assembled ``8N x 8N`` complex matrix on a given surface."""

    matrix: np.ndarray
    surface: QuadratureSurface
    k: complex

    @property
    def shape(self):
        return self.matrix.shape

    def apply(self, h) -> np.ndarray:
        return unflatten(self.matrix @ flatten(h))

    def __matmul__(self, h):
        return self.apply(h)


@dataclass(eq=False)
class BlockDiagonal:
    """Pointwise operator with one ``8 x 8`` block per node."""

    blocks: np.ndarray
    surface: QuadratureSurface

    def apply(self, h) -> np.ndarray:
        return np.einsum("ipq,iq->ip", self.blocks, unflatten(h))

    def __matmul__(self, h):
        return self.apply(h)

    def dense(self) -> DenseOperator:
        n = len(self.blocks)
        out = np.zeros((8 * n, 8 * n), dtype=complex)
        for i, b in enumerate(self.blocks):
            out[8 * i:8 * i + 8, 8 * i:8 * i + 8] = b
        return DenseOperator(out, self.surface, 0j)

    @property
    def matrix(self) -> np.ndarray:
        return self.dense().matrix


@dataclass(eq=False)
class CliffordOperator:
    """Integral operator ``(K h)_i = sum_j field[i, j] h_j`` (Clifford products)."""

    field: np.ndarray
    surface: QuadratureSurface
    k: complex

    def apply(self, h) -> np.ndarray:
        h = unflatten(h)
        # T[i, a, b] = sum_j field[i, j, a] h[j, b]
        T = np.einsum("ija,jb->iab", self.field, h, optimize=True)
        return np.einsum("iab,abc->ic", T, cl.structure_constants(), optimize=True)

    def __matmul__(self, h):
        return self.apply(h)

    def dense_rows(self, rows: slice) -> np.ndarray:
        """Rows ``8*rows`` of the expanded matrix, shape ``(m, 8, N, 8)``."""
        F = self.field[rows]
        m, n, _ = F.shape
        blocks = (F.reshape(m * n, 8) @ _LEFT.reshape(8, 64)).reshape(m, n, 8, 8)
        return blocks.transpose(0, 2, 1, 3)

    def dense(self) -> DenseOperator:
        n = self.surface.size
        out = np.empty((n, 8, n, 8), dtype=complex)
        for s in range(0, n, 128):
            out[s:s + 128] = self.dense_rows(slice(s, s + 128))
        return DenseOperator(out.reshape(8 * n, 8 * n), self.surface, self.k)

    @property
    def matrix(self) -> np.ndarray:
        return self.dense().matrix

    def right_multiplied(self, w) -> "CliffordOperator":
        """Compose with pointwise left multiplication by the nodal multivectors ``w``."""
        w = cl.as_mv(w)
        Rw = np.einsum("jb,abc->jac", w, cl.structure_constants())
        F = np.matmul(self.field.transpose(1, 0, 2), Rw).transpose(1, 0, 2)
        return CliffordOperator(np.ascontiguousarray(F), self.surface, self.k)


# --------------------------------------------------------------------------
# panel integrals
# --------------------------------------------------------------------------


@lru_cache(maxsize=8)
def _children(surface: QuadratureSurface, levels: int, curved: bool):
    return _refine(surface, np.arange(surface.size), levels, curved)


def _self_points(surface: QuadratureSurface, rows: np.ndarray, order: int):
    """Polar-rule points ``(m, P, 3)`` and weights ``(m, P)`` on each row's own panel."""
    s, t, w = polar_rule(order)
    x = surface.nodes[rows]
    c = surface.corners[rows]
    pts, wts = [], []
    for a, b in ((0, 1), (1, 2), (2, 0)):
        A = c[:, a] - x
        B = c[:, b] - x
        area2 = np.linalg.norm(np.cross(A, B), axis=1)
        dirs = (1 - t)[None, :, None] * A[:, None, :] + t[None, :, None] * B[:, None, :]
        pts.append(x[:, None, :] + s[None, :, None] * dirs)
        wts.append(w[None, :] * area2[:, None])
    return np.concatenate(pts, axis=1), np.concatenate(wts, axis=1)


def panel_integrals(
    surface: QuadratureSurface,
    rows,
    integrand: Callable[[np.ndarray, np.ndarray], np.ndarray],
    near: NearField,
    self_integrand: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
    moments: bool = False,
):
    """``out[r, j] = int_{panel j} integrand(y - x_i, n(y)) dy`` for ``i = rows[r]``.

    Diagonal entries hold ``self_integrand`` integrated with the polar rule
    (zero when it is ``None``).

    With ``moments=True`` also returns the first moments
    ``int_{panel j} integrand(y - x_i, n(y)) (y - y_j) dy`` on the near and
    self pairs as ``(r, j, values)`` with ``values`` of shape ``(p, 3, q)``;
    the self moments use the full ``integrand``, whose singularity the
    factor ``y - y_i`` weakens by one order.  Far pairs have zero first
    moment under the centroid rule.
    """
    rows = np.asarray(rows)
    m = len(rows)
    x = surface.nodes[rows]
    z = surface.nodes[None, :, :] - x[:, None, :]
    loc = np.arange(m)
    z[loc, rows] = surface.normals[rows]  # placeholder, overwritten below
    ny = np.broadcast_to(surface.normals[None], z.shape)
    out = integrand(z, ny) * surface.weights[None, :, None]
    out[loc, rows] = 0.0
    q = out.shape[-1]
    mom_r, mom_j, mom_v = [], [], []

    if near.levels > 0 and near.r_factor > 0:
        dist = np.linalg.norm(z, axis=2)
        mask = dist < near.r_factor * surface.panel_diam[None, :]
        mask[loc, rows] = False
        ri, pj = np.nonzero(mask)
        if len(ri):
            patch = _children(surface, near.levels, near.curved)
            nc = patch.weights.shape[1]
            step = max(1, 200_000 // nc)
            for s in range(0, len(ri), step):
                a, b = ri[s:s + step], pj[s:s + step]
                zc = patch.nodes[b] - x[a][:, None, :]
                vals = integrand(zc, patch.normals[b])
                wv = patch.weights[b][..., None] * vals
                out[a, b] = wv.sum(axis=1)
                if moments:
                    off = patch.nodes[b] - surface.nodes[b][:, None, :]
                    mom_r.append(a)
                    mom_j.append(b)
                    mom_v.append(np.einsum("pcd,pcq->pdq", off, wv))

    if self_integrand is not None or moments:
        pts, wts = _self_points(surface, rows, near.self_order)
        zs = pts - x[:, None, :]
        ns = np.broadcast_to(surface.normals[rows][:, None, :], zs.shape)
        if self_integrand is not None:
            out[loc, rows] = np.einsum("mp,mpq->mq", wts, self_integrand(zs, ns))
        if moments:
            mom_r.append(loc)
            mom_j.append(rows)
            mom_v.append(np.einsum("mp,mpd,mpq->mdq", wts, zs, integrand(zs, ns)))

    if not moments:
        return out
    if mom_r:
        mom = (np.concatenate(mom_r), np.concatenate(mom_j), np.concatenate(mom_v))
    else:
        mom = (np.zeros(0, int), np.zeros(0, int), np.zeros((0, 3, q), complex))
    return out, mom


def _moment_correction(surface: QuadratureSurface, m: int, mom, columns) -> np.ndarray:
    """Dense ``(m, N, len(columns))`` contribution of the linear density
    reconstruction: ``sum_{j,d} mom[r, j, d, c] * stencil[3j + d, l]``."""
    ri, pj, vals = mom
    n = surface.size
    lam = gradient_stencil(surface)
    out = np.zeros((m, n, len(columns)), dtype=complex)
    if len(ri) == 0:
        return out
    r3 = np.repeat(ri, 3)
    c3 = (3 * pj[:, None] + np.arange(3)[None, :]).ravel()
    for t, c in enumerate(columns):
        Q = sp.csr_matrix((vals[:, :, c].ravel(), (r3, c3)), shape=(m, 3 * n))
        out[..., t] = (Q @ lam).toarray()
    return out


def _cauchy_integrand(k: complex):
    """``Psi_k(z) n`` as (alpha, a, b) and ``Psi_0(z) n`` as (alpha, b): 11 columns."""

    def f(z, n):
        r = np.linalg.norm(z, axis=-1)
        ph = -np.exp(1j * k * r) / (FOUR_PI * r)
        gk = ((-1.0 / r**2 + 1j * k / r) * ph)[..., None] * z
        sk = -1j * k * ph
        g0 = z / (FOUR_PI * r**3)[..., None]
        out = np.empty(z.shape[:-1] + (11,), dtype=complex)
        out[..., 0] = np.einsum("...i,...i->...", gk, n)
        out[..., 1:4] = sk[..., None] * n
        out[..., 4:7] = np.cross(gk, n)
        out[..., 7] = np.einsum("...i,...i->...", g0, n)
        out[..., 8:11] = np.cross(g0, n)
        return out

    return f


def _cauchy_self_integrand(k: complex):
    """``(Psi_k - Psi_0)(z) n`` in the same 11-column layout (static columns zero)."""

    def f(z, n):
        r = np.linalg.norm(z, axis=-1)
        ikr = 1j * k * r
        e = np.exp(ikr)
        s = 1j * k * e / (FOUR_PI * r)
        num = (1.0 - ikr) * e - 1.0
        small = np.abs(ikr) < 1e-3
        zz = ikr[small]
        num[small] = zz**2 * (-0.5 - zz / 3.0 - zz**2 / 8.0)
        g = (num / (FOUR_PI * r**3))[..., None] * z
        out = np.zeros(z.shape[:-1] + (11,), dtype=complex)
        out[..., 0] = np.einsum("...i,...i->...", g, n)
        out[..., 1:4] = s[..., None] * n
        out[..., 4:7] = np.cross(g, n)
        return out

    return f


def _check_density(near: NearField) -> bool:
    if near.density not in ("linear", "constant"):
        raise ValueError(f"unknown density reconstruction {near.density!r}")
    return near.density == "linear"


def _cauchy_rows(surface: QuadratureSurface, k: complex, rows: slice, near: NearField) -> np.ndarray:
    """Kernel-field rows of the discrete ``C_k``."""
    idx = np.arange(surface.size)[rows]
    linear = _check_density(near)
    res = panel_integrals(surface, idx, _cauchy_integrand(k), near, _cauchy_self_integrand(k), moments=linear)
    I, mom = res if linear else (res, None)
    m = len(idx)
    W = np.zeros((m, surface.size, 8), dtype=complex)
    W[..., 0:7] = 2.0 * I[..., 0:7]
    if linear:
        W[..., 0:7] += 2.0 * _moment_correction(surface, m, mom, range(7))
    loc = np.arange(m)
    # subtraction: coefficient of f(x_i) is 1 - sum_{j != i} 2 int Psi_0 n
    stat = 2.0 * I[..., 7:11].sum(axis=1)
    W[loc, idx, 0] += 1.0 - stat[:, 0]
    W[loc, idx, 4:7] -= stat[:, 1:4]
    return W


def assemble_Ck(surface: QuadratureSurface, k, near: NearField = NearField()) -> CliffordOperator:
    """Discrete ``C_k h(x) = 2 pv int Psi_k(y - x) n(y) h(y) dy``."""
    k = complex(k)
    n = surface.size
    W = np.empty((n, n, 8), dtype=complex)
    for s in range(0, n, near.chunk):
        W[s:s + near.chunk] = _cauchy_rows(surface, k, slice(s, s + near.chunk), near)
    if not np.all(np.isfinite(W)):
        raise FloatingPointError("non-finite kernel value during assembly")
    return CliffordOperator(W, surface, k)


def _normals_mv(surface: QuadratureSurface) -> np.ndarray:
    return cl.vector(surface.normals)


def assemble_Rk(surface: QuadratureSurface, k, near: NearField = NearField(), Ck: CliffordOperator | None = None) -> CliffordOperator:
    """Discrete ``R_k h(x) = 2 pv int Psi_k(y - x) h(y) dy``, built as ``C_k S``."""
    if Ck is None:
        Ck = assemble_Ck(surface, k, near)
    return Ck.right_multiplied(_normals_mv(surface))


def cauchy_constant_sum(surface: QuadratureSurface, near: NearField | None = None) -> np.ndarray:
    """``2 sum_{j != i} int_j Psi_0(y - x_i) n(y) dy`` per node, as ``(N, 8)``.

    With ``near=None`` (or ``levels = 0``) this is the plain centroid sum
    ``2 sum_{j != i} w_j Psi_0(y_j - x_i) n_j``.
    """
    near = near or NearField(levels=0)
    n = surface.size
    out = np.zeros((n, 8), dtype=complex)
    for s in range(0, n, near.chunk):
        idx = np.arange(n)[s:s + near.chunk]
        I = panel_integrals(surface, idx, _cauchy_integrand(0.0), near)
        tot = 2.0 * I[..., 7:11].sum(axis=1)
        out[idx, 0] = tot[:, 0]
        out[idx, 4:7] = tot[:, 1:4]
    return out


def _pointwise_blocks(surface: QuadratureSurface):
    nv = _normals_mv(surface)
    L = cl.left_mul_matrix(nv)
    R = cl.right_mul_matrix(nv)
    return L, R


def assemble_S(surface: QuadratureSurface) -> BlockDiagonal:
    L, _ = _pointwise_blocks(surface)
    return BlockDiagonal(L, surface)


def assemble_N(surface: QuadratureSurface) -> BlockDiagonal:
    L, R = _pointwise_blocks(surface)
    return BlockDiagonal(L @ R @ _INV, surface)


def assemble_M(surface: QuadratureSurface) -> BlockDiagonal:
    """``M h = h + h^ n + n h^ n`` per node."""
    L, R = _pointwise_blocks(surface)
    return BlockDiagonal(np.eye(8) + R @ _INV + L @ R @ _INV, surface)


def _system_dense(left: np.ndarray | None, op: CliffordOperator, right: np.ndarray | None) -> np.ndarray:
    """``I - left . op . right`` as an ``8N x 8N`` matrix, built row-chunk by row-chunk."""
    n = op.surface.size
    A = np.empty((n, 8, n, 8), dtype=complex)
    if right is not None:
        # U[j, a] = L_a @ right_j
        U = np.einsum("apq,jqr->japr", _LEFT, right)
    for s in range(0, n, 64):
        F = op.field[s:s + 64]
        m = len(F)
        if right is None:
            B = (F.reshape(m * n, 8) @ _LEFT.reshape(8, 64)).reshape(m, n, 8, 8)
        else:
            B = np.einsum("ija,japr->ijpr", F, U, optimize=True)
        if left is not None:
            B = np.matmul(left[s:s + m][:, None], B)
        A[s:s + m] = -B.transpose(0, 2, 1, 3)
    A = A.reshape(8 * n, 8 * n)
    A[np.diag_indices(8 * n)] += 1.0
    return A


def spin_system(surface: QuadratureSurface, k, near: NearField = NearField(), Rk: CliffordOperator | None = None) -> DenseOperator:
    """``I - M R_k``."""
    k = complex(k)
    if Rk is None:
        Rk = assemble_Rk(surface, k, near)
    return DenseOperator(_system_dense(assemble_M(surface).blocks, Rk, None), surface, k)


def rotation_system(surface: QuadratureSurface, k, near: NearField = NearField(), Ck: CliffordOperator | None = None) -> DenseOperator:
    """``I - C_k N``."""
    k = complex(k)
    if Ck is None:
        Ck = assemble_Ck(surface, k, near)
    return DenseOperator(_system_dense(None, Ck, assemble_N(surface).blocks), surface, k)


def spin_apply(Rk: CliffordOperator) -> Callable[[np.ndarray], np.ndarray]:
    """Matrix-free ``h -> h - M R_k h`` on flat vectors."""
    M = assemble_M(Rk.surface)

    def apply(h):
        h = unflatten(h)
        return flatten(h - M.apply(Rk.apply(h)))

    return apply


def rotation_apply(Ck: CliffordOperator) -> Callable[[np.ndarray], np.ndarray]:
    N = assemble_N(Ck.surface)

    def apply(f):
        f = unflatten(f)
        return flatten(f - Ck.apply(N.apply(f)))

    return apply


def matrix_free_apply(surface: QuadratureSurface, k, h, near: NearField = NearField()) -> np.ndarray:
    """``R_k h`` with kernel rows generated on the fly (memory ``O(chunk * N)``).

    ``h`` may carry extra trailing columns, ``(N, 8, m)``, to apply to
    several densities at once.
    """
    k = complex(k)
    h = np.asarray(h, dtype=complex)
    single = h.ndim == 2
    H = h[..., None] if single else h
    Sh = np.einsum("jab,jbm->jam", cl.left_mul_matrix(_normals_mv(surface)), H)
    G = cl.structure_constants()
    out = np.empty_like(H)
    n = surface.size
    for s in range(0, n, near.chunk):
        W = _cauchy_rows(surface, k, slice(s, s + near.chunk), near)
        T = np.einsum("ija,jbm->iabm", W, Sh, optimize=True)
        out[s:s + near.chunk] = np.einsum("iabm,abc->icm", T, G, optimize=True)
    return out[..., 0] if single else out


# --------------------------------------------------------------------------
# exterior field evaluation
# --------------------------------------------------------------------------


def field_eval_RkOmega(surface: QuadratureSurface, k, h, points) -> np.ndarray:
    """``F(x) = -int Psi_k(y - x) h(y) dy`` at exterior points, ``(P, 8)``.

    Point validation (inside / too close) is the caller's business; see
    :func:`spinbie.scattering.check_exterior_points`.
    """
    k = complex(k)
    h = unflatten(h)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    G = cl.structure_constants()
    out = np.empty((len(pts), 8), dtype=complex)
    for s in range(0, len(pts), 64):
        z = surface.nodes[None, :, :] - pts[s:s + 64, None, :]
        r = np.linalg.norm(z, axis=-1)
        if np.any(r == 0):
            raise ValueError("evaluation point coincides with a quadrature node")
        ph = -np.exp(1j * k * r) / (FOUR_PI * r)
        K = np.zeros(z.shape[:-1] + (8,), dtype=complex)
        K[..., 0] = -1j * k * ph
        K[..., 1:4] = ((-1.0 / r**2 + 1j * k / r) * ph)[..., None] * z
        K *= surface.weights[None, :, None]
        T = np.einsum("pja,jb->pab", K, h, optimize=True)
        out[s:s + 64] = -np.einsum("pab,abc->pc", T, G, optimize=True)
    return out


# --------------------------------------------------------------------------
# classical layer potentials
# --------------------------------------------------------------------------


@dataclass(eq=False)
class ClassicalOperators:
    """Dense classical operators on ambient 3-vectors per node.

    ``M_prime`` is ``+2ik int Phi_k(y - x) n(x) . v(y) dy``: this sign is the
    one produced by the Clifford products in the compression of ``C_k``.

    ``Dl, Dl_adjoint, Dl_doubleprime``: ``(N, N)``; ``Mdip``: ``(N, 3, N, 3)``;
    ``Dl_prime``: ``(N, 3, N)``; ``M_prime``: ``(N, N, 3)``.
    """

    Dl: np.ndarray
    Dl_adjoint: np.ndarray
    Mdip: np.ndarray
    Dl_prime: np.ndarray
    Dl_doubleprime: np.ndarray
    M_prime: np.ndarray
    surface: QuadratureSurface
    k: complex


def _classical_integrand(k: complex):
    # columns: grad.n_y | grad (3) | Phi n_y (3) | grad x n_y (3) | Phi | grad0.n_y
    def f(z, n):
        r = np.linalg.norm(z, axis=-1)
        p = -np.exp(1j * k * r) / (FOUR_PI * r)
        g = ((-1.0 / r**2 + 1j * k / r) * p)[..., None] * z
        g0 = z / (FOUR_PI * r**3)[..., None]
        out = np.empty(z.shape[:-1] + (12,), dtype=complex)
        out[..., 0] = np.einsum("...i,...i->...", g, n)
        out[..., 1:4] = g
        out[..., 4:7] = p[..., None] * n
        out[..., 7:10] = np.cross(g, n)
        out[..., 10] = p
        out[..., 11] = np.einsum("...i,...i->...", g0, n)
        return out

    return f


def _classical_self_integrand(k: complex):
    # on a flat self panel only the Phi columns survive against n(x) = n(y)
    def f(z, n):
        r = np.linalg.norm(z, axis=-1)
        p = -np.exp(1j * k * r) / (FOUR_PI * r)
        out = np.zeros(z.shape[:-1] + (12,), dtype=complex)
        out[..., 4:7] = p[..., None] * n
        out[..., 10] = p
        return out

    return f


def assemble_classical(surface: QuadratureSurface, k, near: NearField = NearField()) -> ClassicalOperators:
    """Double layer, its adjoint, the magnetic dipole operator and the three
    coupling operators appearing in the compression of ``C_k`` to tangential fields."""
    k = complex(k)
    n = surface.size
    nx = surface.normals
    Dl = np.empty((n, n), dtype=complex)
    Dla = np.empty((n, n), dtype=complex)
    Md = np.empty((n, 3, n, 3), dtype=complex)
    Dp = np.empty((n, 3, n), dtype=complex)
    Dpp = np.empty((n, n), dtype=complex)
    Mp = np.empty((n, n, 3), dtype=complex)
    eye = np.eye(3)
    for s in range(0, n, near.chunk):
        idx = np.arange(n)[s:s + near.chunk]
        linear = _check_density(near)
        res = panel_integrals(surface, idx, _classical_integrand(k), near, _classical_self_integrand(k), moments=linear)
        I, mom = res if linear else (res, None)
        loc = np.arange(len(idx))
        if linear:
            # every formula below is linear in the kernel integrals
            I[..., :11] += _moment_correction(surface, len(idx), mom, range(11))
        ni = nx[idx]
        gn, g, pn, gxn, p, gn0 = I[..., 0], I[..., 1:4], I[..., 4:7], I[..., 7:10], I[..., 10], I[..., 11]
        # solid angle seen from x_i: 1 - 2 sum_{j != i} int dPhi_0/dn_y, which is
        # the missing self contribution of the three strongly singular kernels
        omega = 1.0 - 2.0 * gn0.sum(axis=1)
        d = 2.0 * gn
        d[loc, idx] += omega
        Dl[idx] = d
        # grad Phi(x - y) = -grad Phi(y - x)
        da = -2.0 * np.einsum("ik,ijk->ij", ni, g)
        da[loc, idx] -= omega
        Dla[idx] = da
        ndg = np.einsum("ik,ijk->ij", ni, g)
        md = -2.0 * (
            np.einsum("ija,ib->iajb", g, ni) - ndg[:, None, :, None] * eye[None, :, None, :]
        )
        md[loc, :, idx, :] += omega[:, None, None] * eye
        Md[idx] = md
        Dp[idx] = 2j * k * np.cross(ni[:, None, :], pn).transpose(0, 2, 1)
        Dpp[idx] = 2.0 * np.einsum("ik,ijk->ij", ni, gxn)
        Mp[idx] = 2j * k * p[..., None] * ni[:, None, :]
    return ClassicalOperators(Dl, Dla, Md, Dp, Dpp, Mp, surface, k)


def tangent_frames(normals: np.ndarray) -> np.ndarray:
    """Two orthonormal tangents per node, ``(N, 2, 3)``."""
    n = np.asarray(normals, dtype=float)
    helper = np.where(np.abs(n[:, [0]]) < 0.9, [[1.0, 0, 0]], [[0, 1.0, 0]])
    t1 = np.cross(n, helper)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(n, t1)
    return np.stack([t1, t2], axis=1)


BLOCK_LABELS = ("u1", "v", "u2", "beta")


def proposition_blocks(Ck: CliffordOperator) -> dict[tuple[str, str], np.ndarray]:
    """Split the compression ``N+ C_k N+`` in the decomposition
    ``f = u1 + n x v + *(u2 n) + *0`` into its 4 x 4 block operators.

    Tangential vectors are expressed in the frames of :func:`tangent_frames`,
    so the ``v`` blocks have ``2N`` rows or columns.  Keys are
    ``(output, input)`` labels from :data:`BLOCK_LABELS`.
    """
    surf = Ck.surface
    n = surf.size
    nrm = surf.normals
    T = tangent_frames(nrm)
    # embeddings of each input component into nodal multivectors, (N, 8, d)
    emb = {
        "u1": np.zeros((n, 8, 1), dtype=complex),
        "v": np.zeros((n, 8, 2), dtype=complex),
        "u2": np.zeros((n, 8, 1), dtype=complex),
        "beta": np.zeros((n, 8, 1), dtype=complex),
    }
    emb["u1"][:, 0, 0] = 1.0
    emb["v"][:, 1:4, :] = np.cross(nrm[:, None, :], T).transpose(0, 2, 1)
    emb["u2"][:, 4:7, 0] = nrm
    emb["beta"][:, 7, 0] = 1.0
    # decodings of a tangential multivector, (N, d, 8)
    dec = {
        "u1": np.zeros((n, 1, 8), dtype=complex),
        "v": np.zeros((n, 2, 8), dtype=complex),
        "u2": np.zeros((n, 1, 8), dtype=complex),
        "beta": np.zeros((n, 1, 8), dtype=complex),
    }
    dec["u1"][:, 0, 0] = 1.0
    # v = a x n, then project on the frame
    cross_n = np.einsum("ijk,nk->nij", _levi_civita(), nrm)  # (a x n)_i = eps_ijk a_j n_k
    dec["v"][:, :, 1:4] = np.einsum("ndi,nij->ndj", T, cross_n)
    dec["u2"][:, 0, 4:7] = nrm
    dec["beta"][:, 0, 7] = 1.0
    Np = BlockDiagonal(0.5 * (np.eye(8) + assemble_N(surf).blocks), surf)
    out = {}
    for lin, E in emb.items():
        # right-hand N+: the trivector input is not tangential and drops out
        E = np.einsum("ipq,iqd->ipd", Np.blocks, E)
        # C applied to every embedded column: (N, 8, N, d)
        cols = np.einsum("ija,apq,jqd->ipjd", Ck.field, _LEFT, E, optimize=True)
        cols = np.einsum("ipq,iqjd->ipjd", Np.blocks, cols)
        for lout, D in dec.items():
            blk = np.einsum("iep,ipjd->iejd", D, cols)
            out[(lout, lin)] = blk.reshape(n * D.shape[1], n * E.shape[2])
    return out


def classical_blocks(c: ClassicalOperators) -> dict[tuple[str, str], np.ndarray]:
    """The classical operators in the block layout of :func:`proposition_blocks`.

    Only the six non-zero blocks appear; every other block of the
    compression should vanish.
    """
    n = c.surface.size
    T = tangent_frames(c.surface.normals)
    return {
        ("u1", "u1"): c.Dl,
        ("v", "u1"): np.einsum("ida,iaj->idj", T, c.Dl_prime).reshape(2 * n, n),
        ("v", "v"): np.einsum("ida,iajb,jeb->idje", T, c.Mdip, T).reshape(2 * n, 2 * n),
        ("u2", "u1"): c.Dl_doubleprime,
        ("u2", "v"): np.einsum("ijb,jeb->ije", c.M_prime, T).reshape(n, 2 * n),
        ("u2", "u2"): -c.Dl_adjoint,
    }


def _levi_civita() -> np.ndarray:
    e = np.zeros((3, 3, 3))
    for i, j, k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        e[i, j, k] = 1.0
        e[i, k, j] = -1.0
    return e
