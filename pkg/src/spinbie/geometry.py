"""Closed triangulated surfaces and centroid-rule Nystrom quadrature."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

__all__ = [
    "MeshError",
    "TriangleMesh",
    "QuadratureSurface",
    "RefinedPatch",
    "icosphere",
    "ellipsoid",
    "load_obj",
    "save_obj",
    "quadrature_from_mesh",
    "refine_panels_near",
    "subdivision_barycentrics",
    "polar_rule",
    "self_panel_points",
    "winding_number",
    "distance_to_nodes",
    "panel_neighbors",
    "gradient_stencil",
]


class MeshError(ValueError):
    """Invalid surface mesh (parse failure, open or non-manifold, inconsistent winding)."""


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    # ("sphere", center, radius) or ("ellipsoid", center, semiaxes); None for ingested meshes
    analytic: tuple | None = None

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def corners(self) -> np.ndarray:
        """``(T, 3, 3)`` vertex coordinates per triangle."""
        return self.vertices[self.triangles]

    def face_areas(self) -> np.ndarray:
        c = self.corners
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    def area(self) -> float:
        return float(self.face_areas().sum())

    def signed_volume(self) -> float:
        c = self.corners
        return float(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6.0)

    def validate(self) -> None:
        """Raise :class:`MeshError` unless watertight and consistently wound."""
        t = self.triangles
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError("triangles must be an (T, 3) index array")
        if t.size and (t.min() < 0 or t.max() >= len(self.vertices)):
            raise MeshError("triangle index out of range")
        directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        undirected = np.sort(directed, axis=1)
        edges, counts = np.unique(undirected, axis=0, return_counts=True)
        bad = edges[counts != 2]
        if len(bad):
            e = bad[0]
            kind = "boundary" if counts[counts != 2][0] == 1 else "non-manifold"
            raise MeshError(f"mesh is not watertight: {kind} edge ({e[0]}, {e[1]})")
        d_edges, d_counts = np.unique(directed, axis=0, return_counts=True)
        if np.any(d_counts > 1):
            e = d_edges[d_counts > 1][0]
            raise MeshError(
                f"inconsistent orientation: directed edge ({e[0]}, {e[1]}) used by two triangles"
            )

    def flipped(self) -> "TriangleMesh":
        return TriangleMesh(self.vertices, self.triangles[:, ::-1], self.analytic)

    def project(self, points: np.ndarray) -> np.ndarray:
        """Map points onto the analytic surface this mesh approximates."""
        if self.analytic is None:
            return points
        kind, center, par = self.analytic
        center = np.asarray(center, dtype=float)
        d = points - center
        if kind == "sphere":
            return center + par * d / np.linalg.norm(d, axis=-1, keepdims=True)
        axes = np.asarray(par, dtype=float)
        s = np.sqrt(np.sum((d / axes) ** 2, axis=-1, keepdims=True))
        return center + d / s


def _icosahedron():
    t = (1.0 + math.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=float,
    )
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    return v / np.linalg.norm(v, axis=1, keepdims=True), f


@lru_cache(maxsize=None)
def _unit_icosphere(subdivisions: int):
    verts, faces = _icosahedron()
    verts = [tuple(p) for p in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (i, j) if i < j else (j, i)
            if key not in cache:
                p = (np.asarray(verts[i]) + np.asarray(verts[j])) / 2.0
                p /= np.linalg.norm(p)
                cache[key] = len(verts)
                verts.append(tuple(p))
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = np.array(new)
    v = np.array(verts)
    f = np.asarray(faces)
    c = v[f]
    outward = np.einsum("ij,ij->i", np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), c.mean(axis=1))
    f = np.where((outward < 0)[:, None], f[:, ::-1], f)
    return v, f


def icosphere(subdivisions: int = 2, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Geodesic sphere with ``20 * 4**subdivisions`` outward-wound triangles."""
    if subdivisions < 0 or int(subdivisions) != subdivisions:
        raise ValueError("subdivisions must be a non-negative integer")
    if radius <= 0:
        raise ValueError("radius must be positive")
    v, f = _unit_icosphere(int(subdivisions))
    center = np.asarray(center, dtype=float)
    return TriangleMesh(radius * v + center, f, ("sphere", tuple(center), float(radius)))


def ellipsoid(subdivisions: int = 2, semiaxes=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    axes = np.asarray(semiaxes, dtype=float)
    if axes.shape != (3,) or np.any(axes <= 0):
        raise ValueError("semiaxes must be three positive numbers")
    v, f = _unit_icosphere(int(subdivisions))
    center = np.asarray(center, dtype=float)
    return TriangleMesh(v * axes + center, f, ("ellipsoid", tuple(center), tuple(axes)))


def load_obj(path) -> TriangleMesh:
    """Read the ``v``/``f`` subset of a Wavefront OBJ file.

    Polygons are fan-triangulated. A mesh with negative signed volume is
    flipped (with a warning) so that normals point out of the scatterer.
    """
    path = Path(path)
    verts, tris = [], []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            try:
                if parts[0] == "v":
                    verts.append([float(s) for s in parts[1:4]])
                    if len(parts) < 4:
                        raise ValueError("vertex needs three coordinates")
                elif parts[0] == "f":
                    idx = [int(s.split("/")[0]) for s in parts[1:]]
                    if len(idx) < 3:
                        raise ValueError("face needs at least three vertices")
                    idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                    for m in range(1, len(idx) - 1):
                        tris.append([idx[0], idx[m], idx[m + 1]])
            except ValueError as exc:
                raise MeshError(f"{path}:{lineno}: cannot parse {parts[0]!r} record: {exc}") from None
    if not tris:
        raise MeshError(f"{path}: no faces found")
    mesh = TriangleMesh(np.array(verts, dtype=float), np.array(tris, dtype=np.int64))
    mesh.validate()
    vol = mesh.signed_volume()
    if vol < 0:
        log.warning("%s: inward-oriented mesh (volume %.6g), flipping winding", path, vol)
        mesh = mesh.flipped()
    return mesh


def save_obj(mesh: TriangleMesh, path) -> None:
    with Path(path).open("w") as fh:
        for p in mesh.vertices:
            fh.write(f"v {float(p[0])!r} {float(p[1])!r} {float(p[2])!r}\n")
        for t in mesh.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


@dataclass(frozen=True, eq=False)
class QuadratureSurface:
    """One Nystrom node per triangle: centroid, unit face normal, area weight."""

    nodes: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    panel_diam: np.ndarray
    corners: np.ndarray
    mesh: TriangleMesh = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.nodes)

    def area(self) -> float:
        return float(self.weights.sum())

    def integrate(self, values) -> np.ndarray:
        values = np.asarray(values)
        return np.tensordot(self.weights, values, axes=(0, 0))


def quadrature_from_mesh(mesh: TriangleMesh) -> QuadratureSurface:
    c = mesh.corners
    cr = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    twice_area = np.linalg.norm(cr, axis=1)
    if np.any(twice_area <= 1e-14 * max(1.0, float(np.abs(c).max()) ** 2)):
        bad = int(np.argmin(twice_area))
        raise MeshError(f"degenerate (zero-area) triangle {bad}")
    edges = np.stack(
        [c[:, 1] - c[:, 0], c[:, 2] - c[:, 1], c[:, 0] - c[:, 2]], axis=1
    )
    arrays = dict(
        nodes=c.mean(axis=1),
        normals=cr / twice_area[:, None],
        weights=0.5 * twice_area,
        panel_diam=np.linalg.norm(edges, axis=2).max(axis=1),
        corners=c.copy(),
    )
    for a in arrays.values():
        a.setflags(write=False)
    return QuadratureSurface(mesh=mesh, **arrays)


@lru_cache(maxsize=None)
def subdivision_barycentrics(levels: int):
    """Midpoint subdivision of the reference triangle, ``4**levels`` children.

    Returns ``(corner_bary, centroid_bary)`` with shapes ``(C, 3, 3)`` and
    ``(C, 3)``; all children have equal area.
    """
    tris = np.eye(3)[None]
    for _ in range(levels):
        a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
        ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
        tris = np.concatenate(
            [
                np.stack([a, ab, ca], 1),
                np.stack([b, bc, ab], 1),
                np.stack([c, ca, bc], 1),
                np.stack([ab, bc, ca], 1),
            ]
        )
    tris.setflags(write=False)
    cent = tris.mean(axis=1)
    cent.setflags(write=False)
    return tris, cent


@dataclass(frozen=True)
class RefinedPatch:
    """Refined quadrature for a set of parent panels.

    ``nodes``/``normals`` are ``(P, C, 3)``, ``weights`` is ``(P, C)`` with
    ``C = 4**levels`` children per parent panel ``panels[p]``.
    """

    panels: np.ndarray
    nodes: np.ndarray
    normals: np.ndarray
    weights: np.ndarray


def _refine(surface: QuadratureSurface, panels: np.ndarray, levels: int, curved: bool) -> RefinedPatch:
    bary, cbary = subdivision_barycentrics(levels)
    corners = surface.corners[panels]
    if not curved or surface.mesh.analytic is None:
        nodes = np.einsum("cj,pjk->pck", cbary, corners)
        weights = np.repeat((surface.weights[panels] / len(cbary))[:, None], len(cbary), axis=1)
        normals = np.repeat(surface.normals[panels][:, None, :], len(cbary), axis=1)
        return RefinedPatch(panels, nodes, normals, weights)
    child = np.einsum("cij,pjk->pcik", bary, corners)
    child = surface.mesh.project(child)
    cr = np.cross(child[..., 1, :] - child[..., 0, :], child[..., 2, :] - child[..., 0, :])
    twice = np.linalg.norm(cr, axis=-1)
    return RefinedPatch(panels, child.mean(axis=2), cr / twice[..., None], 0.5 * twice)


def refine_panels_near(surface: QuadratureSurface, x, radius: float, levels: int, curved: bool = False) -> RefinedPatch:
    """Subdivide every panel whose centroid lies within ``radius`` of ``x``.

    Children come from ``levels`` rounds of midpoint subdivision; with
    ``curved=True`` on analytic meshes the child vertices are reprojected
    onto the exact surface.
    """
    if not 0 <= levels <= 6:
        raise ValueError("levels must lie in 0..6")
    x = np.asarray(x, dtype=float)
    panels = np.flatnonzero(np.linalg.norm(surface.nodes - x, axis=1) < radius)
    if levels == 0:
        return RefinedPatch(
            panels,
            surface.nodes[panels][:, None, :],
            surface.normals[panels][:, None, :],
            surface.weights[panels][:, None],
        )
    return _refine(surface, panels, levels, curved)


@lru_cache(maxsize=None)
def polar_rule(order: int = 8):
    """Singularity-cancelling rule on a triangle seen from an interior apex.

    Returns ``(s, t, w)`` for the Duffy map of the unit square onto a triangle
    with apex ``x``: ``y = x + s((1 - t)(A - x) + t(B - x))`` with Jacobian
    ``2 |T| s``; the weights already include the ``s`` factor, so integrands
    behaving like ``1/|y - x|`` become smooth.
    """
    g, gw = np.polynomial.legendre.leggauss(order)
    g = 0.5 * (g + 1.0)
    gw = 0.5 * gw
    s, t = np.meshgrid(g, g, indexing="ij")
    w = np.outer(gw, gw) * s
    return s.ravel(), t.ravel(), w.ravel()


def self_panel_points(corner: np.ndarray, x: np.ndarray, order: int = 8):
    """Quadrature points and weights on one flat triangle, singular at ``x`` inside it."""
    s, t, w = polar_rule(order)
    pts, wts = [], []
    for a, b in ((0, 1), (1, 2), (2, 0)):
        A, B = corner[a], corner[b]
        area2 = np.linalg.norm(np.cross(A - x, B - x))
        pts.append(x + s[:, None] * ((1 - t)[:, None] * (A - x) + t[:, None] * (B - x)))
        wts.append(w * area2)
    return np.concatenate(pts), np.concatenate(wts)


def winding_number(mesh: TriangleMesh, points) -> np.ndarray:
    """Exact solid angle of the closed mesh seen from each point, over 4 pi.

    About 1 inside the scatterer and 0 outside (Van Oosterom-Strackee formula).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    c = mesh.corners
    out = np.empty(len(pts))
    for s in range(0, len(pts), 256):
        p = pts[s:s + 256]
        a = c[None, :, 0, :] - p[:, None, :]
        b = c[None, :, 1, :] - p[:, None, :]
        d = c[None, :, 2, :] - p[:, None, :]
        la, lb, ld = (np.linalg.norm(v, axis=-1) for v in (a, b, d))
        num = np.einsum("...i,...i->...", a, np.cross(b, d))
        den = (la * lb * ld + np.einsum("...i,...i->...", a, b) * ld
               + np.einsum("...i,...i->...", a, d) * lb + np.einsum("...i,...i->...", b, d) * la)
        out[s:s + 256] = 2.0 * np.arctan2(num, den).sum(axis=1) / (4.0 * math.pi)
    return out


def distance_to_nodes(surface: QuadratureSurface, points) -> tuple[np.ndarray, np.ndarray]:
    """Distance from each point to the nearest Nystrom node, and that node's index."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = np.linalg.norm(pts[:, None, :] - surface.nodes[None, :, :], axis=-1)
    idx = d.argmin(axis=1)
    return d[np.arange(len(pts)), idx], idx


def panel_neighbors(mesh: TriangleMesh) -> sp.csr_matrix:
    """Boolean panel adjacency: triangles sharing at least one vertex (no self loops)."""
    nt = len(mesh.triangles)
    inc = sp.csr_matrix(
        (np.ones(3 * nt), (np.repeat(np.arange(nt), 3), mesh.triangles.ravel())),
        shape=(nt, len(mesh.vertices)),
    )
    adj = (inc @ inc.T).tocsr()
    adj.setdiag(0)
    adj.eliminate_zeros()
    adj.data[:] = 1.0
    return adj


@lru_cache(maxsize=8)
def gradient_stencil(surface: QuadratureSurface) -> sp.csr_matrix:
    """Least-squares tangential gradients of nodal data, as a ``(3N, N)`` matrix.

    Row ``3 j + d`` gives component ``d`` of the gradient at node ``j``,
    fitted to the vertex-sharing neighbours in the tangent plane of panel
    ``j``.  Rows annihilate constants.
    """
    adj = panel_neighbors(surface.mesh)
    n = surface.size
    rows, cols, vals = [], [], []
    for j in range(n):
        nb = adj.indices[adj.indptr[j]:adj.indptr[j + 1]]
        nrm = surface.normals[j]
        helper = np.array([1.0, 0, 0]) if abs(nrm[0]) < 0.9 else np.array([0, 1.0, 0])
        t1 = np.cross(nrm, helper)
        t1 /= np.linalg.norm(t1)
        T = np.stack([t1, np.cross(nrm, t1)])
        D = (surface.nodes[nb] - surface.nodes[j]) @ T.T
        lam = T.T @ np.linalg.pinv(D)  # (3, len(nb))
        for d in range(3):
            rows += [3 * j + d] * (len(nb) + 1)
            cols += list(nb) + [j]
            vals += list(lam[d]) + [-lam[d].sum()]
    return sp.csr_matrix((vals, (rows, cols)), shape=(3 * n, n))
