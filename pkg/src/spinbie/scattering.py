"""Scattering drivers: boundary data, the spin solve, exterior fields and checks.

A solve runs in four steps.  The incoming field is embedded as a
multivector field ``F0`` and the boundary datum is ``g = -N+ F0``.  Then

    h - M R_k h = 2 g + 2 g^ n

is solved, the exterior field is ``F = R_k^Omega h``, and ``F`` is read
back as ``(E, H)``, ``u`` or ``v`` depending on the problem kind.
"""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import spherical_jn

from . import clifford as cl
from . import kernels as kn
from . import operators as op
from .geometry import QuadratureSurface, distance_to_nodes, winding_number
from .solve import LUFactor, SolveReport, gmres_solve, smallest_singular_value

log = logging.getLogger(__name__)

__all__ = [
    "KINDS",
    "PlaneWave",
    "PointSource",
    "Dipole",
    "SolverSettings",
    "ScatteringProblem",
    "DecodedField",
    "ExteriorPointError",
    "NearBoundaryWarning",
    "standard_probes",
    "check_exterior_points",
    "incident_field",
    "build_boundary_data",
    "spin_rhs",
    "spin_solve",
    "evaluate_field",
    "evaluate_scattered",
    "decode",
    "decoded_columns",
    "kind_defect",
    "constraint_residuals",
    "verify_interior_source",
    "VerificationReport",
    "resonance_scan",
    "cauchy_extension_check",
    "first_dirichlet_resonance",
]

KINDS = ("maxwell", "dirichlet", "neumann")


class ExteriorPointError(ValueError):
    """An evaluation point lies inside the scatterer or on its surface."""

    def __init__(self, index: int, point):
        self.index = index
        self.point = tuple(float(c) for c in point)
        super().__init__(f"evaluation point {index} at {self.point} is not in the exterior domain")


class NearBoundaryWarning(UserWarning):
    pass


# --------------------------------------------------------------------------
# incident fields
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PlaneWave:
    direction: tuple
    polarization: tuple | None = None


@dataclass(frozen=True)
class PointSource:
    position: tuple


@dataclass(frozen=True)
class Dipole:
    position: tuple
    moment: tuple


@dataclass(frozen=True)
class SolverSettings:
    method: str = "direct"
    tol: float = 1e-8
    restart: int = 80
    max_iters: int = 2000
    # "spin", "clifford" (the S-conjugated form) or "rotation"
    system: str = "spin"

    def __post_init__(self):
        if self.method not in ("direct", "gmres"):
            raise ValueError(f"unknown solver method {self.method!r}")
        if self.system not in ("spin", "clifford", "rotation"):
            raise ValueError(f"unknown system {self.system!r}")
        if not self.tol > 0:
            raise ValueError("solver tol must be positive")
        if self.restart < 1 or self.max_iters < 1:
            raise ValueError("restart and max_iters must be positive")


@dataclass(frozen=True, eq=False)
class ScatteringProblem:
    kind: str
    k: complex
    incident: PlaneWave | PointSource | Dipole
    surface: QuadratureSurface
    solver: SolverSettings = SolverSettings()
    near: op.NearField = op.NearField()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "k", kn.check_wavenumber(self.k))
        inc = self.incident
        if isinstance(inc, PointSource):
            if self.kind == "maxwell":
                raise ValueError("Maxwell problems take a dipole or plane-wave incident field")
            _check_interior(self.surface, inc.position)
        elif isinstance(inc, Dipole):
            if self.kind != "maxwell":
                raise ValueError("dipole incident fields are Maxwell fields")
            _check_interior(self.surface, inc.position)
        elif isinstance(inc, PlaneWave):
            d = np.asarray(inc.direction, dtype=float)
            if abs(np.linalg.norm(d) - 1) > 1e-12:
                raise ValueError("plane-wave direction must be a unit vector")
            if self.kind == "maxwell":
                if inc.polarization is None:
                    raise ValueError("Maxwell plane waves need a polarization")
                p = np.asarray(inc.polarization, dtype=complex)
                if abs(np.dot(p, d)) > 1e-12 * max(1.0, float(np.linalg.norm(p))):
                    raise ValueError("polarization must be transverse to the direction (p . d = 0)")
        else:
            raise TypeError(f"unsupported incident descriptor {inc!r}")


def _check_interior(surface: QuadratureSurface, z0) -> None:
    z0 = np.asarray(z0, dtype=float)
    w = winding_number(surface.mesh, z0[None])[0]
    dist, idx = distance_to_nodes(surface, z0[None])
    if w < 0.5 or dist[0] < 0.5 * surface.panel_diam[idx[0]]:
        raise ValueError(f"source point {tuple(z0)} is not strictly inside the scatterer")


def incident_field(problem: ScatteringProblem, x) -> np.ndarray:
    """The incoming field embedded as multivectors, ``(P, 8)``."""
    inc, k = problem.incident, problem.k
    x = np.asarray(x, dtype=float)
    if isinstance(inc, PointSource):
        return kn.helmholtz_source_field(k, inc.position, x, problem.kind)
    if isinstance(inc, Dipole):
        return kn.maxwell_dipole_field(k, inc.position, inc.moment, x)
    return kn.plane_wave_field(problem.kind, k, inc.direction, x, inc.polarization)


def build_boundary_data(problem: ScatteringProblem) -> np.ndarray:
    """``g = -N+ F0`` at every node, ``(N, 8)``."""
    s = problem.surface
    return -cl.project_N_plus(incident_field(problem, s.nodes), s.normals)


def spin_rhs(g, normals) -> np.ndarray:
    """``2 g + 2 g^ n``."""
    g = cl.as_mv(g)
    return 2.0 * g + 2.0 * cl.clifford_mul(cl.involution(g), cl.vector(normals))


# --------------------------------------------------------------------------
# solving
# --------------------------------------------------------------------------


def spin_solve(problem: ScatteringProblem, g=None) -> tuple[np.ndarray, SolveReport]:
    """Solve for the density ``h`` (``(N, 8)``).

    ``solver.system`` picks the equation: the spin equation itself, its
    S-conjugated Clifford form ``(I - (N + S + SN) C_k) f = 2 (I + S) g``
    with ``h = S f``, or the rotation equation ``(I - C_k N)(N f) = 2 g``
    whose Cauchy density ``f`` is returned as ``h = S f``.  In every case the
    result is the density for ``R_k^Omega``.  The report's residual belongs to
    the system that was solved.
    """
    s, k = problem.surface, problem.k
    settings = problem.solver
    if g is None:
        g = build_boundary_data(problem)
    g = cl.as_mv(g)
    nrm = s.normals
    Ck = op.assemble_Ck(s, k, problem.near)
    S = op.assemble_S(s)
    if settings.system == "spin":
        Rk = Ck.right_multiplied(cl.vector(nrm))
        del Ck
        apply = op.spin_apply(Rk)
        b = op.flatten(spin_rhs(g, nrm))
        build = lambda: op.spin_system(s, k, problem.near, Rk=Rk).matrix  # noqa: E731
        post = lambda x: op.unflatten(x)  # noqa: E731
    elif settings.system == "clifford":
        P = _clifford_form_blocks(s)
        apply = _clifford_form_apply(Ck, P)
        b = op.flatten(2.0 * (g + S.apply(g)))
        build = lambda: clifford_form_system(s, k, problem.near, Ck=Ck).matrix  # noqa: E731
        post = lambda x: S.apply(op.unflatten(x))  # noqa: E731
    else:
        apply = op.rotation_apply(Ck)
        b = op.flatten(2.0 * g)
        build = lambda: op.rotation_system(s, k, problem.near, Ck=Ck).matrix  # noqa: E731
        N = op.assemble_N(s)
        # the rotation unknown is N f for a Cauchy density f; R^Omega takes S f
        post = lambda x: S.apply(N.apply(op.unflatten(x)))  # noqa: E731

    if not np.any(b):
        return np.zeros((s.size, 8), dtype=complex), SolveReport(settings.method, 0.0, 0, 0.0)
    t0 = time.perf_counter()
    if settings.method == "direct":
        A = build()
        fac = LUFactor.factor(A, overwrite=True)
        del A
        x = fac.solve(b)
        res = float(np.linalg.norm(apply(x) - b) / np.linalg.norm(b))
        rep = SolveReport("direct", res, 0, time.perf_counter() - t0, fac.condition_estimate())
    else:
        x, rep = gmres_solve(apply, b, settings.tol, settings.restart, settings.max_iters)
    log.info("solved %s system (%s): residual %.2e", settings.system, rep.method, rep.residual_norm)
    return post(x), rep


def _clifford_form_blocks(surface: QuadratureSurface) -> np.ndarray:
    N = op.assemble_N(surface).blocks
    S = op.assemble_S(surface).blocks
    return N + S + S @ N


def _clifford_form_apply(Ck: op.CliffordOperator, P: np.ndarray):
    def apply(f):
        f = op.unflatten(f)
        return op.flatten(f - np.einsum("ipq,iq->ip", P, Ck.apply(f)))

    return apply


def clifford_form_system(surface: QuadratureSurface, k, near: op.NearField = op.NearField(), Ck=None) -> op.DenseOperator:
    """``I - (N + S + SN) C_k`` as a dense matrix."""
    k = complex(k)
    if Ck is None:
        Ck = op.assemble_Ck(surface, k, near)
    return op.DenseOperator(op._system_dense(_clifford_form_blocks(surface), Ck, None), surface, k)


# --------------------------------------------------------------------------
# evaluation and decoding
# --------------------------------------------------------------------------


def standard_probes() -> np.ndarray:
    """The 26 neighbour directions of a 3x3x3 grid on spheres of radius 2 and 5."""
    d = np.array(
        [(i, j, l) for i in (-1, 0, 1) for j in (-1, 0, 1) for l in (-1, 0, 1) if (i, j, l) != (0, 0, 0)],
        dtype=float,
    )
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return np.concatenate([2.0 * d, 5.0 * d])


def check_exterior_points(surface: QuadratureSurface, points) -> np.ndarray:
    """Reject points inside or on the surface; warn about points closer than
    one local panel diameter.  Returns the points as an ``(P, 3)`` array."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[-1] != 3 or pts.ndim != 2:
        raise ValueError(f"points must have shape (P, 3), got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(pts), axis=1))[0])
        raise ExteriorPointError(bad, pts[bad])
    w = winding_number(surface.mesh, pts)
    dist, idx = distance_to_nodes(surface, pts)
    inside = (w > 0.25) | (dist <= 1e-12)
    if np.any(inside):
        bad = int(np.flatnonzero(inside)[0])
        raise ExteriorPointError(bad, pts[bad])
    close = dist < surface.panel_diam[idx]
    if np.any(close):
        bad = int(np.flatnonzero(close)[0])
        warnings.warn(
            f"{int(close.sum())} evaluation point(s) lie within one panel diameter of the surface "
            f"(first: index {bad}); the quadrature is not accurate there",
            NearBoundaryWarning,
            stacklevel=2,
        )
    return pts


def evaluate_field(problem: ScatteringProblem, h, points, check: bool = True) -> np.ndarray:
    """Raw multivector field ``R_k^Omega h`` at ``points``, ``(P, 8)``."""
    pts = check_exterior_points(problem.surface, points) if check else np.atleast_2d(points)
    return op.field_eval_RkOmega(problem.surface, problem.k, h, pts)


@dataclass(frozen=True)
class DecodedField:
    """The exterior field at one point in the coordinates of the algorithm."""

    position: tuple
    alpha: complex
    a: tuple
    b: tuple
    beta: complex
    kind: str
    k: complex

    def _require(self, kind):
        if self.kind != kind:
            raise AttributeError(f"this view is only defined for {kind} problems, not {self.kind}")

    @property
    def E(self) -> np.ndarray:
        self._require("maxwell")
        return np.array(self.a)

    @property
    def H(self) -> np.ndarray:
        self._require("maxwell")
        return np.array(self.b)

    @property
    def u(self) -> complex:
        self._require("dirichlet")
        return self.alpha / (1j * self.k)

    @property
    def grad_u(self) -> np.ndarray:
        self._require("dirichlet")
        return np.array(self.a)

    @property
    def v(self) -> complex:
        self._require("neumann")
        return self.beta / (1j * self.k)

    @property
    def grad_v(self) -> np.ndarray:
        self._require("neumann")
        return np.array(self.b)


def decode(F, points, kind: str, k) -> list[DecodedField]:
    F = cl.as_mv(F)
    k = complex(k)
    return [
        DecodedField(tuple(map(float, x)), complex(f[0]), tuple(f[1:4]), tuple(f[4:7]), complex(f[7]), kind, k)
        for x, f in zip(np.atleast_2d(points), F)
    ]


def evaluate_scattered(problem: ScatteringProblem, h, points) -> list[DecodedField]:
    pts = check_exterior_points(problem.surface, points)
    return decode(evaluate_field(problem, h, pts, check=False), pts, problem.kind, problem.k)


def decoded_columns(kind: str, F, k) -> dict[str, np.ndarray]:
    """Kind-specific views of a field table, as complex columns in CSV order."""
    F = cl.as_mv(F)
    k = complex(k)
    if kind == "maxwell":
        return {**{f"E{i + 1}": F[:, 1 + i] for i in range(3)}, **{f"H{i + 1}": F[:, 4 + i] for i in range(3)}}
    if kind == "dirichlet":
        return {"u": F[:, 0] / (1j * k), **{f"du{i + 1}": F[:, 1 + i] for i in range(3)}}
    if kind == "neumann":
        return {"v": F[:, 7] / (1j * k), **{f"dv{i + 1}": F[:, 4 + i] for i in range(3)}}
    raise ValueError(f"unknown kind {kind!r}")


def kind_defect(kind: str, F: np.ndarray) -> np.ndarray:
    """Size of the components that must vanish, relative to those that carry the field."""
    mag = np.abs(F)
    if kind == "maxwell":
        off, on = mag[:, 0] + mag[:, 7], np.linalg.norm(F[:, 1:4], axis=1) + np.linalg.norm(F[:, 4:7], axis=1)
    elif kind == "dirichlet":
        off, on = np.linalg.norm(F[:, 4:7], axis=1) + mag[:, 7], mag[:, 0] + np.linalg.norm(F[:, 1:4], axis=1)
    else:
        off, on = mag[:, 0] + np.linalg.norm(F[:, 1:4], axis=1), np.linalg.norm(F[:, 4:7], axis=1) + mag[:, 7]
    return off / (on + 1e-300)


def constraint_residuals(problem: ScatteringProblem, h, points, fd_step: float = 1e-3) -> dict:
    """Discretization diagnostics for a computed exterior field.

    ``kind_constraint``: vanishing components relative to the carried ones.
    ``gradient_consistency``: finite-difference gradient of ``alpha/(ik)``
    (or ``beta/(ik)``) against ``a`` (or ``b``); not defined for Maxwell.
    ``dirac_residual``: ``|DF - ikF| / |F|`` by finite differences.
    ``radiation_defect``: the radiation quantity at radii 5 and 20.
    """
    k = problem.k
    pts = check_exterior_points(problem.surface, points)
    F = op.field_eval_RkOmega(problem.surface, k, h, pts)
    field_fn = lambda x: op.field_eval_RkOmega(problem.surface, k, h, np.atleast_2d(x))  # noqa: E731
    out = {"kind_constraint": float(kind_defect(problem.kind, F).max())}
    if problem.kind != "maxwell":
        idx, part = (0, slice(1, 4)) if problem.kind == "dirichlet" else (7, slice(4, 7))
        grads = kn.fd_gradient(lambda x: field_fn(x)[:, idx] / (1j * k), pts, fd_step)  # (3, P)
        num = np.linalg.norm(grads.T - F[:, part], axis=1)
        out["gradient_consistency"] = float((num / (np.linalg.norm(F[:, part], axis=1) + 1e-300)).max())
    out["dirac_residual"] = float(kn.dirac_residual(field_fn, k, pts, fd_step).max())
    if k.imag == 0:
        out["radiation_defect"] = {
            "R5": kn.radiation_defect(field_fn, k, 5.0),
            "R20": kn.radiation_defect(field_fn, k, 20.0),
        }
    return out


# --------------------------------------------------------------------------
# verification and scans
# --------------------------------------------------------------------------


@dataclass
class VerificationReport:
    kind: str
    points: np.ndarray
    computed: np.ndarray
    exact: np.ndarray
    errors: np.ndarray
    solve: SolveReport

    @property
    def max_error(self) -> float:
        return float(self.errors.max())

    @property
    def rms_error(self) -> float:
        return float(np.sqrt(np.mean(self.errors**2)))


def _relative(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.ndim == 1:
        return np.abs(a - b) / np.abs(b)
    return np.linalg.norm(a - b, axis=1) / np.linalg.norm(b, axis=1)


def interior_source_errors(kind: str, F: np.ndarray, exact: np.ndarray, k) -> np.ndarray:
    """Per-point relative error of the physical quantity of each kind.

    Dirichlet compares ``u = alpha/(ik)``, Neumann ``v = beta/(ik)``, and
    Maxwell the larger of the relative errors in ``E`` and ``H``.
    """
    if kind == "dirichlet":
        return _relative(F[:, 0], exact[:, 0])
    if kind == "neumann":
        return _relative(F[:, 7], exact[:, 7])
    return np.maximum(_relative(F[:, 1:4], exact[:, 1:4]), _relative(F[:, 4:7], exact[:, 4:7]))


def verify_interior_source(
    kind: str,
    surface: QuadratureSurface,
    k,
    z0,
    p=None,
    solver: SolverSettings = SolverSettings(),
    near: op.NearField = op.NearField(),
    points=None,
) -> VerificationReport:
    """Scatter the field of a source inside the body and compare with its negative.

    The total field then vanishes outside the body, so the exact scattered
    field is minus the incoming one.
    """
    if kind == "maxwell":
        inc = Dipole(tuple(z0), tuple(p if p is not None else (1.0, 0.5j, 0.0)))
    else:
        inc = PointSource(tuple(z0))
    prob = ScatteringProblem(kind, k, inc, surface, solver, near)
    pts = check_exterior_points(surface, standard_probes() if points is None else points)
    h, rep = spin_solve(prob)
    F = op.field_eval_RkOmega(surface, prob.k, h, pts)
    exact = -incident_field(prob, pts)
    return VerificationReport(kind, pts, F, exact, interior_source_errors(kind, F, exact, prob.k), rep)


def resonance_scan(
    surface: QuadratureSurface,
    k_values: Sequence,
    near: op.NearField = op.NearField(),
    method: str = "auto",
    tol: float = 1e-6,
) -> list[dict]:
    """``sigma_min`` of the spin and the rotation systems at each ``k``, sorted by ``k``."""
    ks = [kn.check_wavenumber(k) for k in k_values]
    ks.sort(key=lambda z: (z.real, z.imag))
    rows = []
    for k in ks:
        Ck = op.assemble_Ck(surface, k, near)
        A = op.rotation_system(surface, k, near, Ck=Ck).matrix
        s_rot = smallest_singular_value(A, tol, method, overwrite=True)
        del A
        Rk = Ck.right_multiplied(cl.vector(surface.normals))
        del Ck
        A = op.spin_system(surface, k, near, Rk=Rk).matrix
        del Rk
        s_spin = smallest_singular_value(A, tol, method, overwrite=True)
        del A
        log.info("k = %s: sigma_min spin %.4e, rotation %.4e", k, s_spin, s_rot)
        rows.append({"k": k, "sigma_min_spin": s_spin, "sigma_min_rotation": s_rot})
    return rows


def first_dirichlet_resonance(radius: float = 1.0) -> float:
    """Smallest interior Dirichlet eigen-wavenumber of a ball: first zero of ``j_0(k r)``."""
    return brentq(lambda x: spherical_jn(0, x), 2.0, 4.0, xtol=1e-15) / radius


@dataclass
class CauchyReport:
    points: np.ndarray
    computed: np.ndarray
    exact: np.ndarray
    errors: np.ndarray

    @property
    def max_error(self) -> float:
        return float(self.errors.max()) if len(self.errors) else 0.0


def cauchy_extension_check(surface: QuadratureSurface, k, z0, c=None, seed: int = 0, points=None) -> CauchyReport:
    """Reproduce ``F = Psi~_k(. - z0) c`` outside from ``h = n F`` on the surface."""
    k = kn.check_wavenumber(k, allow_zero=True)
    _check_interior(surface, z0)
    if c is None:
        rng = np.random.default_rng(seed)
        c = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    c = cl.as_mv(c)
    pts = check_exterior_points(surface, standard_probes() if points is None else points)
    z0 = np.asarray(z0, dtype=float)
    h = cl.clifford_mul(cl.vector(surface.normals), cl.clifford_mul(kn.psi_tilde(k, surface.nodes - z0), c))
    got = op.field_eval_RkOmega(surface, k, h, pts)
    exact = cl.clifford_mul(kn.psi_tilde(k, pts - z0), c)
    scale = np.linalg.norm(exact, axis=1)
    diff = np.linalg.norm(got - exact, axis=1)
    errors = np.where(scale > 0, diff / np.where(scale > 0, scale, 1.0), diff)
    return CauchyReport(pts, got, exact, errors)
