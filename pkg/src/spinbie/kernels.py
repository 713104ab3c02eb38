"""Helmholtz fundamental solution, Clifford kernels and analytic oracle fields.

All evaluators are vectorised over the leading axes of ``x`` (shape
``(..., 3)``) and return complex arrays; multivector-valued functions
return ``(..., 8)`` coordinate arrays (see :mod:`spinbie.clifford`).
"""
from __future__ import annotations

import math
from typing import Callable

import numpy as np

from . import clifford as cl

FOUR_PI = 4.0 * math.pi

__all__ = [
    "phi",
    "grad_phi",
    "hessian_phi",
    "psi",
    "psi_tilde",
    "psi_difference",
    "helmholtz_source_field",
    "maxwell_dipole_field",
    "plane_wave_field",
    "radiation_defect",
    "fd_gradient",
    "fd_dirac",
    "dirac_residual",
    "fibonacci_sphere",
    "check_wavenumber",
]


def check_wavenumber(k, *, allow_zero: bool = False) -> complex:
    """Validate the standing assumption ``k != 0, Im k >= 0`` for solver entry points."""
    k = complex(k)
    if not np.isfinite(k.real) or not np.isfinite(k.imag):
        raise ValueError(f"wave number must be finite, got {k}")
    if k == 0 and not allow_zero:
        raise ValueError("wave number k = 0 is not admissible")
    if k.imag < 0:
        raise ValueError(f"wave number must satisfy Im k >= 0, got {k}")
    return k


def _radius(x, what="x"):
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0):
        raise ValueError(f"kernel evaluated at {what} = 0")
    return x, r


def phi(k, x) -> np.ndarray:
    """``-exp(ik|x|) / (4 pi |x|)``."""
    x, r = _radius(x)
    return -np.exp(1j * complex(k) * r) / (FOUR_PI * r)


def grad_phi(k, x) -> np.ndarray:
    x, r = _radius(x)
    k = complex(k)
    ph = -np.exp(1j * k * r) / (FOUR_PI * r)
    coef = (-1.0 / r**2 + 1j * k / r) * ph
    return coef[..., None] * x


def hessian_phi(k, x) -> np.ndarray:
    """Second derivatives ``d_i d_j Phi_k``, shape ``(..., 3, 3)``."""
    x, r = _radius(x)
    k = complex(k)
    ph = -np.exp(1j * k * r) / (FOUR_PI * r)
    d1 = (1j * k - 1.0 / r) * ph
    d2 = ph / r**2 + (1j * k - 1.0 / r) ** 2 * ph
    xh = x / r[..., None]
    outer = xh[..., :, None] * xh[..., None, :]
    eye = np.eye(3)
    return d2[..., None, None] * outer + (d1 / r)[..., None, None] * (eye - outer)


def psi(k, x) -> np.ndarray:
    """``(D - ik) Phi_k``: vector part ``grad Phi_k``, scalar part ``-ik Phi_k``."""
    k = complex(k)
    out = np.zeros(np.shape(x)[:-1] + (8,), dtype=complex)
    out[..., 0] = -1j * k * phi(k, x)
    out[..., 1:4] = grad_phi(k, x)
    return out


def psi_tilde(k, x) -> np.ndarray:
    """``(D + ik) Phi_k``, the kernel obeying the outgoing Dirac radiation condition."""
    k = complex(k)
    out = np.zeros(np.shape(x)[:-1] + (8,), dtype=complex)
    out[..., 0] = 1j * k * phi(k, x)
    out[..., 1:4] = grad_phi(k, x)
    return out


def psi_difference(k, x) -> np.ndarray:
    """``Psi_k - Psi_0`` evaluated without the cancelling ``x/|x|^3`` terms.

    The scalar part behaves like ``ik/(4 pi |x|)``, the vector part stays
    bounded as ``x -> 0``.
    """
    x, r = _radius(x)
    k = complex(k)
    ikr = 1j * k * r
    e = np.exp(ikr)
    out = np.zeros(x.shape[:-1] + (8,), dtype=complex)
    out[..., 0] = 1j * k * e / (FOUR_PI * r)
    # (1 - ikr) e^{ikr} - 1, series for small |kr| to avoid cancellation
    small = np.abs(ikr) < 1e-3
    num = (1.0 - ikr) * e - 1.0
    z = ikr[small]
    num[small] = z**2 * (-0.5 - z / 3.0 - z**2 / 8.0 - z**3 / 30.0)
    out[..., 1:4] = (num / (FOUR_PI * r**3))[..., None] * x
    return out


def helmholtz_source_field(k, z0, x, variant: str = "dirichlet") -> np.ndarray:
    """Dirac embedding of the point source ``u = Phi_k(x - z0)``.

    ``variant="dirichlet"`` gives ``ik u + grad u``; ``"neumann"`` gives
    ``*grad u + ik *u`` (bivector ``grad u``, trivector ``ik u``).
    """
    k = complex(k)
    d = np.asarray(x, dtype=float) - np.asarray(z0, dtype=float)
    if np.any(np.linalg.norm(d, axis=-1) == 0):
        raise ValueError("field point coincides with the source point")
    u = phi(k, d)
    gu = grad_phi(k, d)
    out = np.zeros(d.shape[:-1] + (8,), dtype=complex)
    if variant == "dirichlet":
        out[..., 0] = 1j * k * u
        out[..., 1:4] = gu
    elif variant == "neumann":
        out[..., 4:7] = gu
        out[..., 7] = 1j * k * u
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return out


def maxwell_dipole_field(k, z0, p, x) -> np.ndarray:
    """Electric dipole at ``z0`` with moment ``p``, embedded as ``E + *H``.

    ``H = grad u x p`` and ``E = ik p u + (i/k) grad(p . grad u)`` with
    ``u = Phi_k(x - z0)``.
    """
    k = complex(k)
    if k == 0:
        raise ValueError("the dipole field is undefined for k = 0")
    d = np.asarray(x, dtype=float) - np.asarray(z0, dtype=float)
    if np.any(np.linalg.norm(d, axis=-1) == 0):
        raise ValueError("field point coincides with the dipole position")
    p = np.asarray(p, dtype=complex)
    u = phi(k, d)
    gu = grad_phi(k, d)
    hess = hessian_phi(k, d)
    H = np.cross(gu, p)
    E = 1j * k * u[..., None] * p + (1j / k) * np.einsum("...ij,j->...i", hess, p)
    out = np.zeros(d.shape[:-1] + (8,), dtype=complex)
    out[..., 1:4] = E
    out[..., 4:7] = H
    return out


def plane_wave_field(kind: str, k, direction, x, polarization=None) -> np.ndarray:
    """Plane wave ``exp(ik d.x)`` embedded for ``kind`` in
    ``{"dirichlet", "neumann", "maxwell"}``.

    For Maxwell, ``E = p e``, ``H = (d x p) e`` with ``p`` transverse to ``d``.
    """
    k = complex(k)
    d = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(d) - 1.0) > 1e-12:
        raise ValueError("plane-wave direction must be a unit vector")
    x = np.asarray(x, dtype=float)
    e = np.exp(1j * k * (x @ d))
    out = np.zeros(x.shape[:-1] + (8,), dtype=complex)
    if kind == "dirichlet":
        out[..., 0] = 1j * k * e
        out[..., 1:4] = 1j * k * e[..., None] * d
    elif kind == "neumann":
        out[..., 4:7] = 1j * k * e[..., None] * d
        out[..., 7] = 1j * k * e
    elif kind == "maxwell":
        if polarization is None:
            raise ValueError("Maxwell plane waves need a polarization vector")
        p = np.asarray(polarization, dtype=complex)
        if abs(np.dot(p, d)) > 1e-12 * max(1.0, float(np.linalg.norm(p))):
            raise ValueError("polarization must be transverse to the direction (p . d = 0)")
        out[..., 1:4] = e[..., None] * p
        out[..., 4:7] = e[..., None] * np.cross(d, p)
    else:
        raise ValueError(f"unknown plane-wave kind {kind!r}")
    return out


def fibonacci_sphere(m: int, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """``m`` quasi-uniform points on a sphere (golden-angle spiral)."""
    i = np.arange(m) + 0.5
    z = 1.0 - 2.0 * i / m
    t = math.pi * (1.0 + math.sqrt(5.0)) * i
    s = np.sqrt(1.0 - z**2)
    pts = np.stack([s * np.cos(t), s * np.sin(t), z], axis=-1)
    return radius * pts + np.asarray(center, dtype=float)


def radiation_defect(field: Callable[[np.ndarray], np.ndarray], k, radius: float, m: int = 200) -> float:
    """``max |(x/|x| - 1) F(x)| * R * exp(-Im k R)`` over ``m`` points of ``|x| = R``."""
    k = complex(k)
    pts = fibonacci_sphere(m, radius)
    F = cl.as_mv(field(pts))
    xh = cl.vector(pts / radius)
    xh[..., 0] = -1.0
    defect = np.linalg.norm(cl.clifford_mul(xh, F), axis=-1).max()
    return float(defect * radius * math.exp(-k.imag * radius))


def fd_gradient(f: Callable[[np.ndarray], np.ndarray], x, step: float = 1e-3) -> np.ndarray:
    """Central-difference partial derivatives; returns ``(3,) + f(x).shape``."""
    x = np.asarray(x, dtype=float)
    parts = []
    for i in range(3):
        dx = np.zeros_like(x)
        dx[..., i] = step
        parts.append((f(x + dx) - f(x - dx)) / (2 * step))
    return np.stack(parts)


def fd_dirac(F: Callable[[np.ndarray], np.ndarray], x, step: float = 1e-3) -> np.ndarray:
    """``D F = sum_i e_i d_i F`` by central differences."""
    dF = fd_gradient(F, x, step)
    out = 0
    for i in range(3):
        out = out + cl.clifford_mul(cl.basis(1 + i), dF[i])
    return out


def dirac_residual(F: Callable[[np.ndarray], np.ndarray], k, x, step: float = 1e-3) -> np.ndarray:
    """Relative residual ``|DF - ikF| / (|F| + 1e-300)`` per point.

    Falls back to Richardson extrapolation (steps ``h`` and ``h/2``) when
    the plain stencil does not reach ``1e-4``.
    """
    k = complex(k)
    x = np.asarray(x, dtype=float)
    Fx = cl.as_mv(F(x))
    scale = np.linalg.norm(Fx, axis=-1) + 1e-300
    res = np.linalg.norm(fd_dirac(F, x, step) - 1j * k * Fx, axis=-1) / scale
    if np.all(res <= 1e-4):
        return res
    d1 = fd_dirac(F, x, step)
    d2 = fd_dirac(F, x, step / 2)
    rich = (4 * d2 - d1) / 3
    res2 = np.linalg.norm(rich - 1j * k * Fx, axis=-1) / scale
    return np.minimum(res, res2)
