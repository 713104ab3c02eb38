"""Algebra and kernel invariants run by ``spinbie selftest``.

Every algebra check multiplies through an explicit structure-constant
table so that a corrupted table is caught.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import clifford as cl
from . import kernels as kn

__all__ = ["Check", "run_selftest", "corrupted_table"]


@dataclass
class Check:
    name: str
    error: float
    tol: float

    @property
    def ok(self) -> bool:
        return bool(np.isfinite(self.error) and self.error <= self.tol)

    def as_dict(self) -> dict:
        return {"name": self.name, "error": self.error, "tol": self.tol, "ok": self.ok}


def corrupted_table() -> np.ndarray:
    """A structure table with one wrong entry (e1 e2 lands on -e12)."""
    G = cl.structure_constants().copy()
    G[1, 2, 6] = -G[1, 2, 6]
    return G


def _random_mv(rng, m=16):
    return rng.standard_normal((m, 8)) + 1j * rng.standard_normal((m, 8))


def _algebra_checks(G: np.ndarray, rng) -> list[tuple[str, Callable[[], float], float]]:
    mul = lambda a, b: cl.clifford_mul(a, b, table=G)  # noqa: E731
    e = [cl.basis(i) for i in range(8)]

    def anticommutation():
        err = 0.0
        for i in range(1, 4):
            for j in range(1, 4):
                lhs = mul(e[i], e[j]) + mul(e[j], e[i])
                err = max(err, np.abs(lhs - 2.0 * (i == j) * e[0]).max())
        return err

    def blades():
        pairs = [(mul(e[2], e[3]), e[4]), (mul(e[3], e[1]), e[5]), (mul(e[1], e[2]), e[6]), (mul(mul(e[1], e[2]), e[3]), e[7])]
        return max(np.abs(a - b).max() for a, b in pairs)

    def associativity():
        a, b, c = _random_mv(rng), _random_mv(rng), _random_mv(rng)
        return np.abs(mul(mul(a, b), c) - mul(a, mul(b, c))).max() / np.abs(a).max() ** 3

    def rho_multiplicative():
        a, b = _random_mv(rng), _random_mv(rng)
        lhs = cl.rho(mul(a, b))
        rhs = cl.pair_mul(cl.rho(a), cl.rho(b))
        return np.abs(lhs - rhs).max() / (np.abs(a).max() * np.abs(b).max())

    def rho_roundtrip():
        a = _random_mv(rng)
        return np.abs(cl.rho_inv(cl.rho(a)) - a).max()

    def riesz():
        u = cl.vector(rng.standard_normal((16, 3)))
        w = _random_mv(rng)
        lhs = cl.exterior_mul(u, w)
        rhs = 0.5 * (mul(u, w) + mul(cl.involution(w), u))
        return np.abs(lhs - rhs).max()

    def involution_automorphism():
        a, b = _random_mv(rng), _random_mv(rng)
        return np.abs(cl.involution(mul(a, b)) - mul(cl.involution(a), cl.involution(b))).max()

    def involution_pair_basis():
        return max(np.abs(cl.rho(cl.involution(e[i])) - cl.involution_pair(cl.rho(e[i]))).max() for i in range(8))

    def reflections():
        n = rng.standard_normal((16, 3))
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        nv = cl.vector(n)
        N = lambda f: mul(mul(nv, cl.involution(f)), nv)  # noqa: E731
        S = lambda f: mul(nv, f)  # noqa: E731
        f = _random_mv(rng)
        return max(
            np.abs(N(N(f)) - f).max(),
            np.abs(S(S(f)) - f).max(),
            np.abs(N(S(f)) + S(N(f))).max(),
        )

    return [
        ("anticommutation e_i e_j + e_j e_i = 2 delta_ij", anticommutation, 1e-13),
        ("blade products e2e3 = e23, e3e1 = e31, e1e2 = e12, e1e2e3 = e123", blades, 1e-13),
        ("associativity", associativity, 1e-13),
        ("rho is multiplicative", rho_multiplicative, 1e-13),
        ("rho_inv(rho(w)) = w", rho_roundtrip, 1e-13),
        ("Riesz formula u^w = (uw + w^ u)/2", riesz, 1e-13),
        ("involution is an automorphism", involution_automorphism, 1e-13),
        ("involution_pair matches the involution on all basis blades", involution_pair_basis, 1e-13),
        ("N^2 = S^2 = I and NS + SN = 0", reflections, 1e-13),
    ]


def _kernel_checks(rng) -> list[tuple[str, Callable[[], float], float]]:
    k = 1.7 + 0.2j
    x = rng.standard_normal((12, 3))
    x *= (0.5 + rng.random((12, 1))) / np.linalg.norm(x, axis=1, keepdims=True)

    def helmholtz():
        lap = np.trace(kn.hessian_phi(k, x), axis1=-2, axis2=-1)
        return np.abs(lap + k**2 * kn.phi(k, x)).max() / np.abs(k**2 * kn.phi(k, x)).max()

    def difference():
        d = kn.psi_difference(k, x)
        ref = kn.psi(k, x) - kn.psi(0.0, x)
        return np.abs(d - ref).max() / np.abs(ref).max()

    def dirac():
        c = _random_mv(rng, 1)[0]
        F = lambda y: cl.clifford_mul(kn.psi_tilde(k, y), c)  # noqa: E731
        return float(kn.dirac_residual(F, k, x + 2.0 * x / np.linalg.norm(x, axis=1, keepdims=True)).max())

    def gradient():
        g = kn.grad_phi(k, x)
        fd = kn.fd_gradient(lambda y: kn.phi(k, y), x, 1e-5)
        return np.abs(np.moveaxis(fd, 0, -1) - g).max() / np.abs(g).max()

    return [
        ("Helmholtz equation for Phi_k", helmholtz, 1e-12),
        ("Psi_k - Psi_0 without cancellation", difference, 1e-10),
        ("D Psi~_k c = ik Psi~_k c (finite differences)", dirac, 1e-5),
        ("grad Phi_k against finite differences", gradient, 1e-8),
    ]


def run_selftest(table: np.ndarray | None = None, seed: int = 0) -> list[Check]:
    G = cl.structure_constants() if table is None else np.asarray(table)
    rng = np.random.default_rng(seed)
    out = []
    for name, fn, tol in _algebra_checks(G, rng) + _kernel_checks(rng):
        try:
            err = float(fn())
        except Exception:  # a broken table can make a check blow up; count it as failed
            err = float("inf")
        out.append(Check(name, err, tol))
    return out
