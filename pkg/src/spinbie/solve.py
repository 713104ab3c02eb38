"""Dense and Krylov solvers plus the smallest-singular-value probe."""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sl
import scipy.sparse.linalg as spla

__all__ = [
    "SolveReport",
    "SingularMatrixError",
    "ConvergenceError",
    "LUFactor",
    "direct_solve",
    "gmres_solve",
    "smallest_singular_value",
]

SVD_LIMIT = 4096


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when LU meets a pivot that is zero to working precision."""

    def __init__(self, pivot: int, value: float):
        super().__init__(f"matrix is singular to working precision at pivot {pivot} (|u| = {value:.3e})")
        self.pivot = pivot
        self.value = value


class ConvergenceError(RuntimeError):
    """GMRES did not reach the tolerance; ``best`` holds the best iterate found."""

    def __init__(self, message: str, best: np.ndarray, residual: float, iterations: int):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.iterations = iterations


@dataclass
class SolveReport:
    method: str
    residual_norm: float
    iterations: int
    elapsed_seconds: float
    condition_estimate: float | None = None

    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "residual_norm": self.residual_norm,
            "iterations": self.iterations,
            "elapsed_seconds": self.elapsed_seconds,
            "condition_estimate": self.condition_estimate,
        }


def _matrix(A) -> np.ndarray:
    M = getattr(A, "matrix", A)
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    return M


def _rel_residual(A: np.ndarray, x: np.ndarray, b: np.ndarray) -> float:
    nb = np.linalg.norm(b)
    r = np.linalg.norm(A @ x - b)
    return float(r / nb) if nb > 0 else float(r)


def _norms(M: np.ndarray) -> tuple[float, float]:
    """``(||M||_1, max |M_ij|)`` without a full-size temporary."""
    colsum = np.zeros(M.shape[1])
    amax = 0.0
    for s in range(0, M.shape[0], 512):
        a = np.abs(M[s:s + 512])
        colsum += a.sum(axis=0)
        if a.size:
            amax = max(amax, float(a.max()))
    return float(colsum.max()) if colsum.size else 0.0, amax


@dataclass(eq=False)
class LUFactor:
    """LU factorization of ``A`` (kept for repeated solves with ``A`` or ``A^H``).

    The factors are not modified after construction, so concurrent
    back-solves are safe.
    """

    lu: np.ndarray
    piv: np.ndarray
    n: int
    anorm1: float

    @classmethod
    def factor(cls, A, overwrite: bool = False) -> "LUFactor":
        M = _matrix(A)
        for s in range(0, M.shape[0], 512):
            if not np.all(np.isfinite(M[s:s + 512])):
                raise ValueError("matrix has non-finite entries")
        anorm1, amax = _norms(M)
        # LAPACK is column-major: factor A^T through the C-ordered buffer without a copy
        with warnings.catch_warnings():
            # an exact zero pivot is reported below as SingularMatrixError
            warnings.simplefilter("ignore", sl.LinAlgWarning)
            lu, piv = sl.lu_factor(M.T, overwrite_a=overwrite, check_finite=False)
        d = np.abs(np.diagonal(lu))
        tol = M.shape[0] * np.finfo(float).eps * amax
        bad = np.flatnonzero(d <= tol)
        if amax == 0 or len(bad):
            p = int(bad[0]) if len(bad) else 0
            raise SingularMatrixError(p, float(d[p]) if len(d) else 0.0)
        return cls(lu, piv, M.shape[0], anorm1)

    def solve(self, b: np.ndarray) -> np.ndarray:
        """``A^{-1} b``."""
        return sl.lu_solve((self.lu, self.piv), b, trans=1, check_finite=False)

    def solve_adjoint(self, b: np.ndarray) -> np.ndarray:
        """``A^{-H} b``."""
        return np.conj(sl.lu_solve((self.lu, self.piv), np.conj(b), trans=0, check_finite=False))

    def condition_estimate(self) -> float:
        """1-norm condition number estimate (LAPACK gecon on the transposed factors)."""
        gecon = sl.get_lapack_funcs("gecon", (self.lu,))
        # ||A^T||_inf = ||A||_1
        rcond, info = gecon(self.lu, self.anorm1, norm="I")
        return float(1.0 / rcond) if rcond > 0 else float("inf")


def direct_solve(A, b) -> tuple[np.ndarray, SolveReport]:
    """LU with partial pivoting; the report carries the recomputed relative residual."""
    t0 = time.perf_counter()
    M = _matrix(A)
    b = np.asarray(b, dtype=complex)
    shape = b.shape
    n = M.shape[0]
    if b.shape[:1] == (n,):
        rhs = b
    elif b.size == n:
        # a nodal (N, 8) density
        rhs = b.reshape(n)
    else:
        raise ValueError(f"right-hand side of shape {shape} does not match matrix size {n}")
    fac = LUFactor.factor(M)
    x = fac.solve(rhs)
    rep = SolveReport("direct", _rel_residual(M, x, rhs), 0, time.perf_counter() - t0, fac.condition_estimate())
    return x.reshape(shape), rep


def gmres_solve(
    apply: Callable[[np.ndarray], np.ndarray],
    b,
    tol: float = 1e-8,
    restart: int = 80,
    max_iters: int = 2000,
    x0=None,
) -> tuple[np.ndarray, SolveReport]:
    """Unpreconditioned restarted GMRES.

    ``apply`` maps a flat complex vector to a flat complex vector (a matrix
    or an object with ``matrix``/``apply`` is accepted too).  Success is
    judged on the recomputed relative residual, not on GMRES' estimate.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    t0 = time.perf_counter()
    b = np.asarray(b, dtype=complex).ravel()
    n = b.size
    if isinstance(apply, np.ndarray) or hasattr(apply, "matrix"):
        M = _matrix(apply)
        fn = lambda v: M @ v  # noqa: E731
    else:
        fn = apply
    # copy: scipy reuses the vector it hands in, so an operator that returns its input would alias it
    op = spla.LinearOperator((n, n), matvec=lambda v: np.array(fn(np.array(v, dtype=complex).ravel()), dtype=complex).ravel(), dtype=complex)
    nb = np.linalg.norm(b)
    if nb == 0:
        return np.zeros(n, dtype=complex), SolveReport("iterative", 0.0, 0, time.perf_counter() - t0)
    count = [0]

    def cb(_):
        count[0] += 1

    x, _info = spla.gmres(
        op, b, x0=x0, rtol=tol, atol=0.0, restart=min(restart, n),
        maxiter=max(1, -(-max_iters // max(1, min(restart, n)))),
        callback=cb, callback_type="pr_norm",
    )
    res = float(np.linalg.norm(op.matvec(x) - b) / nb)
    rep = SolveReport("iterative", res, count[0], time.perf_counter() - t0)
    if not np.isfinite(res) or res > tol:
        raise ConvergenceError(
            f"GMRES stopped after {count[0]} iterations with relative residual {res:.3e} > tol {tol:.1e}",
            x, res, count[0],
        )
    return x, rep


def smallest_singular_value(A, tol: float = 1e-6, method: str = "auto", overwrite: bool = False) -> float:
    """``sigma_min(A)``.

    ``method="svd"`` uses all singular values (default up to 4096 unknowns);
    ``"inverse"`` factors ``A`` once and runs Lanczos on ``A^{-1} A^{-H}``,
    whose largest eigenvalue is ``1 / sigma_min^2``.  With ``overwrite``
    the matrix storage may be reused for the factors.
    """
    M = _matrix(A)
    n = M.shape[0]
    if method == "auto":
        method = "svd" if n <= SVD_LIMIT else "inverse"
    if method == "svd":
        return float(sl.svdvals(M, overwrite_a=overwrite, check_finite=False)[-1])
    if method != "inverse":
        raise ValueError(f"unknown method {method!r}")
    if n <= 3:
        return float(sl.svdvals(M)[-1])
    try:
        fac = LUFactor.factor(M, overwrite=overwrite)
    except SingularMatrixError:
        return 0.0
    op = spla.LinearOperator((n, n), matvec=lambda v: fac.solve(fac.solve_adjoint(v)), dtype=complex)
    v0 = np.random.default_rng(0).standard_normal(n).astype(complex)
    lam = spla.eigsh(op, k=1, which="LM", tol=tol * 1e-2, v0=v0, return_eigenvectors=False)
    return float(1.0 / np.sqrt(lam[0].real))
