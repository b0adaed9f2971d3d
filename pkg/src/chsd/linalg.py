"""Sparse linear solves with strong Dirichlet data and mean-zero constraints."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DEFAULT_TOL = 1e-10


class SolverError(RuntimeError):
    pass


class SingularSystemError(SolverError):
    pass


class ConvergenceError(SolverError):
    pass


@dataclass
class LinearSystem:
    """``A x = b`` with optional strong values and bordered constraints.

    ``constrained``/``values`` fix entries of ``x`` by row/column elimination.
    Each vector in ``mean_zero`` adds one multiplier enforcing ``w . x = 0``.
    """

    A: sp.spmatrix
    b: np.ndarray
    constrained: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mean_zero: Sequence[np.ndarray] = ()

    def __post_init__(self):
        n, m = self.A.shape
        if n != m:
            raise ValueError(f"system matrix must be square, got {self.A.shape}")
        if self.b.shape != (n,):
            raise ValueError(f"right-hand side has shape {self.b.shape}, expected ({n},)")
        self.constrained = np.asarray(self.constrained, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float)


class Factorization:
    """Reduced (eliminated + bordered) operator with a cached LU factorization.

    The matrix and constraint layout are fixed; right-hand sides and
    Dirichlet values may change between :meth:`solve` calls.
    """

    def __init__(self, A, constrained=(), mean_zero=()):
        A = sp.csr_matrix(A)
        n = A.shape[0]
        self.n = n
        self.A = A
        self.constrained = np.asarray(constrained, dtype=np.int64)
        mask = np.ones(n, dtype=bool)
        mask[self.constrained] = False
        self.free = np.flatnonzero(mask)
        self.weights = [np.asarray(w, dtype=float) for w in mean_zero]
        Aff = A[self.free][:, self.free]
        self.A_fc = A[self.free][:, self.constrained]
        if self.weights:
            W = sp.csc_matrix(np.column_stack([w[self.free] for w in self.weights]))
            m = W.shape[1]
            K = sp.bmat([[Aff, W], [W.T, sp.csr_matrix((m, m))]], format="csc")
        else:
            K = sp.csc_matrix(Aff)
        self.K = K
        try:
            self.lu = spla.splu(K)
        except RuntimeError as exc:
            raise SingularSystemError(f"singular system ({K.shape[0]} unknowns): {exc}") from exc

    def solve(self, b, values=None, tol=DEFAULT_TOL, refine=3) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        g = np.zeros(len(self.constrained)) if values is None else np.asarray(values, dtype=float)
        rhs = b[self.free] - self.A_fc @ g
        if self.weights:
            rhs = np.concatenate([rhs, [-w[self.constrained] @ g for w in self.weights]])
        y = self.lu.solve(rhs)
        scale = max(np.linalg.norm(rhs), np.finfo(float).tiny)
        res = np.linalg.norm(self.K @ y - rhs) / scale
        for _ in range(refine):
            if res <= tol * 1e-3:
                break
            y = y + self.lu.solve(rhs - self.K @ y)
            res = np.linalg.norm(self.K @ y - rhs) / scale
        if not np.all(np.isfinite(y)):
            raise SingularSystemError("factorization produced non-finite values")
        if res > tol:
            raise ConvergenceError(f"relative residual {res:.3e} exceeds tolerance {tol:.1e}")
        x = np.empty(self.n)
        x[self.free] = y[: len(self.free)]
        x[self.constrained] = g
        return x


def _jacobi(K):
    d = np.abs(K.diagonal())
    d[d == 0] = 1.0
    return spla.LinearOperator(K.shape, matvec=lambda v: v / d, dtype=float)


def solve_linear(system: LinearSystem, tol: float = DEFAULT_TOL, method: str = "direct",
                 maxiter: Optional[int] = None) -> np.ndarray:
    """Solve ``system`` to relative residual ``tol``.

    ``method="direct"`` uses a sparse LU factorization (SuperLU);
    ``"minres"`` and ``"gmres"`` are diagonally preconditioned Krylov solves
    on the same reduced system.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    fac = Factorization(system.A, system.constrained, system.mean_zero) if method == "direct" else None
    if fac is not None:
        return fac.solve(system.b, system.values, tol=tol)

    n = system.A.shape[0]
    A = sp.csr_matrix(system.A)
    mask = np.ones(n, dtype=bool)
    mask[system.constrained] = False
    free = np.flatnonzero(mask)
    g = system.values
    rhs = system.b[free] - A[free][:, system.constrained] @ g
    K = A[free][:, free]
    ws = [np.asarray(w, float) for w in system.mean_zero]
    if ws:
        W = sp.csr_matrix(np.column_stack([w[free] for w in ws]))
        m = W.shape[1]
        K = sp.bmat([[K, W], [W.T, sp.csr_matrix((m, m))]], format="csr")
        rhs = np.concatenate([rhs, [-w[system.constrained] @ g for w in ws]])
    maxiter = maxiter or 20 * K.shape[0]
    if method == "minres":
        y, info = spla.minres(K, rhs, M=_jacobi(K), rtol=tol * 1e-2, maxiter=maxiter)
    elif method == "gmres":
        y, info = spla.gmres(K, rhs, M=_jacobi(K), rtol=tol * 1e-2, restart=200, maxiter=maxiter)
    else:
        raise ValueError(f"unknown solver method {method!r}")
    res = np.linalg.norm(K @ y - rhs) / max(np.linalg.norm(rhs), np.finfo(float).tiny)
    if info != 0 or res > tol:
        raise ConvergenceError(f"{method} stopped with info={info}, relative residual {res:.3e}")
    x = np.empty(n)
    x[free] = y[: len(free)]
    x[system.constrained] = g
    return x
