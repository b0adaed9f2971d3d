"""Convex-splitting Cahn-Hilliard step shared by both schemes.

The intermediate velocity ``u_bar = u^k - tau c(x) phi^k grad mu^{k+1}`` is
eliminated: its advective contribution splits into the explicit load
``(u^k phi^k, grad v)`` and the implicit operator ``C`` acting on ``mu``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from . import assembly
from .discretization import Operators
from .fem import FEField
from .linalg import SolverError, solve_linear, LinearSystem

logger = logging.getLogger(__name__)

MAX_NEWTON = 50
MAX_HALVINGS = 30


class NewtonError(SolverError):
    pass


@dataclass
class NewtonStats:
    iterations: int = 0
    residuals: List[float] = field(default_factory=list)
    tolerance: float = 0.0

    @property
    def final_residual(self) -> float:
        return self.residuals[-1] if self.residuals else float("nan")


@dataclass
class CHSystem:
    """Linear pieces of the discrete Cahn-Hilliard system at one step."""

    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    mobility: sp.csr_matrix
    correction: sp.csr_matrix
    advection: np.ndarray
    phi_k: FEField
    gamma: float
    epsilon: float
    tau: float

    @classmethod
    def build(cls, ops: Operators, phi_k: FEField, u_c: Optional[FEField], u_m: Optional[FEField],
              tau: float) -> "CHSystem":
        p = ops.params
        C, L = assembly.assemble_ch_transport(phi_k, u_c, u_m, p, tau)
        if ops.disc.open_transport:
            L = L - assembly.assemble_open_flux(phi_k, u_c, u_m)
        return cls(ops.mass_Y, ops.stiff_Y, ops.mobility_stiffness(phi_k), C, L, phi_k,
                   p.gamma, p.epsilon, tau)

    @property
    def mu_operator(self) -> sp.csr_matrix:
        return self.mobility + self.correction

    def residual(self, phi: np.ndarray, mu: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        g, e = self.gamma, self.epsilon
        pk = self.phi_k.coeffs
        r1 = self.mass @ (phi - pk) / self.tau + self.mu_operator @ mu - self.advection
        cubic, _ = assembly.assemble_cubic(FEField(self.phi_k.space, phi))
        r2 = g / e * (cubic - self.mass @ pk) + g * e * (self.stiffness @ phi) - self.mass @ mu
        return r1, r2

    def data_norm(self) -> float:
        pk = self.phi_k.coeffs
        d1 = self.mass @ pk / self.tau + self.advection
        d2 = self.gamma / self.epsilon * (self.mass @ pk)
        return float(np.sqrt(d1 @ d1 + d2 @ d2))

    def jacobian(self, phi: np.ndarray) -> sp.csr_matrix:
        """Symmetric Jacobian for the unknown ordering (phi, mu) and rows (r2, -tau r1)."""
        _, J3 = assembly.assemble_cubic(FEField(self.phi_k.space, phi))
        g, e = self.gamma, self.epsilon
        return sp.bmat([
            [g / e * J3 + g * e * self.stiffness, -self.mass],
            [-self.mass, -self.tau * self.mu_operator],
        ], format="csr")


def ch_residual(phi_new: FEField, mu_new: FEField, phi_k: FEField, u_c: Optional[FEField],
                u_m: Optional[FEField], ops: Operators, tau: float) -> Tuple[np.ndarray, np.ndarray]:
    """Residuals of the phase-field transport and chemical-potential equations."""
    system = CHSystem.build(ops, phi_k, u_c, u_m, tau)
    return system.residual(phi_new.coeffs, mu_new.coeffs)


def _norm(r1, r2):
    return float(np.sqrt(r1 @ r1 + r2 @ r2))


def ch_step(phi_k: FEField, u_c: Optional[FEField], u_m: Optional[FEField], ops: Operators,
            tau: float, rtol: float = 1e-10) -> Tuple[FEField, FEField, NewtonStats]:
    """Solve for ``(phi^{k+1}, mu^{k+1})`` by damped Newton from ``(phi^k, 0)``.

    Stops once the residual 2-norm is at most ``rtol * (1 + |data|)``; at
    least one Newton update is always taken. The converged ``phi`` is then
    shifted by the constant that restores ``int phi^k`` exactly: the discrete
    equations conserve mass, but at large ``tau`` the floating-point
    evaluation of ``tau C mu`` leaves a defect of order 1e-11 that would
    otherwise accumulate. The shift is far below the Newton tolerance and the
    residual is re-checked after it.
    """
    if not tau > 0:
        raise ValueError("time step must be positive")
    system = CHSystem.build(ops, phi_k, u_c, u_m, tau)
    space = phi_k.space
    n = space.dof_count
    phi = phi_k.coeffs.copy()
    mu = np.zeros(n)
    stats = NewtonStats(tolerance=rtol * (1.0 + system.data_norm()))
    area_weights = np.asarray(system.mass.sum(axis=0)).ravel()
    target = float(area_weights @ phi_k.coeffs)
    r1, r2 = system.residual(phi, mu)
    res = _norm(r1, r2)
    stats.residuals.append(res)
    while stats.iterations == 0 or res > stats.tolerance:
        if stats.iterations >= MAX_NEWTON:
            raise NewtonError(
                f"Newton did not converge in {MAX_NEWTON} iterations (residual {res:.3e})"
            )
        J = system.jacobian(phi)
        rhs = -np.concatenate([r2, -tau * r1])
        delta = solve_linear(LinearSystem(J, rhs), tol=1e-9)
        dphi, dmu = delta[:n], delta[n:]
        step = 1.0
        for _ in range(MAX_HALVINGS):
            cand_phi, cand_mu = phi + step * dphi, mu + step * dmu
            c1, c2 = system.residual(cand_phi, cand_mu)
            cres = _norm(c1, c2)
            if cres < res or cres <= stats.tolerance or step < 1e-3:
                break
            step *= 0.5
        phi, mu, r1, r2, res = cand_phi, cand_mu, c1, c2, cres
        if res <= stats.tolerance:
            phi = phi + (target - area_weights @ phi) / area_weights.sum()
            r1, r2 = system.residual(phi, mu)
            res = _norm(r1, r2)
        stats.iterations += 1
        stats.residuals.append(res)
    logger.debug("ch_step: %d Newton iterations, residual %.3e", stats.iterations, res)
    return FEField(space, phi), FEField(space, mu), stats
