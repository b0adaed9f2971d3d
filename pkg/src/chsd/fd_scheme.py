"""Fully decoupled scheme: Cahn-Hilliard step, stabilized Darcy solve, then Stokes solve.

The Darcy stage sees only the previous conduit velocity through the
interface flux; the Stokes stage sees only the new matrix pressure.
"""

from __future__ import annotations

from typing import Tuple

import numpy as np
import scipy.sparse as sp

from .ch_step import ch_step
from .discretization import Operators, SimState
from .fem import FEField
from .linalg import DEFAULT_TOL, Factorization
from .pd_scheme import StepResult, _factor, _phase_arg, momentum_loads


def _darcy_matrix(ops: Operators, phi: FEField, tau: float, beta: float) -> sp.csr_matrix:
    p = ops.params
    K_m = p.rho0 / (p.chi * tau) * ops.mass_m + ops.a_m(_phase_arg(ops, phi))
    return sp.bmat([[K_m, ops.b_m.T], [ops.b_m, -beta * tau * ops.stiff_Mm]], format="csr")


def _solve_darcy_block(ops: Operators, matrix_fn, key, f_m: np.ndarray, g: np.ndarray,
                       tol: float) -> Tuple[FEField, FEField]:
    Xm, Mm = ops.disc.Xm, ops.disc.Mm
    n = Xm.dof_count
    cons = np.concatenate([Xm.constrained, Mm.constrained + n])
    vals = np.concatenate([Xm.constrained_values, Mm.constrained_values])
    weights = [np.concatenate([np.zeros(n), w]) for w in ops.pressure_weights()]
    fac = _factor(ops, key, lambda: Factorization(matrix_fn(), cons, weights))
    x = fac.solve(np.concatenate([f_m, g]), vals, tol=tol)
    return FEField(Xm, x[:n]), FEField(Mm, x[n:])


def fd_darcy_step(state_k: SimState, mu_new: FEField, ops: Operators, tau: float,
                  tol: float = DEFAULT_TOL) -> Tuple[FEField, FEField]:
    """Stabilized Darcy solve with the lagged interface flux ``u_c^k . n_cm``.

    The pressure rows carry ``-beta tau (grad P, grad q)``, which makes the
    block uniquely solvable without an inf-sup condition.
    """
    beta = ops.params.beta
    if not beta > 0:
        raise ValueError(f"stabilization parameter beta must be positive, got {beta}")
    _, f_m = momentum_loads(ops, state_k, mu_new, tau)
    g = -(ops.coupling @ state_k.u_c.coeffs)
    return _solve_darcy_block(ops, lambda: _darcy_matrix(ops, state_k.phi, tau, beta),
                              ("fd-darcy", tau, beta), f_m, g, tol)


def lagged_darcy_step(state_k: SimState, mu_new: FEField, ops: Operators, tau: float,
                      tol: float = DEFAULT_TOL) -> Tuple[FEField, FEField]:
    """Unstabilized Darcy block driven by the lagged conduit flux (the ``beta -> 0`` limit)."""
    _, f_m = momentum_loads(ops, state_k, mu_new, tau)
    g = -(ops.coupling @ state_k.u_c.coeffs)
    return _solve_darcy_block(ops, lambda: _darcy_matrix(ops, state_k.phi, tau, 0.0),
                              ("lagged-darcy", tau), f_m, g, tol)


def fd_stokes_step(state_k: SimState, mu_new: FEField, p_m_new: FEField, ops: Operators,
                   tau: float, tol: float = DEFAULT_TOL) -> Tuple[FEField, FEField]:
    """Stokes solve with the new matrix pressure as known interface normal stress."""
    p = ops.params
    Xc, Mc = ops.disc.Xc, ops.disc.Mc
    n = Xc.dof_count
    f_c, _ = momentum_loads(ops, state_k, mu_new, tau)
    f_c = f_c - ops.coupling.T @ p_m_new.coeffs

    def build():
        K_c = p.rho0 / tau * ops.mass_c + ops.a_c(_phase_arg(ops, state_k.phi))
        return sp.bmat([[K_c, ops.b_c.T], [ops.b_c, None]], format="csr")

    weights = []
    if len(ops.disc.mesh.interface) == 0:
        weights.append(np.concatenate([np.zeros(n), Mc.basis_integrals]))
    fac = _factor(ops, ("fd-stokes", tau), lambda: Factorization(build(), Xc.constrained, weights))
    x = fac.solve(np.concatenate([f_c, np.zeros(Mc.dof_count)]), Xc.constrained_values, tol=tol)
    return FEField(Xc, x[:n]), FEField(Mc, x[n:])


def fd_step(state_k: SimState, ops: Operators, tau: float, audit: bool = True) -> StepResult:
    """One step of the fully decoupled scheme."""
    phi, mu, stats = ch_step(state_k.phi, state_k.u_c, state_k.u_m, ops, tau)
    u_m, p_m = fd_darcy_step(state_k, mu, ops, tau)
    u_c, p_c = fd_stokes_step(state_k, mu, p_m, ops, tau)
    new = SimState(phi, mu, u_c, p_c, u_m, p_m, state_k.time + tau, state_k.step + 1)
    report = None
    if audit:
        from .diagnostics import energy_law_audit
        report = energy_law_audit(state_k, new, ops, tau, "FD")
    return StepResult(new, stats, report)
