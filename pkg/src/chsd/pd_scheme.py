"""Partially decoupled scheme: Cahn-Hilliard step, then a monolithic Stokes-Darcy solve."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp

from . import assembly
from .ch_step import NewtonStats, ch_step
from .discretization import Operators, SimState
from .fem import FEField
from .linalg import DEFAULT_TOL, Factorization


@dataclass
class StepResult:
    """Outcome of one full time step."""

    state: SimState
    newton: NewtonStats
    audit: Optional[object] = None


def _phase_arg(ops: Operators, phi_k: FEField) -> Optional[FEField]:
    return None if ops.params.viscosity_is_constant else phi_k


def momentum_loads(ops: Operators, state_k: SimState, mu_new: FEField, tau: float,
                   ) -> Tuple[np.ndarray, np.ndarray]:
    """Right-hand sides of the conduit and matrix momentum rows.

    Both contain the inertia of the previous velocity, minus the capillary
    force ``(phi^k grad mu^{k+1}, v)``, plus the optional buoyancy load.
    """
    p = ops.params
    disc = ops.disc
    phi_k = state_k.phi
    f_c = p.rho0 / tau * (ops.mass_c @ state_k.u_c.coeffs) - assembly.assemble_capillary(disc.Xc, phi_k, mu_new)
    f_m = (p.rho0 / (p.chi * tau) * (ops.mass_m @ state_k.u_m.coeffs)
           - assembly.assemble_capillary(disc.Xm, phi_k, mu_new))
    if p.buoyancy != 0:
        b_c, b_m = assembly.assemble_buoyancy(phi_k, p.buoyancy, assembly.mean_value(phi_k), disc.Xc, disc.Xm)
        f_c = f_c + b_c
        f_m = f_m + b_m
    return f_c, f_m


def _offset_constraints(spaces, offsets):
    idx = [s.constrained + o for s, o in zip(spaces, offsets)]
    val = [s.constrained_values for s in spaces]
    return np.concatenate(idx), np.concatenate(val)


@dataclass
class PDFluidSystem:
    """Symmetric block system in the unknowns ``[u_c, P_c, u_m, P_m]``."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    constrained: np.ndarray
    values: np.ndarray
    weights: list
    offsets: Tuple[int, int, int, int]

    @classmethod
    def build(cls, ops: Operators, state_k: SimState, mu_new: FEField, tau: float) -> "PDFluidSystem":
        p, disc = ops.params, ops.disc
        phi = _phase_arg(ops, state_k.phi)
        K_c = p.rho0 / tau * ops.mass_c + ops.a_c(phi)
        K_m = p.rho0 / (p.chi * tau) * ops.mass_m + ops.a_m(phi)
        B_c, B_m, G = ops.b_c, ops.b_m, ops.coupling
        A = sp.bmat([
            [K_c, B_c.T, None, G.T],
            [B_c, None, None, None],
            [None, None, K_m, B_m.T],
            [G, None, B_m, None],
        ], format="csr")
        n = [disc.Xc.dof_count, disc.Mc.dof_count, disc.Xm.dof_count, disc.Mm.dof_count]
        off = tuple(int(v) for v in np.concatenate([[0], np.cumsum(n)[:-1]]))
        A = sp.csr_matrix(A, shape=(sum(n), sum(n)))
        f_c, f_m = momentum_loads(ops, state_k, mu_new, tau)
        rhs = np.zeros(sum(n))
        rhs[off[0]:off[1]] = f_c
        rhs[off[2]:off[3]] = f_m
        cons, vals = _offset_constraints([disc.Xc, disc.Xm, disc.Mm], [off[0], off[2], off[3]])
        weights = []
        for w in ops.pressure_weights():
            full = np.zeros(sum(n))
            full[off[3]:] = w
            weights.append(full)
        return cls(A, rhs, cons, vals, weights, off)

    def split(self, x: np.ndarray, ops: Operators):
        disc, o = ops.disc, self.offsets
        return (FEField(disc.Xc, x[o[0]:o[1]]), FEField(disc.Mc, x[o[1]:o[2]]),
                FEField(disc.Xm, x[o[2]:o[3]]), FEField(disc.Mm, x[o[3]:]))


def _factor(ops: Operators, key, build):
    """Reuse a factorization while the operator does not depend on the phase field."""
    if not ops.params.viscosity_is_constant:
        return build()
    if key not in ops.factors:
        ops.factors[key] = build()
    return ops.factors[key]


def pd_fluid_step(state_k: SimState, mu_new: FEField, ops: Operators, tau: float,
                  tol: float = DEFAULT_TOL) -> Tuple[FEField, FEField, FEField, FEField]:
    """Monolithic Stokes-Darcy solve for ``(u_c, P_c, u_m, P_m)`` at the new level.

    The capillary force uses ``phi^k`` and the new chemical potential.
    """
    system = PDFluidSystem.build(ops, state_k, mu_new, tau)
    fac = _factor(ops, ("pd", tau),
                  lambda: Factorization(system.matrix, system.constrained, system.weights))
    x = fac.solve(system.rhs, system.values, tol=tol)
    return system.split(x, ops)


def pd_step(state_k: SimState, ops: Operators, tau: float, audit: bool = True) -> StepResult:
    """One step of the partially decoupled scheme."""
    phi, mu, stats = ch_step(state_k.phi, state_k.u_c, state_k.u_m, ops, tau)
    u_c, p_c, u_m, p_m = pd_fluid_step(state_k, mu, ops, tau)
    new = SimState(phi, mu, u_c, p_c, u_m, p_m, state_k.time + tau, state_k.step + 1)
    report = None
    if audit:
        from .diagnostics import energy_law_audit
        report = energy_law_audit(state_k, new, ops, tau, "PD")
    return StepResult(new, stats, report)


# pressure-Poisson form of the Darcy stage

def _quadrature_tensor(ops: Operators, phi_k: FEField, fn) -> np.ndarray:
    """Evaluate ``fn(nu, Pi)`` per quadrature point of the matrix cells (nc, nq, 2, 2)."""
    space = ops.disc.Mm
    phi_q = phi_k.on_mesh()[space.cells]
    nu = ops.params.viscosity(phi_q)
    return fn(nu[..., None, None], ops.params.Pi)


def _darcy_pressure_solve(ops: Operators, K: np.ndarray, flux: np.ndarray, u_c: FEField,
                          tol: float = DEFAULT_TOL) -> Tuple[FEField, FEField]:
    """Solve ``(K grad P, grad q) = (flux, grad q) + int (u_c . n_cm) q`` and recover
    ``u_m = flux - K grad P`` by L2 projection onto the matrix velocity space."""
    disc = ops.disc
    Mm, Xm = disc.Mm, disc.Xm
    S = assembly.assemble_tensor_stiffness(Mm, K)
    rhs = assembly.assemble_gradient_load(Mm, flux) + ops.coupling @ u_c.coeffs
    fac = Factorization(S, Mm.constrained, ops.pressure_weights())
    P = FEField(Mm, fac.solve(rhs, Mm.constrained_values, tol=tol))
    grad_p = P.on_mesh(gradient=True)[Mm.cells]
    u_q = flux - np.einsum("cqab,cqb->cqa", K, grad_p)
    load = assembly.assemble_vector_load(Xm, u_q)
    proj = Factorization(ops.mass_m, Xm.constrained)
    u_m = FEField(Xm, proj.solve(load, Xm.constrained_values, tol=tol))
    return P, u_m


def pd_darcy_pressure_variant(state_k: SimState, mu_new: FEField, u_c_new: FEField, ops: Operators,
                              tau: float, tol: float = DEFAULT_TOL) -> Tuple[FEField, FEField]:
    """Darcy stage written for the pressure alone.

    With ``S = (rho0 Pi + tau nu chi I)^{-1}`` the pressure solves
    ``(tau chi S Pi grad P, grad q) = (rho0 S Pi u_bar, grad q) + int (u_c . n) q``
    and the velocity is ``u_m = S (rho0 Pi u_bar - tau chi Pi grad P)``, where
    ``u_bar = u_m^k - (tau chi / rho0)(phi^k grad mu - f_b)``.
    """
    p = ops.params
    Mm = ops.disc.Mm
    phi_k = state_k.phi
    S = _quadrature_tensor(ops, phi_k, lambda nu, Pi: np.linalg.inv(p.rho0 * Pi + tau * p.chi * nu * np.eye(2)))
    SPi = S @ p.Pi
    force = -assembly.capillary_force(phi_k, mu_new)[Mm.cells]
    if p.buoyancy != 0:
        force[..., 1] += p.buoyancy * (phi_k.on_mesh()[Mm.cells] - assembly.mean_value(phi_k))
    u_bar = state_k.u_m.on_mesh()[Mm.cells] + tau * p.chi / p.rho0 * force
    flux = p.rho0 * np.einsum("cqab,cqb->cqa", SPi, u_bar)
    return _darcy_pressure_solve(ops, tau * p.chi * SPi, flux, u_c_new, tol)


def steady_stokes(phi: FEField, ops: Operators, tol: float = DEFAULT_TOL) -> Tuple[FEField, FEField]:
    """Steady conduit Stokes flow with the space's boundary data and zero interface pressure."""
    disc = ops.disc
    A = ops.a_c(_phase_arg(ops, phi))
    K = sp.bmat([[A, ops.b_c.T], [ops.b_c, None]], format="csr")
    nu_ = disc.Xc.dof_count
    weights = []
    if len(disc.mesh.interface) == 0:
        w = np.zeros(K.shape[0])
        w[nu_:] = disc.Mc.basis_integrals
        weights.append(w)
    fac = Factorization(K, disc.Xc.constrained, weights)
    x = fac.solve(np.zeros(K.shape[0]), disc.Xc.constrained_values, tol=tol)
    return FEField(disc.Xc, x[:nu_]), FEField(disc.Mc, x[nu_:])
