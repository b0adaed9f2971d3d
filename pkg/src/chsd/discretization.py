"""Finite element spaces of the coupled problem, the discrete state, and cached operators."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from . import assembly
from .fem import Dirichlet, FEField, FESpace, build_space, zeros
from .mesh import CONDUIT, KarsticMesh
from .params import PhysicalParams


@dataclass(eq=False)
class Discretization:
    """Taylor-Hood spaces on both subdomains plus the P1 phase-field space.

    ``Y`` carries phi and mu on the whole domain (shared interface dofs give
    continuity across the interface); ``Xc``/``Mc`` are the conduit velocity
    and pressure, ``Xm``/``Mm`` the matrix velocity and pressure.
    """

    mesh: KarsticMesh
    Y: FESpace
    Xc: FESpace
    Mc: FESpace
    Xm: FESpace
    Mm: FESpace
    open_transport: bool = False

    @property
    def has_outflow(self) -> bool:
        return len(self.Mm.constrained) > 0


def make_discretization(mesh: KarsticMesh, inflow: Optional[Callable] = None,
                        open_transport: bool = False) -> Discretization:
    """Spaces with the model's boundary conditions.

    Conduit velocity: no-slip on every conduit boundary group, except
    ``GammaIn`` which carries ``inflow(x, y) -> (u1, u2)`` when given.
    Matrix velocity: zero normal component on matrix boundary groups other
    than ``GammaOut``. Matrix pressure: zero on ``GammaOut`` if present,
    otherwise mean-zero.

    ``open_transport`` lets the phase field be advected through ``GammaOut``
    and re-enter through ``GammaIn`` (see ``assembly.assemble_open_flux``);
    without it the phase transport has zero total boundary flux.
    """
    c_bcs, m_bcs = [], []
    for name, edges in mesh.boundary_edges.items():
        side = mesh.subdomain[mesh.edge_triangles[edges, 0]]
        if np.all(side == CONDUIT):
            value = inflow if (name == "GammaIn" and inflow is not None) else None
            c_bcs.append(Dirichlet(name, None, value))
        elif name != "GammaOut":
            m_bcs.append(Dirichlet(name, "normal"))
    # inflow data takes precedence at shared corner nodes
    c_bcs.sort(key=lambda bc: bc.value is not None)
    outflow = "GammaOut" in mesh.boundary_edges
    return Discretization(
        mesh=mesh,
        Y=build_space(mesh, "P1", "scalar", "WholeDomain"),
        Xc=build_space(mesh, "P2", "vector2", "Conduit", c_bcs),
        Mc=build_space(mesh, "P1", "scalar", "Conduit"),
        Xm=build_space(mesh, "P2", "vector2", "Matrix", m_bcs),
        Mm=build_space(
            mesh, "P1", "scalar", "Matrix",
            [Dirichlet("GammaOut")] if outflow else [], mean_zero=not outflow,
        ),
        open_transport=open_transport,
    )


@dataclass(eq=False)
class SimState:
    phi: FEField
    mu: FEField
    u_c: FEField
    p_c: FEField
    u_m: FEField
    p_m: FEField
    time: float = 0.0
    step: int = 0

    def copy(self) -> "SimState":
        return SimState(self.phi.copy(), self.mu.copy(), self.u_c.copy(), self.p_c.copy(),
                        self.u_m.copy(), self.p_m.copy(), self.time, self.step)


def rest_state(disc: Discretization, phi: FEField) -> SimState:
    return SimState(phi, zeros(disc.Y), zeros(disc.Xc), zeros(disc.Mc), zeros(disc.Xm), zeros(disc.Mm))


class Operators:
    """Operators reused across time steps for one discretization and parameter set.

    Phase-dependent operators are cached only when the corresponding
    coefficient (viscosity or mobility) is constant.
    """

    def __init__(self, disc: Discretization, params: PhysicalParams):
        self.disc = disc
        self.params = params
        # factorizations of constant-coefficient systems, keyed by the caller
        self.factors: dict = {}

    @cached_property
    def mass_Y(self) -> sp.csr_matrix:
        return assembly.assemble_mass_stiffness(self.disc.Y, None, "mass")

    @cached_property
    def stiff_Y(self) -> sp.csr_matrix:
        return assembly.assemble_mass_stiffness(self.disc.Y, None, "stiffness")

    @cached_property
    def mass_c(self) -> sp.csr_matrix:
        return assembly.assemble_mass_stiffness(self.disc.Xc, None, "mass")

    @cached_property
    def mass_m(self) -> sp.csr_matrix:
        return assembly.assemble_mass_stiffness(self.disc.Xm, None, "mass")

    @cached_property
    def stiff_Mm(self) -> sp.csr_matrix:
        return assembly.assemble_mass_stiffness(self.disc.Mm, None, "stiffness")

    @cached_property
    def b_c(self) -> sp.csr_matrix:
        return assembly.assemble_bc(self.disc.Xc, self.disc.Mc)

    @cached_property
    def coupling(self) -> sp.csr_matrix:
        return assembly.assemble_interface_coupling(self.disc.Xc, self.disc.Mm)

    @cached_property
    def _const_ac(self):
        return assembly.assemble_ac(self.disc.Xc, self.params, None)

    @cached_property
    def _const_am_bm(self):
        return assembly.assemble_am_bm(self.disc.Xm, self.disc.Mm, self.params, None)

    @property
    def b_m(self) -> sp.csr_matrix:
        return self._const_am_bm[1]

    def a_c(self, phi: FEField) -> sp.csr_matrix:
        if self.params.viscosity_is_constant:
            return self._const_ac
        return assembly.assemble_ac(self.disc.Xc, self.params, phi)

    def a_m(self, phi: FEField) -> sp.csr_matrix:
        if self.params.viscosity_is_constant:
            return self._const_am_bm[0]
        return assembly.assemble_am_bm(self.disc.Xm, self.disc.Mm, self.params, phi)[0]

    def mobility_stiffness(self, phi: FEField) -> sp.csr_matrix:
        if self.params.mobility_is_constant:
            return float(self.params.mobility) * self.stiff_Y
        m = self.params.mobility_of(phi.values())
        return assembly.assemble_mass_stiffness(self.disc.Y, m, "stiffness")

    def pressure_weights(self) -> list:
        """Mean-zero weight vectors for the matrix pressure (empty with an outflow boundary)."""
        return [self.disc.Mm.basis_integrals] if self.disc.Mm.mean_zero else []
