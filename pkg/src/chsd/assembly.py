"""Sparse operators and load vectors of both time-stepping schemes.

Matrices are stored with test functions along rows and trial functions along
columns. Mixed operators (``b_c``, ``b_m``, interface coupling) have the
pressure space along rows.
"""

from __future__ import annotations

from typing import Callable, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp

from .fem import FEField, FESpace
from .mesh import CONDUIT, KarsticMesh
from .params import PhysicalParams
from .quadrature import EDGE_DEFAULT, TRIANGLE_DEFAULT, quadrature_rule

Coefficient = Union[None, float, np.ndarray, Callable]


def _global_dofs(space: FESpace) -> np.ndarray:
    """Per-cell global dofs, components concatenated: (ncell, ncomp * nloc)."""
    if space.n_components == 1:
        return space.cell_dofs
    return np.concatenate([space.component_dofs(c) for c in range(space.n_components)], axis=1)


def _scatter(row_dofs, col_dofs, local, shape) -> sp.csr_matrix:
    nr, nc = row_dofs.shape[1], col_dofs.shape[1]
    rows = np.broadcast_to(row_dofs[:, :, None], (len(row_dofs), nr, nc)).ravel()
    cols = np.broadcast_to(col_dofs[:, None, :], (len(col_dofs), nr, nc)).ravel()
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=shape).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def _scatter_vector(dofs, local, size) -> np.ndarray:
    return np.bincount(dofs.ravel(), weights=local.ravel(), minlength=size)


def _coefficient(space: FESpace, coeff: Coefficient, degree: int) -> np.ndarray:
    """Coefficient values at quadrature points (ncell, nq)."""
    _, _, wdet = space.tables(degree)
    if coeff is None:
        return np.ones_like(wdet)
    if callable(coeff):
        pts = space.quadrature_points(degree)
        return np.broadcast_to(np.asarray(coeff(pts[..., 0], pts[..., 1]), float), wdet.shape)
    c = np.asarray(coeff, dtype=float)
    return np.broadcast_to(c, wdet.shape)


def _zero_row_sums(A: sp.csr_matrix) -> sp.csr_matrix:
    """Reset the diagonal so every row sums to zero exactly (grad of a constant vanishes)."""
    A = A.tocsr()
    d = A.diagonal()
    A.setdiag(d - np.asarray(A.sum(axis=1)).ravel())
    return A


def restrict_to(space: FESpace, values_on_mesh: np.ndarray) -> np.ndarray:
    """Select the rows of a whole-mesh quadrature array that belong to ``space``."""
    return values_on_mesh[space.cells]


def assemble_mass_stiffness(space: FESpace, coeff: Coefficient = None, which: str = "mass",
                            degree: int = TRIANGLE_DEFAULT) -> sp.csr_matrix:
    """Weighted mass ``(c u, v)`` or stiffness ``(c grad u, grad v)``.

    ``coeff`` may be ``None`` (unit), a number, an array of quadrature values
    ``(ncell, nq)`` or a function of ``(x, y)``. Vector spaces get a
    block-diagonal mass matrix; stiffness requires a scalar space.
    """
    vals, grads, wdet = space.tables(degree)
    w = wdet * _coefficient(space, coeff, degree)
    if which == "mass":
        local = np.einsum("cq,qi,qj->cij", w, vals, vals)
    elif which == "stiffness":
        if space.n_components != 1:
            raise ValueError("stiffness is assembled on scalar spaces only")
        local = np.einsum("cq,cqid,cqjd->cij", w, grads, grads)
    else:
        raise ValueError(f"unknown operator {which!r}")
    if space.n_components == 2:
        z = np.zeros_like(local)
        local = np.block([[local, z], [z, local]])
    dofs = _global_dofs(space)
    A = _scatter(dofs, dofs, local, (space.dof_count, space.dof_count))
    return _zero_row_sums(A) if which == "stiffness" else A


def assemble_tensor_mass(space: FESpace, tensor: np.ndarray,
                         degree: int = TRIANGLE_DEFAULT) -> sp.csr_matrix:
    """``(K u, v)`` on a vector space with ``K`` given at quadrature points (ncell, nq, 2, 2)."""
    vals, _, wdet = space.tables(degree)
    K = np.broadcast_to(tensor, wdet.shape + (2, 2))
    blocks = [[np.einsum("cq,qi,qj->cij", wdet * K[..., b, a], vals, vals) for a in range(2)]
              for b in range(2)]
    # row block b (test component), column block a (trial component); local[c, test, trial]
    local = np.concatenate([np.concatenate(row, axis=2) for row in blocks], axis=1)
    dofs = _global_dofs(space)
    return _scatter(dofs, dofs, local, (space.dof_count, space.dof_count))


def assemble_tensor_stiffness(space: FESpace, tensor: np.ndarray,
                              degree: int = TRIANGLE_DEFAULT) -> sp.csr_matrix:
    """``(K grad u, grad v)`` on a scalar space with ``K`` at quadrature points (ncell, nq, 2, 2)."""
    _, grads, wdet = space.tables(degree)
    K = np.broadcast_to(tensor, wdet.shape + (2, 2))
    local = np.einsum("cq,cqde,cqje,cqid->cij", wdet, K, grads, grads)
    return _zero_row_sums(_scatter(space.cell_dofs, space.cell_dofs, local,
                                   (space.dof_count, space.dof_count)))


def assemble_gradient_load(space: FESpace, flux: np.ndarray, degree: int = TRIANGLE_DEFAULT) -> np.ndarray:
    """``(f, grad q)`` on a scalar space with ``f`` at quadrature points (ncell, nq, 2)."""
    _, grads, wdet = space.tables(degree)
    local = np.einsum("cq,cqd,cqid->ci", wdet, flux, grads)
    return _scatter_vector(space.cell_dofs, local, space.dof_count)


def interface_quadrature(mesh: KarsticMesh, degree: int = EDGE_DEFAULT):
    """Physical points (ni, nq, 2) and weights (ni, nq) on the interface edges."""
    q = quadrature_rule("edge", degree)
    e = mesh.edges[mesh.interface]
    a = mesh.nodes[e[:, 0]]
    b = mesh.nodes[e[:, 1]]
    pts = a[:, None, :] + q.points[None, :, None] * (b - a)[:, None, :]
    w = mesh.edge_lengths[mesh.interface][:, None] * q.weights[None, :]
    return pts, w


def _interface_basis(space: FESpace, triangles: np.ndarray, pts: np.ndarray):
    local = space.local_of_cell[triangles]
    if np.any(local < 0):
        raise ValueError("interface triangle is not in the space support")
    ref = space.mesh.to_reference(triangles[:, None], pts)
    vals, grads = space.basis_at(local[:, None], ref)
    return local, vals, grads


def _phase_on_interface(phi: Optional[FEField], triangles: np.ndarray, pts: np.ndarray) -> np.ndarray:
    if phi is None:
        return np.zeros(pts.shape[:2])
    space = phi.space
    local = space.local_of_cell[triangles]
    ref = space.mesh.to_reference(triangles[:, None], pts)
    return phi.evaluate(local[:, None], ref)


def _check_viscosity(nu: np.ndarray):
    if np.any(~(nu > 0)):
        raise ValueError(f"nonpositive viscosity sample (min {np.min(nu)})")


def assemble_ac(space: FESpace, params: PhysicalParams, phi: Optional[FEField] = None,
                degree: int = TRIANGLE_DEFAULT, edge_degree: int = EDGE_DEFAULT) -> sp.csr_matrix:
    """Stokes viscous form with the BJSJ slip term on the interface.

    ``2 (nu D(u), D(v))_c + alpha * nu / sqrt(tr Pi) * int (u . tau)(v . tau)``,
    with ``nu = nu(phi)`` lagged from ``phi`` (zero phase if ``phi`` is None).
    """
    if space.n_components != 2 or space.support != "Conduit":
        raise ValueError("a_c needs a vector space on the conduit")
    mesh = space.mesh
    vals, grads, wdet = space.tables(degree)
    phi_q = np.zeros_like(wdet) if phi is None else phi.on_mesh(degree)[space.cells]
    nu = params.viscosity(phi_q)
    _check_viscosity(nu)
    w = wdet * nu
    # 2 nu D(phi_i e_a):D(psi_j e_b) = nu (delta_ab grad phi_i . grad psi_j + d_b phi_i d_a psi_j)
    lap = np.einsum("cq,cqid,cqjd->cji", w, grads, grads)
    blocks = [[None, None], [None, None]]
    for b in range(2):
        for a in range(2):
            cross = np.einsum("cq,cqi,cqj->cji", w, grads[..., b], grads[..., a])
            blocks[b][a] = cross + (lap if a == b else 0.0)
    local = np.concatenate([np.concatenate(row, axis=2) for row in blocks], axis=1)
    dofs = _global_dofs(space)
    A = _scatter(dofs, dofs, local, (space.dof_count, space.dof_count))
    if params.alpha_bjsj > 0 and len(mesh.interface):
        A = A + assemble_bjsj(space, params, phi, edge_degree)
    return A.tocsr()


def assemble_bjsj(space: FESpace, params: PhysicalParams, phi: Optional[FEField] = None,
                  edge_degree: int = EDGE_DEFAULT) -> sp.csr_matrix:
    """Interface slip form ``alpha nu(phi) / sqrt(tr Pi) int (u . tau)(v . tau) dS``."""
    mesh = space.mesh
    pts, w = interface_quadrature(mesh, edge_degree)
    tri_c = mesh.interface_triangles[:, 0]
    local, vals, _ = _interface_basis(space, tri_c, pts)
    nu = params.viscosity(_phase_on_interface(phi, tri_c, pts))
    _check_viscosity(nu)
    kappa = params.alpha_bjsj * nu / np.sqrt(params.trace_pi) * w
    tau = mesh.tau_1
    blocks = [[np.einsum("eq,eqi,eqj->eji", kappa * (tau[:, b] * tau[:, a])[:, None], vals, vals)
               for a in range(2)] for b in range(2)]
    loc = np.concatenate([np.concatenate(row, axis=2) for row in blocks], axis=1)
    dofs = _global_dofs(space)[local]
    return _scatter(dofs, dofs, loc, (space.dof_count, space.dof_count))


def _divergence_form(vspace: FESpace, pspace: FESpace, degree: int, sign: float, on_velocity: bool):
    if vspace.support != pspace.support or not np.array_equal(vspace.cells, pspace.cells):
        raise ValueError("velocity and pressure spaces must share a support")
    vvals, vgrads, wdet = vspace.tables(degree)
    pvals, pgrads, _ = pspace.tables(degree)
    blocks = []
    for a in range(2):
        if on_velocity:  # -(div v, q)
            blocks.append(sign * np.einsum("cq,cqi,qj->cji", wdet, vgrads[..., a], pvals))
        else:  # (v, grad q)
            blocks.append(sign * np.einsum("cq,qi,cqj->cji", wdet, vvals, pgrads[..., a]))
    local = np.concatenate(blocks, axis=2)
    return _scatter(pspace.cell_dofs, _global_dofs(vspace), local, (pspace.dof_count, vspace.dof_count))


def assemble_bc(velocity_space: FESpace, pressure_space: FESpace,
                degree: int = TRIANGLE_DEFAULT) -> sp.csr_matrix:
    """``B[q, v] = b_c(v, q) = -(div v, q)_c``; shape (n_pressure, n_velocity)."""
    return _divergence_form(velocity_space, pressure_space, degree, -1.0, on_velocity=True)


def assemble_am_bm(velocity_space: FESpace, pressure_space: FESpace, params: PhysicalParams,
                   phi: Optional[FEField] = None, degree: int = TRIANGLE_DEFAULT):
    """Darcy forms ``a_m(u, v) = (nu Pi^{-1} u, v)_m`` and ``B[q, v] = (v, grad q)_m``."""
    _, _, wdet = velocity_space.tables(degree)
    phi_q = np.zeros_like(wdet) if phi is None else phi.on_mesh(degree)[velocity_space.cells]
    nu = params.viscosity(phi_q)
    _check_viscosity(nu)
    K = nu[..., None, None] * params.Pi_inv
    A = assemble_tensor_mass(velocity_space, K, degree)
    B = _divergence_form(velocity_space, pressure_space, degree, 1.0, on_velocity=False)
    return A, B


def assemble_interface_coupling(velocity_space_c: FESpace, pressure_space_m: FESpace,
                                edge_degree: int = EDGE_DEFAULT) -> sp.csr_matrix:
    """``G[q_m, v_c] = int_Gamma (v_c . n_cm) q_m dS``; shape (n_pm, n_uc).

    The Stokes rows use ``G.T`` and the Darcy constraint rows use ``G``.
    """
    mesh = velocity_space_c.mesh
    pts, w = interface_quadrature(mesh, edge_degree)
    lc, vvals, _ = _interface_basis(velocity_space_c, mesh.interface_triangles[:, 0], pts)
    lm, pvals, _ = _interface_basis(pressure_space_m, mesh.interface_triangles[:, 1], pts)
    blocks = [np.einsum("eq,eqi,eqj->eji", w * mesh.n_cm[:, a][:, None], vvals, pvals) for a in range(2)]
    local = np.concatenate(blocks, axis=2)
    rows = pressure_space_m.cell_dofs[lm]
    cols = _global_dofs(velocity_space_c)[lc]
    return _scatter(rows, cols, local, (pressure_space_m.dof_count, velocity_space_c.dof_count))


def boundary_quadrature(mesh: KarsticMesh, group: str, degree: int = EDGE_DEFAULT):
    """Points (ne, nq, 2), weights (ne, nq), outward unit normals (ne, 2) and owning
    triangles (ne,) of a boundary group."""
    edges = mesh.boundary_edges[group]
    q = quadrature_rule("edge", degree)
    e = mesh.edges[edges]
    a, b = mesh.nodes[e[:, 0]], mesh.nodes[e[:, 1]]
    pts = a[:, None, :] + q.points[None, :, None] * (b - a)[:, None, :]
    w = mesh.edge_lengths[edges][:, None] * q.weights[None, :]
    tri = mesh.edge_triangles[edges, 0]
    t = (b - a) / mesh.edge_lengths[edges][:, None]
    normal = np.column_stack([t[:, 1], -t[:, 0]])
    inward = mesh.nodes[mesh.triangles[tri]].mean(axis=1) - a
    normal *= np.where(np.einsum("ed,ed->e", normal, inward) > 0, -1.0, 1.0)[:, None]
    return pts, w, normal, tri


def _boundary_trace(space: FESpace, group: str, field_: Optional[FEField], degree: int):
    """Test-function values of ``space`` and values of ``field_`` on a boundary group."""
    mesh = space.mesh
    pts, w, normal, tri = boundary_quadrature(mesh, group, degree)
    local, vals, _ = _interface_basis(space, tri, pts)
    f = None
    if field_ is not None:
        floc = field_.space.local_of_cell[tri]
        if np.any(floc < 0):
            raise ValueError(f"field is not defined next to boundary group {group!r}")
        f = field_.evaluate(floc[:, None], mesh.to_reference(tri[:, None], pts))
    return local, vals, w, normal, f


def assemble_open_flux(phi_k: FEField, u_c: Optional[FEField], u_m: Optional[FEField],
                       inflow: str = "GammaIn", outflow: str = "GammaOut",
                       degree: int = EDGE_DEFAULT) -> np.ndarray:
    """Explicit advective boundary flux ``int (u . n) phi v`` through open boundaries.

    Outflow edges carry ``phi^k`` out of the domain; the same amount of
    ``phi`` enters through the inflow edges in proportion to ``|u . n|``, so
    the vector sums to zero (the term does not change the total phase mass).
    Missing groups or velocities contribute nothing.
    """
    space = phi_k.space
    mesh = space.mesh
    out = np.zeros(space.dof_count)
    groups = mesh.boundary_edges
    if outflow not in groups or inflow not in groups:
        return out
    side = {g: (u_c if mesh.subdomain[mesh.edge_triangles[groups[g][0], 0]] == CONDUIT else u_m)
            for g in (inflow, outflow)}
    if side[inflow] is None or side[outflow] is None:
        return out

    loc_o, vals_o, w_o, n_o, u_o = _boundary_trace(space, outflow, side[outflow], degree)
    _, _, _, _, phi_o = _boundary_trace(space, outflow, phi_k, degree)
    un_o = np.maximum(np.einsum("eqd,ed->eq", u_o, n_o), 0.0)
    out_local = np.einsum("eq,eq,eq,eqi->ei", w_o, un_o, phi_o, vals_o)
    out += _scatter_vector(space.cell_dofs[loc_o], out_local, space.dof_count)

    loc_i, vals_i, w_i, n_i, u_i = _boundary_trace(space, inflow, side[inflow], degree)
    un_i = np.maximum(-np.einsum("eqd,ed->eq", u_i, n_i), 0.0)
    q_in = float(np.einsum("eq,eq->", w_i, un_i))
    if q_in <= 0:
        return out
    in_local = np.einsum("eq,eq,eqi->ei", w_i, un_i, vals_i)
    in_vec = _scatter_vector(space.cell_dofs[loc_i], in_local, space.dof_count)
    return out - in_vec * (out.sum() / in_vec.sum())


def velocity_on_mesh(u_c: Optional[FEField], u_m: Optional[FEField], degree: int = TRIANGLE_DEFAULT):
    """Piecewise velocity at quadrature points of every triangle (ntri, nq, 2)."""
    out = None
    for u in (u_c, u_m):
        if u is None:
            continue
        v = u.on_mesh(degree)
        out = v if out is None else out + v
    return out


def transport_weight(mesh: KarsticMesh, params: PhysicalParams) -> np.ndarray:
    """Per-triangle factor c(x): 1/rho0 in the conduit, chi/rho0 in the matrix."""
    return np.where(mesh.subdomain == CONDUIT, 1.0 / params.rho0, params.chi / params.rho0)


def assemble_ch_transport(phi_k: FEField, u_c: Optional[FEField], u_m: Optional[FEField],
                          params: PhysicalParams, tau: float,
                          degree: int = TRIANGLE_DEFAULT) -> Tuple[sp.csr_matrix, np.ndarray]:
    """Explicit advection load and the implicit intermediate-velocity correction.

    Returns ``(C, L)`` with ``C[i, j] = tau (c phi_k grad phi_j, phi_k grad phi_i)``
    and ``L[i] = (u^k phi_k, grad phi_i)``.
    """
    space = phi_k.space
    vals, grads, wdet = space.tables(degree)
    phi_q = phi_k.values(degree)
    c = transport_weight(space.mesh, params)[space.cells][:, None]
    C = assemble_mass_stiffness(space, tau * c * phi_q**2, "stiffness", degree)
    u = velocity_on_mesh(u_c, u_m, degree)
    if u is None:
        L = np.zeros(space.dof_count)
    else:
        flux = u[space.cells] * phi_q[..., None]
        local = np.einsum("cq,cqd,cqid->ci", wdet, flux, grads)
        L = _scatter_vector(space.cell_dofs, local, space.dof_count)
    return C, L


def assemble_vector_load(space: FESpace, force: np.ndarray, degree: int = TRIANGLE_DEFAULT) -> np.ndarray:
    """``(f, v)`` for a vector space with ``f`` given at quadrature points (ncell, nq, 2)."""
    vals, _, wdet = space.tables(degree)
    parts = [np.einsum("cq,cq,qi->ci", wdet, force[..., a], vals) for a in range(2)]
    local = np.concatenate(parts, axis=1)
    return _scatter_vector(_global_dofs(space), local, space.dof_count)


def capillary_force(phi_k: FEField, mu: FEField, degree: int = TRIANGLE_DEFAULT) -> np.ndarray:
    """``phi_k grad mu`` at quadrature points of every triangle (ntri, nq, 2)."""
    return phi_k.on_mesh(degree)[..., None] * mu.on_mesh(degree, gradient=True)


def assemble_capillary(space: FESpace, phi_k: FEField, mu: FEField,
                       degree: int = TRIANGLE_DEFAULT) -> np.ndarray:
    """``(phi_k grad mu, v)`` on a velocity space."""
    return assemble_vector_load(space, capillary_force(phi_k, mu, degree)[space.cells], degree)


def mean_value(phi: FEField, degree: int = TRIANGLE_DEFAULT) -> float:
    _, _, wdet = phi.space.tables(degree)
    return float(np.einsum("cq,cq->", wdet, phi.values(degree)) / wdet.sum())


def assemble_buoyancy(phi_k: FEField, B: float, mean_phi: float, space_c: FESpace, space_m: FESpace,
                      degree: int = TRIANGLE_DEFAULT) -> Tuple[np.ndarray, np.ndarray]:
    """``(B (phi_k - mean_phi) y_hat, v)`` on the conduit and matrix velocity spaces."""
    phi_q = phi_k.on_mesh(degree)
    force = np.zeros(phi_q.shape + (2,))
    force[..., 1] = B * (phi_q - mean_phi)
    return (assemble_vector_load(space_c, force[space_c.cells], degree),
            assemble_vector_load(space_m, force[space_m.cells], degree))


def assemble_cubic(phi: FEField, degree: int = TRIANGLE_DEFAULT) -> Tuple[np.ndarray, sp.csr_matrix]:
    """``((phi)^3, v)`` and its Jacobian ``(3 phi^2 w, v)``."""
    space = phi.space
    vals, _, wdet = space.tables(degree)
    pq = phi.values(degree)
    r = _scatter_vector(space.cell_dofs, np.einsum("cq,cq,qi->ci", wdet, pq**3, vals), space.dof_count)
    J = assemble_mass_stiffness(space, 3.0 * pq**2, "mass", degree)
    return r, J
