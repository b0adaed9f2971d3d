"""Lagrange P1/P2 spaces on a :class:`~chsd.mesh.KarsticMesh`."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .mesh import KarsticMesh, MeshError
from .quadrature import TRIANGLE_DEFAULT, quadrature_rule

KINDS = ("P1", "P2")
RANKS = ("scalar", "vector2")
SUPPORTS = ("WholeDomain", "Conduit", "Matrix")


def reference_basis(kind: str, pts: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Basis values (..., nloc) and reference gradients (..., nloc, 2) at ``pts``.

    P2 local ordering: the three vertices, then midpoints of local edges
    (0,1), (1,2), (2,0).
    """
    x = pts[..., 0]
    y = pts[..., 1]
    l0, l1, l2 = 1.0 - x - y, x, y
    g0, g1, g2 = (-1.0, -1.0), (1.0, 0.0), (0.0, 1.0)
    if kind == "P1":
        vals = np.stack([l0, l1, l2], axis=-1)
        grads = np.broadcast_to(
            np.array([g0, g1, g2]), vals.shape + (2,)
        ).copy()
        return vals, grads
    if kind != "P2":
        raise ValueError(f"unknown element kind {kind!r}")
    lam = [l0, l1, l2]
    glam = [np.array(g) for g in (g0, g1, g2)]
    vals = [lam[i] * (2 * lam[i] - 1) for i in range(3)]
    grads = [(4 * lam[i] - 1)[..., None] * glam[i] for i in range(3)]
    for i, j in ((0, 1), (1, 2), (2, 0)):
        vals.append(4 * lam[i] * lam[j])
        grads.append(4 * (lam[j][..., None] * glam[i] + lam[i][..., None] * glam[j]))
    return np.stack(vals, axis=-1), np.stack(grads, axis=-2)


@dataclass(frozen=True)
class Dirichlet:
    """Strong boundary condition on one boundary group.

    ``components`` is a tuple of vector components, ``"normal"`` for the
    component normal to each (axis-aligned) boundary edge, or ``None`` for
    all components. ``value`` maps ``(x, y)`` arrays to the boundary data
    (scalar, or a pair for vector spaces); ``None`` means homogeneous.
    """

    group: str
    components: Union[Tuple[int, ...], str, None] = None
    value: Optional[Callable] = None


@dataclass(frozen=True, eq=False)
class FESpace:
    mesh: KarsticMesh
    kind: str
    rank: str
    support: str
    cells: np.ndarray
    cell_dofs: np.ndarray
    dof_points: np.ndarray
    n_scalar: int
    constrained: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    constrained_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mean_zero: bool = False
    dirichlet_groups: Tuple[str, ...] = ()

    @property
    def n_components(self) -> int:
        return 2 if self.rank == "vector2" else 1

    @property
    def dof_count(self) -> int:
        return self.n_scalar * self.n_components

    @property
    def n_local(self) -> int:
        return self.cell_dofs.shape[1]

    def component_dofs(self, c: int) -> np.ndarray:
        return self.cell_dofs + c * self.n_scalar

    @cached_property
    def _tables(self):
        return {}

    def tables(self, degree: int = TRIANGLE_DEFAULT):
        """Element tables for the triangle rule of ``degree``.

        Returns ``(vals, grads, wdet)`` with reference basis values (nq, nloc),
        physical gradients (ncell, nq, nloc, 2) and quadrature weights scaled by
        the Jacobian determinant (ncell, nq).
        """
        if degree not in self._tables:
            q = quadrature_rule("triangle", degree)
            vals, rgrads = reference_basis(self.kind, q.points)
            inv = self.mesh.inv_jacobians[self.cells]
            # grad_phys = J^{-T} grad_ref
            grads = np.einsum("cki,qnk->cqni", inv, rgrads)
            wdet = np.abs(self.mesh.det[self.cells])[:, None] * q.weights[None, :]
            self._tables[degree] = (vals, grads, wdet)
        return self._tables[degree]

    def quadrature_points(self, degree: int = TRIANGLE_DEFAULT) -> np.ndarray:
        """Physical quadrature points (ncell, nq, 2)."""
        q = quadrature_rule("triangle", degree)
        tri = self.mesh.triangles[self.cells]
        p0 = self.mesh.nodes[tri[:, 0]]
        J = self.mesh.jacobians[self.cells]
        return p0[:, None, :] + np.einsum("cij,qj->cqi", J, q.points)

    def basis_at(self, local_cells: np.ndarray, ref_pts: np.ndarray):
        """Values (..., nloc) and physical gradients (..., nloc, 2) at reference points.

        ``local_cells`` indexes ``self.cells`` and broadcasts against ``ref_pts[..., 0]``.
        """
        vals, rgrads = reference_basis(self.kind, ref_pts)
        inv = self.mesh.inv_jacobians[self.cells[local_cells]]
        grads = np.einsum("...ki,...nk->...ni", inv, rgrads)
        return vals, grads

    @cached_property
    def local_of_cell(self) -> np.ndarray:
        """Map from global triangle index to position in ``self.cells`` (-1 if absent)."""
        m = -np.ones(self.mesh.n_triangles, dtype=np.int64)
        m[self.cells] = np.arange(len(self.cells))
        return m

    @cached_property
    def basis_integrals(self) -> np.ndarray:
        """Integral of every scalar basis function (used for mean-zero constraints)."""
        vals, _, wdet = self.tables()
        contrib = np.einsum("cq,qn->cn", wdet, vals)
        out = np.zeros(self.n_scalar)
        np.add.at(out, self.cell_dofs, contrib)
        return out

    @property
    def free(self) -> np.ndarray:
        mask = np.ones(self.dof_count, dtype=bool)
        mask[self.constrained] = False
        return np.flatnonzero(mask)

    def descriptor(self) -> dict:
        m = self.mesh
        return {
            "kind": self.kind,
            "rank": self.rank,
            "support": self.support,
            "dof_count": self.dof_count,
            "n": m.n,
            "conduit": [m.conduit_rect.x0, m.conduit_rect.x1, m.conduit_rect.y0, m.conduit_rect.y1],
            "matrix": [m.matrix_rect.x0, m.matrix_rect.x1, m.matrix_rect.y0, m.matrix_rect.y1],
        }


def _normal_component(mesh: KarsticMesh, edges: np.ndarray) -> np.ndarray:
    d = mesh.nodes[mesh.edges[edges, 1]] - mesh.nodes[mesh.edges[edges, 0]]
    # edge along x -> normal is y (component 1)
    return np.where(np.abs(d[:, 0]) > np.abs(d[:, 1]), 1, 0)


def build_space(
    mesh: KarsticMesh,
    kind: str,
    rank: str = "scalar",
    support: str = "WholeDomain",
    dirichlet: Sequence[Dirichlet] = (),
    mean_zero: bool = False,
) -> FESpace:
    """Build a Lagrange space with deterministic numbering.

    Vertex dofs come first (ascending global node index), then edge-midpoint
    dofs (ascending global edge index). Vector spaces are component-blocked.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown element kind {kind!r}")
    if rank not in RANKS:
        raise ValueError(f"unknown value rank {rank!r}")
    if support not in SUPPORTS:
        raise MeshError(f"unknown support {support!r}")

    cells = mesh.cells(support)
    tri = mesh.triangles[cells]
    verts = np.unique(tri)
    vmap = -np.ones(mesh.n_nodes, dtype=np.int64)
    vmap[verts] = np.arange(len(verts))
    cell_dofs = [vmap[tri]]
    points = [mesh.nodes[verts]]
    emap = None
    if kind == "P2":
        tedges = mesh.triangle_edges[cells]
        used = np.unique(tedges)
        emap = -np.ones(mesh.n_edges, dtype=np.int64)
        emap[used] = len(verts) + np.arange(len(used))
        cell_dofs.append(emap[tedges])
        points.append(mesh.nodes[mesh.edges[used]].mean(axis=1))
    cell_dofs = np.concatenate(cell_dofs, axis=1)
    dof_points = np.concatenate(points, axis=0)
    n_scalar = len(dof_points)
    ncomp = 2 if rank == "vector2" else 1

    constrained = {}
    for bc in dirichlet:
        if bc.group not in mesh.boundary_edges:
            raise MeshError(f"unknown boundary group {bc.group!r}")
        edges = mesh.boundary_edges[bc.group]
        ends = mesh.edges[edges]
        if np.any(vmap[ends] < 0):
            raise MeshError(f"boundary group {bc.group!r} is not on the {support} support")
        ent = [vmap[ends[:, 0]], vmap[ends[:, 1]]]
        if emap is not None:
            ent.append(emap[edges])
        ent = np.stack(ent, axis=1)  # (nedge, 2 or 3) scalar dofs per edge
        if bc.components == "normal":
            comps = np.broadcast_to(_normal_component(mesh, edges)[:, None], ent.shape)
            pairs = [(int(d), int(c)) for d, c in zip(ent.ravel(), comps.ravel())]
        else:
            clist = range(ncomp) if bc.components is None else bc.components
            pairs = [(int(d), int(c)) for d in ent.ravel() for c in clist]
        dofs = sorted(set(pairs))
        sd = np.array([d for d, _ in dofs], dtype=np.int64)
        cc = np.array([c for _, c in dofs], dtype=np.int64)
        if bc.value is None:
            vals = np.zeros(len(sd))
        else:
            pts = dof_points[sd]
            v = bc.value(pts[:, 0], pts[:, 1])
            if ncomp == 2:
                v = np.array([np.broadcast_to(np.asarray(c, float), (len(sd),)) for c in v])
                vals = v[cc, np.arange(len(sd))]
            else:
                vals = np.broadcast_to(np.asarray(v, float), (len(sd),)).astype(float)
        for d, c, val in zip(sd, cc, vals):
            constrained[int(d + c * n_scalar)] = float(val)

    keys = np.array(sorted(constrained), dtype=np.int64)
    values = np.array([constrained[k] for k in keys], dtype=float)
    for arr in (cells, cell_dofs, dof_points, keys, values):
        arr.setflags(write=False)
    return FESpace(
        mesh=mesh,
        kind=kind,
        rank=rank,
        support=support,
        cells=cells,
        cell_dofs=cell_dofs,
        dof_points=dof_points,
        n_scalar=n_scalar,
        constrained=keys,
        constrained_values=values,
        mean_zero=mean_zero,
        dirichlet_groups=tuple(bc.group for bc in dirichlet),
    )


@dataclass(eq=False)
class FEField:
    """Coefficient vector on an :class:`FESpace`."""

    space: FESpace
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.dof_count,):
            raise ValueError(
                f"coefficient length {self.coeffs.shape} does not match dof_count {self.space.dof_count}"
            )

    def copy(self) -> "FEField":
        return FEField(self.space, self.coeffs.copy())

    def _components(self):
        s = self.space
        return [self.coeffs[c * s.n_scalar:(c + 1) * s.n_scalar] for c in range(s.n_components)]

    def values(self, degree: int = TRIANGLE_DEFAULT) -> np.ndarray:
        """Values at quadrature points: (ncell, nq) or (ncell, nq, 2)."""
        vals, _, _ = self.space.tables(degree)
        out = [np.einsum("cn,qn->cq", comp[self.space.cell_dofs], vals) for comp in self._components()]
        return out[0] if len(out) == 1 else np.stack(out, axis=-1)

    def gradients(self, degree: int = TRIANGLE_DEFAULT) -> np.ndarray:
        """Gradients at quadrature points: (ncell, nq, 2) or (ncell, nq, 2, 2) as [component, derivative]."""
        _, grads, _ = self.space.tables(degree)
        out = [np.einsum("cn,cqni->cqi", comp[self.space.cell_dofs], grads) for comp in self._components()]
        return out[0] if len(out) == 1 else np.stack(out, axis=-2)

    def on_mesh(self, degree: int = TRIANGLE_DEFAULT, gradient: bool = False) -> np.ndarray:
        """Quadrature values (or gradients) on every mesh triangle, zero off the support."""
        v = self.gradients(degree) if gradient else self.values(degree)
        out = np.zeros((self.space.mesh.n_triangles,) + v.shape[1:])
        out[self.space.cells] = v
        return out

    def evaluate(self, local_cells: np.ndarray, ref_pts: np.ndarray) -> np.ndarray:
        vals, _ = self.space.basis_at(local_cells, ref_pts)
        dofs = self.space.cell_dofs[local_cells]
        out = [np.einsum("...n,...n->...", comp[dofs], vals) for comp in self._components()]
        return out[0] if len(out) == 1 else np.stack(out, axis=-1)

    def vertex_values(self) -> np.ndarray:
        """Nodal values at mesh vertices, NaN at vertices outside the support."""
        s = self.space
        m = s.mesh
        out = np.full((m.n_nodes, s.n_components), np.nan)
        verts = np.unique(m.triangles[s.cells])
        for c, comp in enumerate(self._components()):
            out[verts, c] = comp[: len(verts)]
        return out[:, 0] if s.n_components == 1 else out


def zeros(space: FESpace) -> FEField:
    return FEField(space, np.zeros(space.dof_count))


def interpolate(space: FESpace, func: Callable) -> FEField:
    """Nodal interpolant of ``func(x, y)``; vector spaces expect a pair of arrays."""
    x, y = space.dof_points[:, 0], space.dof_points[:, 1]
    v = func(x, y)
    if space.rank == "vector2":
        v0, v1 = v
        coeffs = np.concatenate([np.broadcast_to(np.asarray(v0, float), x.shape),
                                 np.broadcast_to(np.asarray(v1, float), x.shape)])
    else:
        coeffs = np.broadcast_to(np.asarray(v, float), x.shape).copy()
    return FEField(space, np.array(coeffs, dtype=float))


def integrate(field_: FEField, degree: int = TRIANGLE_DEFAULT) -> Union[float, np.ndarray]:
    _, _, wdet = field_.space.tables(degree)
    v = field_.values(degree)
    if v.ndim == 3:
        return np.einsum("cq,cqi->i", wdet, v)
    return float(np.einsum("cq,cq->", wdet, v))


def error_norm(field_a: FEField, field_b: Union[FEField, Callable], norm: str = "L2",
               degree: int = TRIANGLE_DEFAULT) -> float:
    """L2 norm of ``a - b``; ``b`` may also be a function of ``(x, y)``."""
    if norm != "L2":
        raise ValueError(f"unsupported norm {norm!r}")
    sa = field_a.space
    va = field_a.values(degree)
    if isinstance(field_b, FEField):
        sb = field_b.space
        if sb.mesh is not sa.mesh and not (
            sb.mesh.n == sa.mesh.n
            and sb.mesh.nodes.shape == sa.mesh.nodes.shape
            and np.array_equal(sb.mesh.nodes, sa.mesh.nodes)
            and np.array_equal(sb.mesh.triangles, sa.mesh.triangles)
        ):
            raise MeshError("error_norm requires fields on identical meshes")
        if sb.support != sa.support or sb.rank != sa.rank:
            raise ValueError("error_norm requires fields with the same support and rank")
        vb = field_b.values(degree)
    else:
        pts = sa.quadrature_points(degree)
        vb = field_b(pts[..., 0], pts[..., 1])
        if sa.rank == "vector2":
            vb = np.stack([np.broadcast_to(c, pts.shape[:2]) for c in vb], axis=-1)
        else:
            vb = np.broadcast_to(vb, pts.shape[:2])
    d = va - vb
    sq = d * d if d.ndim == 2 else np.sum(d * d, axis=-1)
    _, _, wdet = sa.tables(degree)
    return float(np.sqrt(np.einsum("cq,cq->", wdet, sq)))


_MAGIC = b"CHSDFLD1"


def write_checkpoint(field_: FEField, path: Union[str, Path]) -> Path:
    """Flat binary: magic, uint32 header length, JSON space descriptor, uint64 count, float64 LE coeffs."""
    path = Path(path)
    header = json.dumps(field_.space.descriptor(), sort_keys=True).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            fh.write(struct.pack("<Q", len(field_.coeffs)))
            fh.write(field_.coeffs.astype("<f8").tobytes())
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def read_checkpoint(path: Union[str, Path]) -> Tuple[dict, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path} is not a field checkpoint")
    (hlen,) = struct.unpack_from("<I", data, 8)
    header = json.loads(data[12:12 + hlen].decode("utf-8"))
    (count,) = struct.unpack_from("<Q", data, 12 + hlen)
    coeffs = np.frombuffer(data, dtype="<f8", count=count, offset=20 + hlen).astype(float)
    return header, coeffs


def field_from_checkpoint(space: FESpace, path: Union[str, Path]) -> FEField:
    header, coeffs = read_checkpoint(path)
    desc = space.descriptor()
    if any(header.get(k) != desc[k] for k in desc):
        raise ValueError(f"checkpoint {path} was written for a different space: {header}")
    return FEField(space, coeffs)
