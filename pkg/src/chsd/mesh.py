"""Structured conforming triangulations of a conduit/matrix rectangle pair."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

CONDUIT = 0
MATRIX = 1
SUBDOMAIN_NAMES = {CONDUIT: "Conduit", MATRIX: "Matrix"}

_GEOM_TOL = 1e-12


class MeshError(ValueError):
    """Invalid geometry or mesh request."""


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle ``[x0, x1] x [y0, y1]``."""

    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise MeshError(f"degenerate rectangle {self}")

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def contains(self, x, y, tol=_GEOM_TOL):
        return (
            (x >= self.x0 - tol)
            & (x <= self.x1 + tol)
            & (y >= self.y0 - tol)
            & (y <= self.y1 + tol)
        )


@dataclass(frozen=True)
class InterfaceEdge:
    edge: int
    vertices: Tuple[int, int]
    n_cm: np.ndarray
    tau_1: np.ndarray
    length: float
    conduit_triangle: int
    matrix_triangle: int


@dataclass(frozen=True, eq=False)
class KarsticMesh:
    """Conforming triangulation of the union of a conduit and a matrix rectangle.

    Attributes
    ----------
    nodes : (N, 2) float array
    triangles : (T, 3) int array, counter-clockwise
    subdomain : (T,) int array, ``CONDUIT`` or ``MATRIX``
    edges : (E, 2) int array, sorted vertex pairs in lexicographic order
    triangle_edges : (T, 3) int array; local edge k joins local vertices k and k+1
    boundary_edges : mapping from group name to edge index array
    interface : (I,) edge indices along the interface, ordered by position
    n_cm, tau_1 : (I, 2) unit normal (conduit to matrix) and tangent
    """

    nodes: np.ndarray
    triangles: np.ndarray
    subdomain: np.ndarray
    edges: np.ndarray
    triangle_edges: np.ndarray
    edge_triangles: np.ndarray
    boundary_edges: Mapping[str, np.ndarray]
    interface: np.ndarray
    n_cm: np.ndarray
    tau_1: np.ndarray
    interface_triangles: np.ndarray
    conduit_rect: Rect
    matrix_rect: Rect
    n: int
    h: float = field(default=0.0)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def jacobians(self) -> np.ndarray:
        """(T, 2, 2) affine map Jacobians, columns are the two edge vectors from vertex 0."""
        p = self.nodes[self.triangles]
        J = np.empty((len(p), 2, 2))
        J[:, :, 0] = p[:, 1] - p[:, 0]
        J[:, :, 1] = p[:, 2] - p[:, 0]
        return J

    @cached_property
    def det(self) -> np.ndarray:
        J = self.jacobians
        return J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]

    @cached_property
    def inv_jacobians(self) -> np.ndarray:
        J = self.jacobians
        d = self.det
        inv = np.empty_like(J)
        inv[:, 0, 0] = J[:, 1, 1] / d
        inv[:, 1, 1] = J[:, 0, 0] / d
        inv[:, 0, 1] = -J[:, 0, 1] / d
        inv[:, 1, 0] = -J[:, 1, 0] / d
        return inv

    @cached_property
    def areas(self) -> np.ndarray:
        return 0.5 * self.det

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.nodes[self.edges[:, 1]] - self.nodes[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def cells(self, support: str) -> np.ndarray:
        """Triangle indices belonging to ``support`` (WholeDomain, Conduit or Matrix)."""
        if support == "WholeDomain":
            return np.arange(self.n_triangles)
        if support == "Conduit":
            return np.flatnonzero(self.subdomain == CONDUIT)
        if support == "Matrix":
            return np.flatnonzero(self.subdomain == MATRIX)
        raise MeshError(f"unknown support {support!r}")

    def area(self, support: str = "WholeDomain") -> float:
        return float(self.areas[self.cells(support)].sum())

    def to_reference(self, triangles: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Reference coordinates of physical ``points`` (..., 2) inside ``triangles``."""
        origin = self.nodes[self.triangles[triangles, 0]]
        inv = self.inv_jacobians[triangles]
        return np.einsum("...ij,...j->...i", inv, points - origin)


def _shared_edge(conduit: Rect, matrix: Rect):
    """Orientation of the shared edge: ('horizontal', y) or ('vertical', x)."""
    same_x = abs(conduit.x0 - matrix.x0) < _GEOM_TOL and abs(conduit.x1 - matrix.x1) < _GEOM_TOL
    same_y = abs(conduit.y0 - matrix.y0) < _GEOM_TOL and abs(conduit.y1 - matrix.y1) < _GEOM_TOL
    if same_x and abs(conduit.y1 - matrix.y0) < _GEOM_TOL:
        return "horizontal", conduit.y1
    if same_x and abs(conduit.y0 - matrix.y1) < _GEOM_TOL:
        return "horizontal", conduit.y0
    if same_y and abs(conduit.x1 - matrix.x0) < _GEOM_TOL:
        return "vertical", conduit.x1
    if same_y and abs(conduit.x0 - matrix.x1) < _GEOM_TOL:
        return "vertical", conduit.x0
    raise MeshError(
        "conduit and matrix rectangles must share exactly one full edge; "
        f"got {conduit} and {matrix}"
    )


def _cells_along(length: float, n: int, what: str) -> int:
    m = length * n
    k = int(round(m))
    if k < 1 or abs(m - k) > 1e-9 * max(1.0, m):
        raise MeshError(f"{what} of length {length} is not a whole number of cells at n={n}")
    return k


def build_karstic_mesh(
    conduit_rect: Rect,
    matrix_rect: Rect,
    n: int,
    extra_groups: Optional[Mapping[str, Rect]] = None,
) -> KarsticMesh:
    """Uniform right-triangle mesh of ``conduit_rect`` and ``matrix_rect``.

    Each grid square is split along its (+1, +1) diagonal. ``extra_groups``
    maps a boundary group name to a closed box; exterior edges whose midpoint
    falls inside the box are moved out of GammaC/GammaM into that group.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise MeshError(f"n must be a positive integer, got {n!r}")
    _shared_edge(conduit_rect, matrix_rect)

    x0 = min(conduit_rect.x0, matrix_rect.x0)
    x1 = max(conduit_rect.x1, matrix_rect.x1)
    y0 = min(conduit_rect.y0, matrix_rect.y0)
    y1 = max(conduit_rect.y1, matrix_rect.y1)
    nx = _cells_along(x1 - x0, n, "width")
    ny = _cells_along(y1 - y0, n, "height")
    for r in (conduit_rect, matrix_rect):
        _cells_along(r.x1 - r.x0, n, "width")
        _cells_along(r.y1 - r.y0, n, "height")

    xs = x0 + (x1 - x0) * np.arange(nx + 1) / nx
    ys = y0 + (y1 - y0) * np.arange(ny + 1) / ny
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    j, i = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    i, j = i.ravel(), j.ravel()
    bl = j * (nx + 1) + i
    br = bl + 1
    tl = bl + (nx + 1)
    tr = tl + 1
    tris = np.empty((2 * len(bl), 3), dtype=np.int64)
    tris[0::2] = np.column_stack([bl, br, tr])
    tris[1::2] = np.column_stack([bl, tr, tl])

    centroids = nodes[tris].mean(axis=1)
    in_c = conduit_rect.contains(centroids[:, 0], centroids[:, 1], tol=0.0)
    in_m = matrix_rect.contains(centroids[:, 0], centroids[:, 1], tol=0.0)
    subdomain = np.where(in_c, CONDUIT, MATRIX).astype(np.int64)
    if np.any(in_c & in_m) or np.any(~in_c & ~in_m):
        raise MeshError("rectangles overlap or leave gaps")

    local = np.array([[0, 1], [1, 2], [2, 0]])
    all_pairs = np.sort(tris[:, local].reshape(-1, 2), axis=1)
    edges, inverse = np.unique(all_pairs, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    triangle_edges = inverse.reshape(-1, 3)

    edge_triangles = -np.ones((len(edges), 2), dtype=np.int64)
    owner = np.repeat(np.arange(len(tris)), 3)
    order = np.argsort(inverse, kind="stable")
    counts = np.bincount(inverse, minlength=len(edges))
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    edge_triangles[:, 0] = owner[order[starts]]
    two = counts == 2
    edge_triangles[two, 1] = owner[order[starts[two] + 1]]

    exterior = np.flatnonzero(counts == 1)
    interior = np.flatnonzero(two)
    tags = subdomain[edge_triangles[interior]]
    interface = interior[tags[:, 0] != tags[:, 1]]

    mids = nodes[edges].mean(axis=1)
    groups: Dict[str, np.ndarray] = {}
    claimed = np.zeros(len(edges), dtype=bool)
    for name, box in (extra_groups or {}).items():
        if name in ("GammaC", "GammaM"):
            raise MeshError(f"group name {name!r} is reserved")
        sel = exterior[box.contains(mids[exterior, 0], mids[exterior, 1]) & ~claimed[exterior]]
        if len(sel) == 0:
            raise MeshError(f"boundary group {name!r} selects no exterior edges")
        claimed[sel] = True
        groups[name] = sel
    rest = exterior[~claimed[exterior]]
    ext_tag = subdomain[edge_triangles[rest, 0]]
    groups = {"GammaC": rest[ext_tag == CONDUIT], "GammaM": rest[ext_tag == MATRIX], **groups}

    # interface ordering by position along the interface
    key = mids[interface]
    interface = interface[np.lexsort((key[:, 1], key[:, 0]))]
    pair = edge_triangles[interface]
    c_first = subdomain[pair[:, 0]] == CONDUIT
    tri_c = np.where(c_first, pair[:, 0], pair[:, 1])
    tri_m = np.where(c_first, pair[:, 1], pair[:, 0])
    a, b = nodes[edges[interface, 0]], nodes[edges[interface, 1]]
    t = (b - a) / np.hypot(*(b - a).T)[:, None]
    normal = np.column_stack([t[:, 1], -t[:, 0]])
    outward = mids[interface] - centroids[tri_c]
    normal *= np.sign(np.einsum("ij,ij->i", normal, outward))[:, None]
    # exact axis-aligned components
    normal = np.round(normal, 12) + 0.0
    tau = np.column_stack([-normal[:, 1], normal[:, 0]]) + 0.0

    for arr in (nodes, tris, subdomain, edges, triangle_edges, edge_triangles, normal, tau):
        arr.setflags(write=False)
    for arr in groups.values():
        arr.setflags(write=False)

    return KarsticMesh(
        nodes=nodes,
        triangles=tris,
        subdomain=subdomain,
        edges=edges,
        triangle_edges=triangle_edges,
        edge_triangles=edge_triangles,
        boundary_edges=groups,
        interface=interface,
        n_cm=normal,
        tau_1=tau,
        interface_triangles=np.column_stack([tri_c, tri_m]),
        conduit_rect=conduit_rect,
        matrix_rect=matrix_rect,
        n=int(n),
        h=float(np.sqrt(2.0) / n),
    )


def interface_edges(mesh: KarsticMesh) -> Sequence[InterfaceEdge]:
    """Oriented interface data, one record per interface edge."""
    out = []
    for k, e in enumerate(mesh.interface):
        out.append(
            InterfaceEdge(
                edge=int(e),
                vertices=(int(mesh.edges[e, 0]), int(mesh.edges[e, 1])),
                n_cm=mesh.n_cm[k],
                tau_1=mesh.tau_1[k],
                length=float(mesh.edge_lengths[e]),
                conduit_triangle=int(mesh.interface_triangles[k, 0]),
                matrix_triangle=int(mesh.interface_triangles[k, 1]),
            )
        )
    return out


def boundary_nodes(mesh: KarsticMesh, group: str) -> np.ndarray:
    if group not in mesh.boundary_edges:
        raise MeshError(f"unknown boundary group {group!r}")
    return np.unique(mesh.edges[mesh.boundary_edges[group]])
