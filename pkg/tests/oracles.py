"""Dense brute-force assembly used as an independent oracle.

Basis functions are built per cell from a monomial Vandermonde system at the
cell's physical dof points, and integrals use a collapsed (Duffy) tensor
Gauss-Legendre rule. Neither shares code with the package's reference-element
tables or triangle rules.
"""

import numpy as np

GAUSS_POINTS = 8


def _gauss01(n=GAUSS_POINTS):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def triangle_rule(corners, n=GAUSS_POINTS):
    """Physical points and weights on the triangle ``corners`` (3, 2)."""
    s, ws = _gauss01(n)
    a, b, c = (np.asarray(p, float) for p in corners)
    xi, eta = np.meshgrid(s, s, indexing="ij")
    w = np.outer(ws, ws) * (1.0 - xi)
    u, v = xi, eta * (1.0 - xi)
    det = abs((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    pts = a + u.ravel()[:, None] * (b - a) + v.ravel()[:, None] * (c - a)
    return pts, det * w.ravel()


def segment_rule(a, b, n=GAUSS_POINTS):
    s, ws = _gauss01(n)
    a, b = np.asarray(a, float), np.asarray(b, float)
    return a + s[:, None] * (b - a), ws * np.linalg.norm(b - a)


def _monomials(pts, degree):
    x, y = pts[:, 0], pts[:, 1]
    terms = [(i, j) for d in range(degree + 1) for i in range(d, -1, -1) for j in [d - i]]
    val = np.stack([x**i * y**j for i, j in terms], axis=1)
    dx = np.stack([i * x ** max(i - 1, 0) * y**j for i, j in terms], axis=1)
    dy = np.stack([j * x**i * y ** max(j - 1, 0) for i, j in terms], axis=1)
    return val, np.stack([dx, dy], axis=-1)


class CellBasis:
    """Lagrange basis of one cell of a space in physical coordinates."""

    def __init__(self, space, local_cell):
        self.dofs = space.cell_dofs[local_cell]
        nodes = space.dof_points[self.dofs]
        self.degree = 1 if space.kind == "P1" else 2
        V, _ = _monomials(nodes, self.degree)
        self.coef = np.linalg.inv(V)

    def __call__(self, pts):
        """Values (np, nloc) and gradients (np, nloc, 2) at physical points."""
        m, dm = _monomials(np.atleast_2d(pts), self.degree)
        return m @ self.coef, np.einsum("pkd,kn->pnd", dm, self.coef)


def _cells(space):
    mesh = space.mesh
    for lc, c in enumerate(space.cells):
        yield lc, c, mesh.nodes[mesh.triangles[c]]


def field_at(field, tri, pts):
    """Value and gradient of ``field`` on mesh triangle ``tri`` at physical points."""
    space = field.space
    lc = int(np.flatnonzero(space.cells == tri)[0])
    basis = CellBasis(space, lc)
    v, g = basis(pts)
    comps = [field.coeffs[c * space.n_scalar:(c + 1) * space.n_scalar] for c in range(space.n_components)]
    vals = [v @ comp[basis.dofs] for comp in comps]
    grads = [np.einsum("pnd,n->pd", g, comp[basis.dofs]) for comp in comps]
    if len(comps) == 1:
        return vals[0], grads[0]
    return np.stack(vals, axis=-1), np.stack(grads, axis=-2)


def _vector_index(space, lc):
    return [space.cell_dofs[lc] + a * space.n_scalar for a in range(space.n_components)]


def mass(space, coeff=None):
    n = space.dof_count
    A = np.zeros((n, n))
    for lc, c, corners in _cells(space):
        pts, w = triangle_rule(corners)
        v, _ = CellBasis(space, lc)(pts)
        k = w if coeff is None else w * coeff(pts[:, 0], pts[:, 1], c)
        loc = np.einsum("p,pi,pj->ij", k, v, v)
        for idx in _vector_index(space, lc):
            A[np.ix_(idx, idx)] += loc
    return A


def stiffness(space, coeff=None, tensor=None):
    n = space.dof_count
    A = np.zeros((n, n))
    K = np.eye(2) if tensor is None else np.asarray(tensor, float)
    for lc, c, corners in _cells(space):
        pts, w = triangle_rule(corners)
        _, g = CellBasis(space, lc)(pts)
        k = w if coeff is None else w * coeff(pts[:, 0], pts[:, 1], c)
        idx = space.cell_dofs[lc]
        A[np.ix_(idx, idx)] += np.einsum("p,de,pje,pid->ij", k, K, g, g)
    return A


def tensor_mass(space, tensor, coeff=None):
    n = space.dof_count
    A = np.zeros((n, n))
    K = np.asarray(tensor, float)
    for lc, c, corners in _cells(space):
        pts, w = triangle_rule(corners)
        v, _ = CellBasis(space, lc)(pts)
        k = w if coeff is None else w * coeff(pts[:, 0], pts[:, 1], c)
        idx = _vector_index(space, lc)
        for b in range(2):
            for a in range(2):
                A[np.ix_(idx[b], idx[a])] += K[b, a] * np.einsum("p,pi,pj->ij", k, v, v)
    return A


def viscous(space, nu):
    """``2 (nu D(u), D(v))`` with ``nu(x, y, tri)``."""
    n = space.dof_count
    A = np.zeros((n, n))
    for lc, c, corners in _cells(space):
        pts, w = triangle_rule(corners)
        _, g = CellBasis(space, lc)(pts)
        k = w * nu(pts[:, 0], pts[:, 1], c)
        nl = g.shape[1]
        # symmetric gradients of the 2*nl vector basis functions
        D = np.zeros((len(pts), 2 * nl, 2, 2))
        for a in range(2):
            grad = np.zeros((len(pts), nl, 2, 2))
            grad[:, :, a, :] = g
            D[:, a * nl:(a + 1) * nl] = 0.5 * (grad + np.swapaxes(grad, -1, -2))
        loc = 2.0 * np.einsum("p,pjab,piab->ij", k, D, D)
        idx = np.concatenate(_vector_index(space, lc))
        A[np.ix_(idx, idx)] += loc
    return A


def interface_slip(space, kappa):
    """``int kappa (u . tau)(v . tau)`` with ``kappa(x, y, tri)``."""
    mesh = space.mesh
    n = space.dof_count
    A = np.zeros((n, n))
    for k, e in enumerate(mesh.interface):
        a, b = mesh.nodes[mesh.edges[e]]
        pts, w = segment_rule(a, b)
        tri = mesh.interface_triangles[k, 0]
        lc = int(np.flatnonzero(space.cells == tri)[0])
        v, _ = CellBasis(space, lc)(pts)
        t = mesh.tau_1[k]
        wk = w * kappa(pts[:, 0], pts[:, 1], tri)
        idx = _vector_index(space, lc)
        for bb in range(2):
            for aa in range(2):
                A[np.ix_(idx[bb], idx[aa])] += t[bb] * t[aa] * np.einsum("p,pi,pj->ij", wk, v, v)
    return A


def divergence(vspace, pspace):
    """``B[q, v] = -(div v, q)``."""
    B = np.zeros((pspace.dof_count, vspace.dof_count))
    for lc, c, corners in _cells(vspace):
        pts, w = triangle_rule(corners)
        _, gv = CellBasis(vspace, lc)(pts)
        lp = int(np.flatnonzero(pspace.cells == c)[0])
        q, _ = CellBasis(pspace, lp)(pts)
        for a, idx in enumerate(_vector_index(vspace, lc)):
            B[np.ix_(pspace.cell_dofs[lp], idx)] -= np.einsum("p,pi,pj->ij", w, q, gv[..., a])
    return B


def gradient_pairing(vspace, pspace):
    """``B[q, v] = (v, grad q)``."""
    B = np.zeros((pspace.dof_count, vspace.dof_count))
    for lc, c, corners in _cells(vspace):
        pts, w = triangle_rule(corners)
        v, _ = CellBasis(vspace, lc)(pts)
        lp = int(np.flatnonzero(pspace.cells == c)[0])
        _, gq = CellBasis(pspace, lp)(pts)
        for a, idx in enumerate(_vector_index(vspace, lc)):
            B[np.ix_(pspace.cell_dofs[lp], idx)] += np.einsum("p,pi,pj->ij", w, gq[..., a], v)
    return B


def interface_coupling(vspace_c, pspace_m):
    """``G[q, v] = int (v . n_cm) q``."""
    mesh = vspace_c.mesh
    G = np.zeros((pspace_m.dof_count, vspace_c.dof_count))
    for k, e in enumerate(mesh.interface):
        a, b = mesh.nodes[mesh.edges[e]]
        pts, w = segment_rule(a, b)
        tc, tm = mesh.interface_triangles[k]
        lc = int(np.flatnonzero(vspace_c.cells == tc)[0])
        lm = int(np.flatnonzero(pspace_m.cells == tm)[0])
        v, _ = CellBasis(vspace_c, lc)(pts)
        q, _ = CellBasis(pspace_m, lm)(pts)
        for aa, idx in enumerate(_vector_index(vspace_c, lc)):
            G[np.ix_(pspace_m.cell_dofs[lm], idx)] += mesh.n_cm[k, aa] * np.einsum("p,pi,pj->ij", w, q, v)
    return G


def vector_load(space, force):
    """``(f, v)`` with ``force(x, y, tri) -> (np, 2)``."""
    out = np.zeros(space.dof_count)
    for lc, c, corners in _cells(space):
        pts, w = triangle_rule(corners)
        v, _ = CellBasis(space, lc)(pts)
        f = force(pts[:, 0], pts[:, 1], c)
        for a, idx in enumerate(_vector_index(space, lc)):
            np.add.at(out, idx, np.einsum("p,p,pi->i", w, f[:, a], v))
    return out


def scalar_load(space, source=None, flux=None):
    """``(s, v) + (F, grad v)`` with ``source(x, y, tri)`` and ``flux(x, y, tri) -> (np, 2)``."""
    out = np.zeros(space.dof_count)
    for lc, c, corners in _cells(space):
        pts, w = triangle_rule(corners)
        v, g = CellBasis(space, lc)(pts)
        idx = space.cell_dofs[lc]
        if source is not None:
            np.add.at(out, idx, np.einsum("p,p,pi->i", w, source(pts[:, 0], pts[:, 1], c), v))
        if flux is not None:
            np.add.at(out, idx, np.einsum("p,pd,pid->i", w, flux(pts[:, 0], pts[:, 1], c), g))
    return out
