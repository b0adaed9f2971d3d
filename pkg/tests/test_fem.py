import numpy as np
import pytest
import sympy as sym
from hypothesis import given, settings, strategies as st

from chsd.fem import (Dirichlet, FEField, build_space, error_norm, field_from_checkpoint, integrate,
                      interpolate, read_checkpoint, reference_basis, write_checkpoint, zeros)
from chsd.mesh import Rect, build_karstic_mesh
from chsd.quadrature import quadrature_rule

from conftest import stacked_mesh


def _triangle_integral(f_expr, x, y):
    return float(sym.integrate(sym.integrate(f_expr, (y, 0, 1 - x)), (x, 0, 1)))


def _apply(rule, f):
    return float(np.sum(rule.weights * f(rule.points[:, 0], rule.points[:, 1])))


def test_triangle_rule_degree4_on_x4():
    x, y = sym.symbols("x y")
    exact = _triangle_integral(x**4, x, y)
    assert exact == pytest.approx(1 / 30)
    assert _apply(quadrature_rule("triangle", 4), lambda a, b: a**4) == pytest.approx(exact, abs=1e-14)


def test_triangle_rule_degree2_not_exact_for_quartic():
    x, y = sym.symbols("x y")
    exact = _triangle_integral(x**2 * y**2, x, y)
    assert exact == pytest.approx(1 / 180)
    f = lambda a, b: a**2 * b**2
    assert abs(_apply(quadrature_rule("triangle", 2), f) - exact) > 1e-4
    assert _apply(quadrature_rule("triangle", 4), f) == pytest.approx(exact, abs=1e-15)


def test_edge_rule():
    rule = quadrature_rule("edge", 2)
    assert float(np.sum(rule.weights * rule.points**2)) == pytest.approx(1 / 3, abs=1e-15)


@pytest.mark.parametrize("degree", [1, 2, 3, 4, 5, 6])
def test_triangle_rules_exact_up_to_degree(degree):
    x, y = sym.symbols("x y")
    rule = quadrature_rule("triangle", degree)
    assert np.all(rule.weights > 0)
    for i in range(degree + 1):
        for j in range(degree + 1 - i):
            exact = _triangle_integral(x**i * y**j, x, y)
            assert _apply(rule, lambda a, b: a**i * b**j) == pytest.approx(exact, abs=1e-14)


def test_quadrature_rejects_unknown_requests():
    with pytest.raises(ValueError):
        quadrature_rule("triangle", 9)
    with pytest.raises(ValueError):
        quadrature_rule("square", 2)


def test_reference_basis_partition_of_unity_and_nodality():
    nodes = np.array([[0, 0], [1, 0], [0, 1], [0.5, 0], [0.5, 0.5], [0, 0.5]])
    vals, grads = reference_basis("P2", nodes)
    np.testing.assert_allclose(vals, np.eye(6), atol=1e-15)
    pts = np.random.default_rng(0).uniform(0, 0.5, (20, 2))
    for kind in ("P1", "P2"):
        v, g = reference_basis(kind, pts)
        np.testing.assert_allclose(v.sum(axis=1), 1.0)
        np.testing.assert_allclose(g.sum(axis=1), 0.0, atol=1e-13)


def test_dof_counts():
    mesh = stacked_mesh(2)
    assert build_space(mesh, "P1").dof_count == 15
    small = build_karstic_mesh(Rect(0, 1, -1, 0), Rect(0, 1, 0, 1), 1)
    conduit_tris = small.triangles[small.cells("Conduit")]
    nv = len(np.unique(conduit_tris))
    ne = len(np.unique(small.triangle_edges[small.cells("Conduit")]))
    assert (nv, ne) == (4, 5)
    assert build_space(small, "P2", "vector2", "Conduit").dof_count == 2 * (nv + ne) == 18
    Mm = build_space(mesh, "P1", "scalar", "Matrix", mean_zero=True)
    assert Mm.mean_zero and Mm.dof_count == build_space(mesh, "P1", "scalar", "Matrix").dof_count


def test_dirichlet_values_and_normal_components():
    mesh = stacked_mesh(3)
    Xc = build_space(mesh, "P2", "vector2", "Conduit", [Dirichlet("GammaC", None, lambda x, y: (x, 2 * y))])
    pts = Xc.dof_points
    idx = Xc.constrained
    comp, scalar = idx // Xc.n_scalar, idx % Xc.n_scalar
    expected = np.where(comp == 0, pts[scalar, 0], 2 * pts[scalar, 1])
    np.testing.assert_allclose(Xc.constrained_values, expected)
    Xm = build_space(mesh, "P2", "vector2", "Matrix", [Dirichlet("GammaM", "normal")])
    comp = Xm.constrained // Xm.n_scalar
    p = Xm.dof_points[Xm.constrained % Xm.n_scalar]
    # top wall constrains u2, side walls constrain u1
    assert np.all((comp == 1) | np.isclose(p[:, 0], 0) | np.isclose(p[:, 0], 1))
    assert np.all((comp == 0) | np.isclose(p[:, 1], 1))
    with pytest.raises(Exception):
        build_space(mesh, "P3")


def test_interpolation_examples():
    mesh = build_karstic_mesh(Rect(0, 1, -1, 0), Rect(0, 1, 0, 1), 4)
    Y = build_space(mesh, "P2", "scalar")
    assert np.all(interpolate(Y, lambda x, y: 1.0 + 0 * x).coeffs == 1.0)
    lin = interpolate(Y, lambda x, y: x)
    assert error_norm(lin, lambda x, y: x) <= 1e-14
    X = build_space(mesh, "P2", "vector2")
    u = interpolate(X, lambda x, y: (-2 * np.sin(np.pi * x) ** 2 * np.sin(2 * np.pi * y),
                                     2 * np.sin(2 * np.pi * x) * np.sin(np.pi * y) ** 2))
    outer = np.concatenate([mesh.boundary_edges[g] for g in mesh.boundary_edges])
    verts = np.unique(mesh.edges[outer])
    local = np.unique(mesh.triangles)  # whole domain: vertex dofs are the nodes
    assert np.max(np.abs(u.coeffs[:X.n_scalar][np.searchsorted(local, verts)])) <= 1e-14
    assert np.max(np.abs(u.coeffs[X.n_scalar:][np.searchsorted(local, verts)])) <= 1e-14


def test_error_norm_examples():
    mesh = stacked_mesh(4)
    Y = build_space(mesh, "P1")
    one = interpolate(Y, lambda x, y: 1 + 0 * x)
    assert error_norm(one, one) == 0.0
    assert error_norm(one, zeros(Y)) == pytest.approx(np.sqrt(2.0), abs=1e-14)
    x = sym.symbols("x")
    exact = float(sym.integrate(sym.sin(sym.pi * x) ** 2, (x, 0, 1))) * 2.0
    mesh32 = stacked_mesh(32)
    f = interpolate(build_space(mesh32, "P2"), lambda x, y: np.sin(np.pi * x))
    assert error_norm(f, lambda x, y: 0 * x) == pytest.approx(np.sqrt(exact), abs=1e-4)
    with pytest.raises(Exception):
        error_norm(one, interpolate(build_space(stacked_mesh(2), "P1"), lambda x, y: x))


def test_integrate_and_vertex_values():
    mesh = stacked_mesh(2)
    Mm = build_space(mesh, "P1", "scalar", "Matrix")
    f = interpolate(Mm, lambda x, y: x + y)
    assert integrate(f) == pytest.approx(1.0, abs=1e-14)
    vv = f.vertex_values()
    assert np.isnan(vv[mesh.nodes[:, 1] < -1e-12]).all()
    inside = mesh.nodes[:, 1] > -1e-12
    np.testing.assert_allclose(vv[inside], mesh.nodes[inside].sum(axis=1))


def test_field_rejects_wrong_length():
    Y = build_space(stacked_mesh(2), "P1")
    with pytest.raises(ValueError):
        FEField(Y, np.zeros(3))


def test_checkpoint_roundtrip(tmp_path):
    mesh = stacked_mesh(3)
    X = build_space(mesh, "P2", "vector2", "Conduit")
    u = FEField(X, np.random.default_rng(3).normal(size=X.dof_count))
    path = write_checkpoint(u, tmp_path / "u.bin")
    header, coeffs = read_checkpoint(path)
    assert header["dof_count"] == X.dof_count and header["kind"] == "P2"
    back = field_from_checkpoint(X, path)
    assert np.array_equal(back.coeffs, u.coeffs)
    with pytest.raises(ValueError):
        field_from_checkpoint(build_space(mesh, "P1"), path)
    (tmp_path / "junk.bin").write_bytes(b"nope")
    with pytest.raises(ValueError):
        read_checkpoint(tmp_path / "junk.bin")


@settings(max_examples=20, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), c=st.floats(-3, 3), n=st.integers(1, 4))
def test_p2_reproduces_quadratics(a, b, c, n):
    mesh = stacked_mesh(n)
    f = lambda x, y: a * x * x + b * x * y + c * y * y + 1.0
    u = interpolate(build_space(mesh, "P2"), f)
    assert error_norm(u, f) <= 1e-12 * (1 + abs(a) + abs(b) + abs(c))
