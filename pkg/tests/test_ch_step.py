import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from chsd import assembly
from chsd.ch_step import CHSystem, ch_residual, ch_step
from chsd.diagnostics import free_energy
from chsd.discretization import Operators, make_discretization
from chsd.fem import FEField, zeros
from chsd.params import PhysicalParams

from conftest import stacked_mesh

SPINODAL = PhysicalParams(rho0=0.01, chi=1.0, nu=0.1, permeability=1.0, gamma=0.1, epsilon=0.01, mobility=0.1)


def _ops(n=4, params=PhysicalParams(), mesh=None):
    return Operators(make_discretization(mesh or stacked_mesh(n)), params)


def _const(space, value):
    return FEField(space, np.full(space.dof_count, float(value)))


def test_residual_vanishes_at_pure_phase():
    ops = _ops()
    Y = ops.disc.Y
    one = _const(Y, 1.0)
    r1, r2 = ch_residual(one, zeros(Y), one, None, None, ops, 0.1)
    assert np.max(np.abs(r1)) <= 1e-14 and np.max(np.abs(r2)) <= 1e-14


def test_residual_vanishes_at_zero_phase():
    ops = _ops()
    Y = ops.disc.Y
    r1, r2 = ch_residual(zeros(Y), zeros(Y), zeros(Y), None, None, ops, 0.1)
    assert np.all(r1 == 0) and np.all(r2 == 0)


def test_residual_matches_dense_oracle(tiny_mesh, rng):
    params = PhysicalParams(rho0=0.5, chi=2.0, gamma=0.3, epsilon=0.2, mobility=0.7)
    ops = _ops(params=params, mesh=tiny_mesh)
    d = ops.disc
    Y = d.Y
    phi_k, phi, mu = (FEField(Y, 0.3 * rng.uniform(-1, 1, Y.dof_count)) for _ in range(3))
    u_c = FEField(d.Xc, 0.3 * rng.uniform(-1, 1, d.Xc.dof_count))
    u_m = FEField(d.Xm, 0.3 * rng.uniform(-1, 1, d.Xm.dof_count))
    tau = 0.2
    r1, r2 = ch_residual(phi, mu, phi_k, u_c, u_m, ops, tau)

    def val(f):
        return lambda x, y, t: oracles.field_at(f, t, np.column_stack([x, y]))[0]

    M = oracles.mass(Y)
    K = oracles.stiffness(Y)
    w = assembly.transport_weight(d.mesh, params)
    C = oracles.stiffness(Y, lambda x, y, t: tau * w[t] * val(phi_k)(x, y, t) ** 2)

    def flux(x, y, t):
        u = u_c if d.mesh.subdomain[t] == 0 else u_m
        return val(u)(x, y, t) * val(phi_k)(x, y, t)[:, None]

    L = oracles.scalar_load(Y, flux=flux)
    cubic = oracles.scalar_load(Y, source=lambda x, y, t: val(phi)(x, y, t) ** 3)
    e1 = M @ (phi.coeffs - phi_k.coeffs) / tau + (0.7 * K + C) @ mu.coeffs - L
    e2 = 0.3 / 0.2 * (cubic - M @ phi_k.coeffs) + 0.3 * 0.2 * K @ phi.coeffs - M @ mu.coeffs
    assert np.max(np.abs(r1 - e1)) <= 1e-12
    assert np.max(np.abs(r2 - e2)) <= 1e-12


def test_jacobian_is_symmetric_and_matches_finite_differences(rng):
    ops = _ops(3, SPINODAL.with_(epsilon=0.1))
    Y = ops.disc.Y
    phi_k = FEField(Y, rng.uniform(-1, 1, Y.dof_count))
    sysm = CHSystem.build(ops, phi_k, None, None, 0.1)
    phi, mu = rng.uniform(-1, 1, Y.dof_count), rng.uniform(-1, 1, Y.dof_count)
    J = sysm.jacobian(phi)
    assert abs(J - J.T).max() <= 1e-14
    n = Y.dof_count
    d = rng.normal(size=2 * n)
    h = 1e-6

    def F(z):
        r1, r2 = sysm.residual(z[:n], z[n:])
        return np.concatenate([r2, -0.1 * r1])

    z = np.concatenate([phi, mu])
    fd = (F(z + h * d) - F(z - h * d)) / (2 * h)
    assert np.max(np.abs(fd - J @ d)) <= 1e-6 * np.max(np.abs(fd))


@pytest.mark.parametrize("value", [1.0, -1.0])
def test_pure_phase_is_fixed_point_in_one_iteration(value):
    ops = _ops()
    Y = ops.disc.Y
    phi_k = _const(Y, value)
    phi, mu, stats = ch_step(phi_k, zeros(ops.disc.Xc), zeros(ops.disc.Xm), ops, 0.1)
    assert stats.iterations == 1
    assert np.max(np.abs(phi.coeffs - value)) <= 1e-12
    assert np.max(np.abs(mu.coeffs)) <= 1e-12


def test_determinism(rng):
    ops = _ops(6, SPINODAL)
    Y = ops.disc.Y
    phi_k = FEField(Y, -0.05 + 0.05 * rng.uniform(-1, 1, Y.dof_count))
    a = ch_step(phi_k, None, None, ops, 0.1)
    b = ch_step(phi_k, None, None, _ops(6, SPINODAL), 0.1)
    assert np.array_equal(a[0].coeffs, b[0].coeffs) and np.array_equal(a[1].coeffs, b[1].coeffs)


def test_newton_tail_is_quadratic(rng):
    ops = _ops(8, SPINODAL)
    Y = ops.disc.Y
    phi_k = FEField(Y, rng.uniform(-1, 1, Y.dof_count))
    _, _, stats = ch_step(phi_k, None, None, ops, 0.1)
    r = stats.residuals
    assert r[-1] <= stats.tolerance
    tail = [(a, b) for a, b in zip(r, r[1:]) if a < 1e-3 and b > 1e-12]
    assert tail
    for a, b in tail:
        assert b <= 1e3 * a * a


def test_rejects_nonpositive_step():
    ops = _ops()
    with pytest.raises(ValueError):
        ch_step(zeros(ops.disc.Y), None, None, ops, 0.0)


def _dissipation(ops, phi_k, mu, tau):
    sysm = CHSystem.build(ops, phi_k, None, None, tau)
    return tau * float(mu.coeffs @ (sysm.mu_operator @ mu.coeffs))


@pytest.mark.parametrize("tau", [0.1, 1.0, 10.0])
def test_convex_splitting_energy_inequality(tau):
    ops = _ops(10, SPINODAL)
    Y = ops.disc.Y
    phi_k = FEField(Y, -0.05 + 0.05 * np.random.default_rng(7).uniform(-1, 1, Y.dof_count))
    phi, mu, _ = ch_step(phi_k, None, None, ops, tau)
    lhs = free_energy(phi, ops) - free_energy(phi_k, ops) + _dissipation(ops, phi_k, mu, tau)
    assert lhs <= 1e-12 * (1 + free_energy(phi_k, ops))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), tau=st.sampled_from([1e-3, 0.1, 1.0, 10.0]),
       amp=st.floats(0.0, 2.0))
def test_mass_conserved_with_advection(seed, tau, amp):
    rng = np.random.default_rng(seed)
    ops = _ops(3, SPINODAL.with_(epsilon=0.05))
    d = ops.disc
    phi_k = FEField(d.Y, rng.uniform(-1, 1, d.Y.dof_count))
    u_c = FEField(d.Xc, amp * rng.uniform(-1, 1, d.Xc.dof_count))
    u_m = FEField(d.Xm, amp * rng.uniform(-1, 1, d.Xm.dof_count))
    phi, _, _ = ch_step(phi_k, u_c, u_m, ops, tau)
    w = np.asarray(ops.mass_Y.sum(axis=0)).ravel()
    assert abs(w @ phi.coeffs - w @ phi_k.coeffs) <= 1e-12
