"""Discrete energy, dissipation, mass and per-step energy-law audits.

All integrals use the degree-4 triangle rule shared with the assembly, so
the discrete identities behind the audits close up to round-off.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

from . import assembly
from .discretization import Operators, SimState
from .fem import FEField, integrate
from .params import double_well

CSV_COLUMNS = (
    "step", "time", "kinetic_c", "kinetic_m", "free_energy", "total",
    "diss_mobility", "diss_stokes", "diss_darcy", "diss_bjsj", "diss_stab",
    "mass", "slack",
)


@dataclass
class EnergyReport:
    """Energy of one time level and, for audited steps, the ledger of the step that produced it.

    ``slack`` is the left side minus the right side of the applicable energy
    inequality; a nonpositive value means the inequality holds.
    """

    step: int = 0
    time: float = 0.0
    kinetic_c: float = 0.0
    kinetic_m: float = 0.0
    free_energy: float = 0.0
    total: float = 0.0
    diss_mobility: float = 0.0
    diss_stokes: float = 0.0
    diss_darcy: float = 0.0
    diss_bjsj: float = 0.0
    diss_stab: float = 0.0
    mass: float = 0.0
    slack: float = 0.0
    # increments and scheme-specific terms
    incr_phi: float = 0.0
    incr_u_c: float = 0.0
    incr_u_m: float = 0.0
    capillary_w: float = 0.0
    interface_term: float = 0.0
    interface_constant: float = float("nan")
    scheme: Optional[str] = None

    @property
    def dissipation(self) -> float:
        return (self.diss_mobility + self.diss_stokes + self.diss_darcy
                + self.diss_bjsj + self.diss_stab)

    def row(self) -> list:
        return [getattr(self, c) for c in CSV_COLUMNS]


def free_energy(phi: FEField, ops: Operators) -> float:
    """``gamma * int (F(phi) / eps + eps / 2 |grad phi|^2)``."""
    p = ops.params
    _, _, wdet = phi.space.tables()
    F = double_well(phi.values())
    bulk = float(np.einsum("cq,cq->", wdet, F))
    grad = float(phi.coeffs @ (ops.stiff_Y @ phi.coeffs))
    return p.gamma * (bulk / p.epsilon + 0.5 * p.epsilon * grad)


def mass_total(phi: FEField) -> float:
    """``int phi`` over the support of ``phi``."""
    return float(integrate(phi))


def discrete_energy(state: SimState, ops: Operators) -> EnergyReport:
    p = ops.params
    kc = 0.5 * p.rho0 * float(state.u_c.coeffs @ (ops.mass_c @ state.u_c.coeffs))
    km = 0.5 * p.rho0 / p.chi * float(state.u_m.coeffs @ (ops.mass_m @ state.u_m.coeffs))
    fe = free_energy(state.phi, ops)
    return EnergyReport(step=state.step, time=state.time, kinetic_c=kc, kinetic_m=km,
                        free_energy=fe, total=kc + km + fe, mass=mass_total(state.phi))


def _quad(A, x: np.ndarray) -> float:
    return float(x @ (A @ x))


def _capillary_norms(phi_k: FEField, mu: FEField, ops: Operators):
    """``||phi^k grad mu||^2`` on the matrix and on the conduit."""
    mesh = ops.disc.mesh
    _, _, wdet = ops.disc.Y.tables()
    f = assembly.capillary_force(phi_k, mu)
    sq = np.einsum("cq,cqd,cqd->c", wdet, f, f)
    return float(sq[mesh.cells("Matrix")].sum()), float(sq[mesh.cells("Conduit")].sum())


def energy_law_audit(state_k: SimState, state_new: SimState, ops: Operators, tau: float,
                     scheme: str) -> EnergyReport:
    """Evaluate every term of the step's energy inequality.

    For ``"PD"`` the slack is
    ``E1 - E0 + tau (D_mob + D_stokes + D_bjsj + D_darcy) + (gamma eps / 2)|grad dphi|^2
    + (rho0/4)|du_c|^2 + (rho0/(4 chi))|du_m|^2``.
    For ``"FD"`` the pressure stabilization ``(beta tau^2/2)|grad P_m|^2`` and
    ``(tau^2/(4 rho0))(chi |phi grad mu|_m^2 + |phi grad mu|_c^2)`` are added
    on the left, and the velocity increments carry the weights ``rho0/(6 chi)``
    and ``rho0/12``. The interface exchange term and its empirical bound
    constant are recorded, not used in the slack.
    """
    scheme = scheme.upper()
    if scheme not in ("PD", "FD"):
        raise ValueError(f"unknown scheme {scheme!r}")
    p = ops.params
    disc = ops.disc
    e0 = discrete_energy(state_k, ops)
    rep = discrete_energy(state_new, ops)
    phi_k = state_k.phi
    phase = None if p.viscosity_is_constant else phi_k
    mu = state_new.mu.coeffs
    u_c, u_m, p_m = state_new.u_c.coeffs, state_new.u_m.coeffs, state_new.p_m.coeffs

    bjsj = assembly.assemble_bjsj(disc.Xc, p, phase) if p.alpha_bjsj > 0 else None
    a_c = _quad(ops.a_c(phase), u_c)
    rep.diss_bjsj = tau * (_quad(bjsj, u_c) if bjsj is not None else 0.0)
    rep.diss_stokes = tau * a_c - rep.diss_bjsj
    rep.diss_darcy = tau * _quad(ops.a_m(phase), u_m)
    rep.diss_mobility = tau * _quad(ops.mobility_stiffness(phi_k), mu)

    dphi = state_new.phi.coeffs - phi_k.coeffs
    duc = u_c - state_k.u_c.coeffs
    dum = u_m - state_k.u_m.coeffs
    rep.incr_phi = 0.5 * p.gamma * p.epsilon * _quad(ops.stiff_Y, dphi)
    norm_duc = _quad(ops.mass_c, duc)
    norm_dum = _quad(ops.mass_m, dum)
    grad_pm = _quad(ops.stiff_Mm, p_m)

    rep.interface_term = -float(p_m @ (ops.coupling @ duc))
    denom = math.sqrt(max(grad_pm, 0.0) * max(_quad(ops.mass_c, duc), 0.0))
    rep.interface_constant = abs(rep.interface_term) / denom if denom > 0 else float("nan")

    if scheme == "PD":
        rep.incr_u_c = 0.25 * p.rho0 * norm_duc
        rep.incr_u_m = 0.25 * p.rho0 / p.chi * norm_dum
    else:
        rep.diss_stab = 0.5 * p.beta * tau**2 * grad_pm
        cap_m, cap_c = _capillary_norms(phi_k, state_new.mu, ops)
        rep.capillary_w = tau**2 / (4 * p.rho0) * (p.chi * cap_m + cap_c)
        rep.incr_u_c = p.rho0 / 12 * norm_duc
        rep.incr_u_m = p.rho0 / (6 * p.chi) * norm_dum
    rep.slack = (rep.total - e0.total + rep.dissipation + rep.capillary_w
                 + rep.incr_phi + rep.incr_u_c + rep.incr_u_m)
    rep.scheme = scheme
    return rep


def write_energy_csv(reports: Iterable[EnergyReport], path: Union[str, Path]) -> Path:
    """One row per report in the fixed column order of ``CSV_COLUMNS``."""
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in reports:
                w.writerow([v if isinstance(v, int) else repr(float(v)) for v in r.row()])
    except OSError as exc:
        raise OSError(f"cannot write energy log {path}: {exc}") from exc
    return path


def read_energy_csv(path: Union[str, Path]) -> list:
    with Path(path).open() as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]
