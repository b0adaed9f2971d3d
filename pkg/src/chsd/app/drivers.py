"""Experiment drivers: single runs, temporal convergence, scheme comparison, beta calibration."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..ch_step import NewtonStats
from ..diagnostics import EnergyReport, discrete_energy, write_energy_csv
from ..discretization import Discretization, Operators, SimState, make_discretization, rest_state
from ..fd_scheme import fd_step
from ..fem import FEField, error_norm, interpolate, zeros
from ..linalg import SolverError
from ..mesh import build_karstic_mesh
from ..pd_scheme import pd_darcy_pressure_variant, pd_step, steady_stokes
from .config import ConfigError, RunConfig, evaluate_expression
from .io import write_outputs

logger = logging.getLogger(__name__)

STEPPERS = {"pd": pd_step, "fd": fd_step}
CONVERGENCE_FIELDS = ("u_c", "u_m", "p_m", "phi")


class RunError(RuntimeError):
    def __init__(self, step: int, cause: Exception):
        self.step = step
        super().__init__(f"step {step} failed: {cause}")


@dataclass
class RunResult:
    config: RunConfig
    state: SimState
    reports: List[EnergyReport]
    newton: List[NewtonStats] = field(default_factory=list)
    files: List[Path] = field(default_factory=list)
    phi_range: Tuple[float, float] = (np.inf, -np.inf)

    @property
    def mass_drift(self) -> float:
        """Largest ``|int phi^k - int phi^0|`` over the run."""
        m0 = self.reports[0].mass
        return max(abs(r.mass - m0) for r in self.reports)

    @property
    def energies(self) -> np.ndarray:
        return np.array([r.total for r in self.reports])

    @property
    def slacks(self) -> np.ndarray:
        return np.array([r.slack for r in self.reports[1:]])


def build_discretization(config: RunConfig) -> Discretization:
    mesh = build_karstic_mesh(config.conduit, config.matrix, config.n, config.extra_groups())
    return make_discretization(mesh, config.inflow_profile(), config.open_transport)


def convergence_phase(x, y):
    return 0.24 * np.cos(2 * np.pi * x) * np.cos(2 * np.pi * y) + 0.4 * np.cos(np.pi * x) * np.cos(3 * np.pi * y) + 1.0


def convergence_velocity(x, y):
    return (-2 * np.sin(np.pi * x) ** 2 * np.sin(2 * np.pi * y),
            2 * np.sin(2 * np.pi * x) * np.sin(np.pi * y) ** 2)


def initial_phase(config: RunConfig, disc: Discretization) -> FEField:
    Y = disc.Y
    spec = config.phi0
    x, y = Y.dof_points[:, 0], Y.dof_points[:, 1]
    if spec == "convergence":
        return interpolate(Y, convergence_phase)
    if spec == "spinodal":
        rng = np.random.default_rng(config.seed)
        return FEField(Y, config.phi_mean + rng.uniform(-config.phi_noise, config.phi_noise, Y.dof_count))
    if spec == "constant":
        return FEField(Y, np.full(Y.dof_count, config.phi_mean))
    if spec in ("droplet", "bubble"):
        r = np.hypot(x - config.center[0], y - config.center[1])
        profile = np.tanh((config.radius - r) / np.sqrt(2.0 * config.params.epsilon))
        return FEField(Y, -profile if spec == "droplet" else profile)
    return FEField(Y, np.array(np.broadcast_to(evaluate_expression(spec, x, y), x.shape), dtype=float))


def _velocity(space, func) -> FEField:
    u = interpolate(space, func)
    u.coeffs[space.constrained] = space.constrained_values
    return u


def initial_state(config: RunConfig, disc: Discretization, ops: Operators) -> SimState:
    """Initial fields; ``steady_stokes`` solves the steady conduit problem and then one
    pressure-form Darcy stage driven by its interface flux."""
    state = rest_state(disc, initial_phase(config, disc))
    spec = config.u0
    if spec == "zero":
        state.u_c = _velocity(disc.Xc, lambda x, y: (0.0 * x, 0.0 * y))
    elif spec == "convergence":
        state.u_c = _velocity(disc.Xc, convergence_velocity)
        state.u_m = _velocity(disc.Xm, convergence_velocity)
    elif spec == "steady_stokes":
        state.u_c, state.p_c = steady_stokes(state.phi, ops)
        state.p_m, state.u_m = pd_darcy_pressure_variant(state, zeros(disc.Y), state.u_c, ops, config.tau)
    else:
        def func(x, y):
            val = evaluate_expression(spec, x, y)
            if not (isinstance(val, tuple) and len(val) == 2):
                raise ConfigError(f"velocity expression {spec!r} must give two components")
            return tuple(np.broadcast_to(np.asarray(v, float), x.shape) for v in val)
        state.u_c = _velocity(disc.Xc, func)
        state.u_m = _velocity(disc.Xm, func)
    return state


def _simulate(config: RunConfig, disc: Discretization, ops: Operators, out_dir: Optional[Path],
              audit: bool = True, progress: Optional[Callable[[EnergyReport], None]] = None) -> RunResult:
    step_fn = STEPPERS[config.scheme]
    state = initial_state(config, disc, ops)
    reports = [discrete_energy(state, ops)]
    result = RunResult(config, state, reports)
    lo, hi = float(state.phi.coeffs.min()), float(state.phi.coeffs.max())
    cadence = config.output_every
    if out_dir is not None and cadence:
        result.files += write_outputs(state, disc.mesh, out_dir, config.name)
    for k in range(config.steps):
        try:
            step = step_fn(state, ops, config.tau, audit=audit)
        except (SolverError, ValueError, np.linalg.LinAlgError) as exc:
            raise RunError(k + 1, exc) from exc
        state = step.state
        report = step.audit if audit else discrete_energy(state, ops)
        reports.append(report)
        result.newton.append(step.newton)
        lo, hi = min(lo, float(state.phi.coeffs.min())), max(hi, float(state.phi.coeffs.max()))
        if out_dir is not None and cadence and state.step % cadence == 0:
            result.files += write_outputs(state, disc.mesh, out_dir, config.name)
        if progress is not None:
            progress(report)
    result.state = state
    result.phi_range = (lo, hi)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        result.files.append(write_energy_csv(reports, out_dir / f"{config.name}_energy.csv"))
    return result


def run_case(config: RunConfig, out_dir: Union[str, Path, None] = None, audit: bool = True,
             progress: Optional[Callable[[EnergyReport], None]] = None) -> RunResult:
    """Run one simulation; snapshots every ``output_every`` steps and the energy log go to ``out_dir``."""
    disc = build_discretization(config)
    ops = Operators(disc, config.params)
    logger.info("%s: scheme %s, n=%d, tau=%g, %d steps", config.name, config.scheme, config.n,
                config.tau, config.steps)
    return _simulate(config, disc, ops, Path(out_dir) if out_dir is not None else None, audit, progress)


def _fields(state: SimState) -> Dict[str, FEField]:
    return {"u_c": state.u_c, "u_m": state.u_m, "p_m": state.p_m, "phi": state.phi}


def _slope(taus, errors) -> float:
    e = np.asarray(errors, float)
    if np.any(e <= 0):
        return float("nan")
    return float(np.polyfit(np.log(taus), np.log(e), 1)[0])


@dataclass
class ConvergenceTable:
    """L2 errors per field and time step with least-squares log-log slopes.

    ``constants`` is the mean of ``error / tau`` per field.
    """

    scheme: str
    taus: Tuple[float, ...]
    errors: Dict[str, List[float]]
    slopes: Dict[str, float]
    constants: Dict[str, float]
    reference_tau: Optional[float] = None

    def format(self) -> str:
        names = list(self.errors)
        head = "tau        " + "".join(f"{n:>14}" for n in names)
        rows = [head]
        for i, t in enumerate(self.taus):
            rows.append(f"{t:<11g}" + "".join(f"{self.errors[n][i]:>14.4e}" for n in names))
        rows.append("slope      " + "".join(f"{self.slopes[n]:>14.3f}" for n in names))
        rows.append("e/tau      " + "".join(f"{self.constants[n]:>14.4e}" for n in names))
        return "\n".join(rows)


def _table(scheme, taus, errors, ref=None) -> ConvergenceTable:
    slopes = {k: _slope(taus, v) for k, v in errors.items()}
    consts = {k: float(np.mean(np.asarray(v) / np.asarray(taus))) for k, v in errors.items()}
    return ConvergenceTable(scheme, tuple(taus), errors, slopes, consts, ref)


def _final_state(config: RunConfig, disc: Discretization, ops: Operators, tau: float) -> SimState:
    return _simulate(config.with_(tau=tau, output_every=0), disc, ops, None, audit=False).state


def run_convergence(config: RunConfig, taus: Sequence[float] = (0.04, 0.02, 0.01),
                    tau_ref: float = 0.00125) -> ConvergenceTable:
    """Errors at ``t_final`` against a fine-step reference run on the same mesh."""
    taus = tuple(sorted(taus, reverse=True))
    if tau_ref > min(taus) / 8 * (1 + 1e-12):
        raise ValueError(f"reference step {tau_ref} must be at most min(tau)/8 = {min(taus) / 8}")
    disc = build_discretization(config)
    ops = Operators(disc, config.params)
    ref = _fields(_final_state(config, disc, ops, tau_ref))
    errors: Dict[str, List[float]] = {k: [] for k in CONVERGENCE_FIELDS}
    for tau in taus:
        got = _fields(_final_state(config, disc, ops, tau))
        for k in CONVERGENCE_FIELDS:
            errors[k].append(error_norm(got[k], ref[k]))
        logger.info("tau=%g: %s", tau, {k: v[-1] for k, v in errors.items()})
    return _table(config.scheme, taus, errors, tau_ref)


def compare_schemes(config: RunConfig, taus: Sequence[float] = (0.04, 0.02, 0.01)) -> ConvergenceTable:
    """L2 differences between the decoupled and partially decoupled solutions at ``t_final``."""
    taus = tuple(sorted(taus, reverse=True))
    disc = build_discretization(config)
    ops = Operators(disc, config.params)
    errors: Dict[str, List[float]] = {k: [] for k in CONVERGENCE_FIELDS}
    for tau in taus:
        fd = _fields(_final_state(config.with_(scheme="fd"), disc, ops, tau))
        pd = _fields(_final_state(config.with_(scheme="pd"), disc, ops, tau))
        for k in CONVERGENCE_FIELDS:
            errors[k].append(error_norm(fd[k], pd[k]))
    return _table("fd-pd", taus, errors)


@dataclass
class BetaCalibration:
    beta: Optional[float]
    worst_slack: Dict[float, float]

    def format(self) -> str:
        rows = [f"{b:<12g}{s:>14.4e}" for b, s in self.worst_slack.items()]
        pick = "none" if self.beta is None else f"{self.beta:g}"
        return "beta        worst slack\n" + "\n".join(rows) + f"\nsmallest stable beta: {pick}"


def calibrate_beta(config: RunConfig, betas: Optional[Sequence[float]] = None, steps: int = 10,
                   tol: float = 1e-8) -> BetaCalibration:
    """Sweep beta downward over a short decoupled-scheme probe run.

    Returns the smallest beta whose energy-ledger slack stays at most ``tol``
    on every probe step, stopping at the first beta that fails.
    """
    betas = sorted(betas if betas is not None else [2.0 ** -k for k in range(11)], reverse=True)
    probe = config.with_(scheme="fd", t_final=steps * config.tau, output_every=0)
    disc = build_discretization(probe)
    worst: Dict[float, float] = {}
    chosen = None
    for beta in betas:
        cfg = probe.with_(params=probe.params.with_(beta=beta))
        res = _simulate(cfg, disc, Operators(disc, cfg.params), None)
        worst[beta] = float(res.slacks.max())
        if worst[beta] > tol:
            break
        chosen = beta
    return BetaCalibration(chosen, worst)
