"""Run configuration: a small ``key = value`` format with ``[section]`` headers.

Example::

    [run]
    preset = droplet
    tau = 0.002

    [physics]
    gamma = 0.002

Omitted keys take the preset's value, or the documented default when no
preset is named. Every parse error carries the offending line number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np

from ..mesh import Rect
from ..params import PhysicalParams


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


# phase-field and velocity initial conditions understood besides expressions
PHI_PRESETS = ("convergence", "spinodal", "droplet", "bubble", "constant")
U_PRESETS = ("zero", "convergence", "steady_stokes")


@dataclass(frozen=True)
class RunConfig:
    """Everything a driver needs to set up and run one simulation."""

    name: str = "custom"
    scheme: str = "fd"
    n: int = 10
    tau: float = 0.01
    t_final: float = 1.0
    seed: int = 0
    output_every: int = 0
    conduit: Rect = Rect(0.0, 1.0, -1.0, 0.0)
    matrix: Rect = Rect(0.0, 1.0, 0.0, 1.0)
    inflow_amplitude: Optional[float] = None
    inflow_span: Tuple[float, float] = (0.4, 0.6)
    outflow: bool = False
    open_transport: bool = False
    params: PhysicalParams = field(default_factory=PhysicalParams)
    phi0: str = "convergence"
    phi_mean: float = 0.0
    phi_noise: float = 0.0
    center: Tuple[float, float] = (0.5, 0.5)
    radius: float = 0.15
    u0: str = "zero"
    newton_rtol: float = 1e-10
    linear_tol: float = 1e-10

    def __post_init__(self):
        for key in ("n", "tau", "t_final"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"{key} must be positive, got {getattr(self, key)}")
        if self.scheme not in ("pd", "fd"):
            raise ConfigError(f"scheme must be 'pd' or 'fd', got {self.scheme!r}")
        if self.output_every < 0:
            raise ConfigError("output_every must be nonnegative")
        steps = self.t_final / self.tau
        if abs(steps - round(steps)) > 1e-8 * max(1.0, steps):
            raise ConfigError(f"t_final = {self.t_final} is not a multiple of tau = {self.tau}")

    @property
    def steps(self) -> int:
        return int(round(self.t_final / self.tau))

    def with_(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    def inflow_profile(self) -> Optional[Callable]:
        """Parabolic inflow ``u1 = a * 4 (y - y0)(y1 - y) / (y1 - y0)^2``, ``u2 = 0``."""
        if self.inflow_amplitude is None:
            return None
        a = self.inflow_amplitude
        y0, y1 = self.inflow_span

        def profile(x, y):
            u1 = a * 4.0 * (y - y0) * (y1 - y) / (y1 - y0) ** 2
            return np.where((y >= y0) & (y <= y1), u1, 0.0), np.zeros_like(y)

        return profile

    def extra_groups(self) -> Dict[str, Rect]:
        """Selection boxes for the inflow (left conduit side) and outflow (right matrix side) groups."""
        d = 1e-9
        groups = {}
        if self.inflow_amplitude is not None:
            x = self.conduit.x0
            groups["GammaIn"] = Rect(x - d, x + d, *self.inflow_span)
        if self.outflow:
            x = self.matrix.x1
            groups["GammaOut"] = Rect(x - d, x + d, self.matrix.y0, self.matrix.y1)
        return groups


def _preset_table() -> Dict[str, RunConfig]:
    stacked = dict(conduit=Rect(0.0, 1.0, -1.0, 0.0), matrix=Rect(0.0, 1.0, 0.0, 1.0))
    channel = dict(conduit=Rect(0.0, 1.0, 0.0, 1.0), matrix=Rect(1.0, 2.0, 0.0, 1.0))
    interface_flow = PhysicalParams(
        rho0=1.0, chi=1.0, nu=0.1, permeability=0.001, gamma=0.001, epsilon=0.01,
        alpha_bjsj=0.1, mobility="degenerate", beta=1.0,
    )
    return {
        "convergence": RunConfig(
            name="convergence", scheme="fd", n=10, tau=0.01, t_final=1.0, **stacked,
            params=PhysicalParams(), phi0="convergence", u0="convergence",
        ),
        "spinodal": RunConfig(
            name="spinodal", scheme="fd", n=20, tau=0.1, t_final=10.0, **stacked,
            params=PhysicalParams(rho0=0.01, chi=1.0, nu=0.1, permeability=1.0, gamma=0.1,
                                  epsilon=0.01, mobility=0.1, beta=1.0),
            phi0="spinodal", phi_mean=-0.05, phi_noise=0.05, u0="convergence",
        ),
        "droplet": RunConfig(
            name="droplet", scheme="fd", n=20, tau=0.001, t_final=0.4, **channel,
            inflow_amplitude=1.0, inflow_span=(0.4, 0.6), outflow=True, open_transport=True,
            params=interface_flow, phi0="droplet", center=(0.4, 0.5), radius=0.15,
            u0="steady_stokes", output_every=100,
        ),
        "bubble": RunConfig(
            name="bubble", scheme="fd", n=20, tau=0.001, t_final=0.75, **stacked,
            params=interface_flow.with_(permeability=0.01, buoyancy=2.0),
            phi0="bubble", center=(0.5, -0.4), radius=0.2, u0="zero", output_every=250,
        ),
    }


PRESETS = tuple(_preset_table())


def preset(name: str) -> RunConfig:
    table = _preset_table()
    if name not in table:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(table)}")
    return table[name]


# key -> (target attribute, converter); physics keys map onto PhysicalParams

def _float(v: str) -> float:
    x = float(v)
    if not math.isfinite(x):
        raise ValueError("not a finite number")
    return x


def _int(v: str) -> int:
    return int(v)


def _bool(v: str) -> bool:
    low = v.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError("expected true or false")


def _floats(count: int):
    def conv(v: str):
        parts = v.replace(",", " ").split()
        if len(parts) != count:
            raise ValueError(f"expected {count} numbers")
        return tuple(_float(p) for p in parts)
    return conv


def _rect(v: str) -> Rect:
    return Rect(*_floats(4)(v))


def _optional_float(v: str) -> Optional[float]:
    return None if v.lower() == "none" else _float(v)


def _permeability(v: str):
    parts = v.replace(",", " ").split()
    if len(parts) == 1:
        return _float(parts[0])
    if len(parts) == 4:
        return [[_float(parts[0]), _float(parts[1])], [_float(parts[2]), _float(parts[3])]]
    raise ValueError("expected one number or four matrix entries")


def _mobility(v: str):
    return "degenerate" if v.lower() == "degenerate" else _float(v)


def _choice(*options):
    def conv(v: str):
        if v.lower() not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return v.lower()
    return conv


_SCHEMA: Dict[str, Dict[str, Callable[[str], Any]]] = {
    "run": {
        "preset": str, "name": str, "scheme": _choice("pd", "fd"), "n": _int, "tau": _float,
        "t_final": _float, "seed": _int, "output_every": _int,
    },
    "geometry": {
        "conduit": _rect, "matrix": _rect, "inflow_amplitude": _optional_float,
        "inflow_span": _floats(2), "outflow": _bool,
        "open_transport": _bool,
    },
    "physics": {
        "rho0": _float, "chi": _float, "nu": _float, "nu_minus": _optional_float,
        "permeability": _permeability, "gamma": _float, "epsilon": _float,
        "alpha_bjsj": _float, "mobility": _mobility, "beta": _float, "buoyancy": _float,
        "trace_convention": _choice("matrix", "scalar"),
    },
    "initial": {
        "phi": str, "phi_mean": _float, "phi_noise": _float, "center": _floats(2),
        "radius": _float, "u": str,
    },
    "solver": {"newton_rtol": _float, "linear_tol": _float},
}

_RENAME = {("initial", "phi"): "phi0", ("initial", "u"): "u0"}
_POSITIVE = {"n", "tau", "t_final", "rho0", "chi", "epsilon", "gamma", "radius",
             "newton_rtol", "linear_tol"}


def _read_entries(text: str):
    section = None
    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno)
            section = line[1:-1].strip().lower()
            if section not in _SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        if section is None:
            raise ConfigError("key outside of any [section]", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lower()
        if key not in _SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno)
        if not value:
            raise ConfigError(f"missing value for {key!r}", lineno)
        entries.append((section, key, value, lineno))
    return entries


def parse_config(text: str) -> RunConfig:
    """Parse and validate a run configuration.

    Without ``preset`` in ``[run]``, the keys ``n``, ``tau`` and ``t_final``
    are required.
    """
    entries = _read_entries(text)
    seen: Dict[Tuple[str, str], int] = {}
    values: Dict[Tuple[str, str], Tuple[Any, int]] = {}
    for section, key, raw, lineno in entries:
        if (section, key) in seen:
            raise ConfigError(f"duplicate key {key!r} (first set on line {seen[section, key]})", lineno)
        seen[section, key] = lineno
        try:
            val = _SCHEMA[section][key](raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid value for {key!r}: {raw!r} ({exc})", lineno) from None
        if key in _POSITIVE and not val > 0:
            raise ConfigError(f"{key} must be positive, got {raw}", lineno)
        values[section, key] = (val, lineno)

    if ("run", "preset") in values:
        name, lineno = values.pop(("run", "preset"))
        try:
            base = preset(name)
        except ConfigError as exc:
            raise ConfigError(str(exc), lineno) from None
    else:
        missing = [k for k in ("n", "tau", "t_final") if ("run", k) not in values]
        if missing:
            raise ConfigError(f"missing required key(s) in [run]: {', '.join(missing)}")
        base = RunConfig()

    run_changes, phys_changes = {}, {}
    lines = {}
    for (section, key), (val, lineno) in values.items():
        attr = _RENAME.get((section, key), key)
        lines[attr] = lineno
        (phys_changes if section == "physics" else run_changes)[attr] = val

    for attr in ("phi0", "u0"):
        if attr in run_changes:
            _check_initial(attr, run_changes[attr], lines[attr])
    try:
        params = base.params.with_(**phys_changes)
    except ValueError as exc:
        raise ConfigError(str(exc), _first_line(lines, phys_changes)) from None
    try:
        return base.with_(params=params, **run_changes)
    except ValueError as exc:
        bad = next((k for k in run_changes if k in str(exc)), None)
        raise ConfigError(str(exc).split(": ", 1)[-1], lines.get(bad)) from None


def _first_line(lines, keys):
    found = [lines[k] for k in keys if k in lines]
    return min(found) if found else None


def _check_initial(attr: str, spec: str, lineno: int):
    presets = PHI_PRESETS if attr == "phi0" else U_PRESETS
    if spec in presets:
        return
    try:
        compile(spec, "<initial>", "eval")
    except SyntaxError as exc:
        raise ConfigError(f"initial condition {spec!r} is neither a preset nor an expression ({exc.msg})",
                          lineno) from None


_EXPR_NAMES = {
    name: getattr(np, name)
    for name in ("sin", "cos", "tan", "exp", "log", "sqrt", "tanh", "abs", "where", "minimum", "maximum")
}
_EXPR_NAMES["pi"] = np.pi


def evaluate_expression(expr: str, x: np.ndarray, y: np.ndarray):
    """Evaluate a user expression in ``x`` and ``y`` with a small numpy vocabulary."""
    try:
        return eval(compile(expr, "<initial>", "eval"), {"__builtins__": {}}, {**_EXPR_NAMES, "x": x, "y": y})
    except Exception as exc:
        raise ConfigError(f"cannot evaluate initial condition {expr!r}: {exc}") from None


def load_config(path_or_preset: str) -> RunConfig:
    """Read a config file, or return a built-in preset by name."""
    from pathlib import Path

    p = Path(path_or_preset)
    if p.is_file():
        return parse_config(p.read_text(encoding="utf-8"))
    if path_or_preset in PRESETS:
        return preset(path_or_preset)
    raise ConfigError(f"no config file or preset named {path_or_preset!r}")
