"""Model constants and phase-dependent coefficient functions."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Tuple, Union

import numpy as np


@dataclass(frozen=True)
class PhysicalParams:
    """Constants of the Cahn-Hilliard-Stokes-Darcy model.

    ``nu`` is the viscosity of the phi = +1 fluid and ``nu_minus`` that of the
    phi = -1 fluid (defaults to ``nu``); in between the viscosity is the
    linear mixture, clamped to ``nu_bounds``. ``mobility`` is either a
    number (constant mobility) or ``"degenerate"`` for
    ``epsilon * sqrt((1 - phi^2)^2 + epsilon^2)``.

    ``permeability`` is a scalar or a 2x2 SPD matrix; a scalar ``p`` means
    ``p * I``. ``trace_convention="matrix"`` takes the trace of the 2x2 matrix
    (``2p`` for a scalar); ``"scalar"`` uses ``p`` itself.
    """

    rho0: float = 1.0
    chi: float = 1.0
    nu: float = 1.0
    nu_minus: Optional[float] = None
    permeability: Union[float, Tuple[Tuple[float, float], Tuple[float, float]]] = 1.0
    gamma: float = 1.0
    epsilon: float = 1.0
    alpha_bjsj: float = 1.0
    mobility: Union[float, str] = 1.0
    beta: float = 1.0
    buoyancy: float = 0.0
    trace_convention: str = "matrix"
    nu_bounds: Tuple[float, float] = (1e-12, 1e12)
    mobility_bounds: Tuple[float, float] = (1e-12, 1e12)

    def __post_init__(self):
        for name in ("rho0", "chi", "gamma", "epsilon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.alpha_bjsj < 0:
            raise ValueError("alpha_bjsj must be nonnegative")
        if self.trace_convention not in ("matrix", "scalar"):
            raise ValueError(f"unknown trace convention {self.trace_convention!r}")
        if isinstance(self.mobility, str) and self.mobility != "degenerate":
            raise ValueError(f"unknown mobility {self.mobility!r}")
        Pi = self.Pi
        if not np.allclose(Pi, Pi.T) or np.any(np.linalg.eigvalsh(Pi) <= 0):
            raise ValueError(f"permeability must be symmetric positive definite, got {Pi.tolist()}")

    def with_(self, **changes) -> "PhysicalParams":
        return replace(self, **changes)

    @property
    def Pi(self) -> np.ndarray:
        p = np.asarray(self.permeability, dtype=float)
        return p * np.eye(2) if p.ndim == 0 else p

    @property
    def Pi_inv(self) -> np.ndarray:
        return np.linalg.inv(self.Pi)

    @property
    def trace_pi(self) -> float:
        p = np.asarray(self.permeability, dtype=float)
        if p.ndim == 0 and self.trace_convention == "scalar":
            return float(p)
        return float(np.trace(self.Pi))

    @property
    def viscosity_is_constant(self) -> bool:
        return self.nu_minus is None or self.nu_minus == self.nu

    @property
    def mobility_is_constant(self) -> bool:
        return not isinstance(self.mobility, str)

    def viscosity(self, phi) -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        if self.viscosity_is_constant:
            nu = np.full_like(phi, self.nu)
        else:
            nu = 0.5 * (1 + phi) * self.nu + 0.5 * (1 - phi) * self.nu_minus
        return np.clip(nu, *self.nu_bounds)

    def mobility_of(self, phi) -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        if self.mobility_is_constant:
            m = np.full_like(phi, float(self.mobility))
        else:
            eps = self.epsilon
            m = eps * np.sqrt((1 - phi**2) ** 2 + eps**2)
        return np.clip(m, *self.mobility_bounds)


def double_well(phi):
    """F(phi) = (phi^2 - 1)^2 / 4."""
    return 0.25 * (phi * phi - 1.0) ** 2


def split_derivative(phi_new, phi_old):
    """Convex-splitting derivative f(phi_new, phi_old) = phi_new^3 - phi_old."""
    return phi_new**3 - phi_old
