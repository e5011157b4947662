"""Residual and conservation checks for produced solutions.

Every check is independent of how the trajectory was produced: spatial
derivatives are spectral, the time derivative is a second-order finite
difference over the snapshot times.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import trapezoid

from .spectral import Grid, VectorField, forward_array, inverse_real, wavenumbers
from .stokes import Trajectory
from .picard import nonlinear_hat

logger = logging.getLogger(__name__)


def _ratio(num: float, den: float) -> float:
    return 0.0 if den == 0.0 else num / den


def divergence_residual(u: VectorField) -> float:
    """``max |div u| / max |grad u|`` with spectral derivatives; 0 for a zero field."""
    grid = u.grid
    k = wavenumbers(grid).deriv
    uh = forward_array(grid, u.data)
    div = inverse_real(grid, -1j * (k[0] * uh[0] + k[1] * uh[1] + k[2] * uh[2]))
    gmax = 0.0
    for n in range(3):
        gmax = max(gmax, float(np.max(np.abs(inverse_real(grid, -1j * k[n] * uh)))))
    return _ratio(float(np.max(np.abs(div))), gmax)


def energy(u: VectorField) -> float:
    """``int |u|^2 dx`` as the grid sum times the cell volume."""
    return float(np.sum(u.data * u.data) * u.grid.cell_volume)


def energy_series(traj: Trajectory) -> np.ndarray:
    v = traj.velocity.reshape(len(traj), -1)
    return np.sum(v * v, axis=1) * traj.grid.cell_volume


def boundary_decay(u: VectorField) -> float:
    """Max ``|u|`` on the outermost one-cell shell over the global max."""
    mag = np.sqrt(np.sum(u.data * u.data, axis=0))
    shell = max(float(np.max(mag[[0, -1], :, :])), float(np.max(mag[:, [0, -1], :])),
                float(np.max(mag[:, :, [0, -1]])))
    return _ratio(shell, float(np.max(mag)))


def energy_bound(u0: VectorField, force_sampling: Optional[Callable[[float], VectorField]],
                 times) -> float:
    """Run-level constant ``(|u0| + int_0^T |f| dtau)^2`` bounding ``energy(u(t))``.

    The incompressible nonlinear term does no work, so ``d|u|/dt <= |f|`` in
    the L2 norm.  The force integral uses the trapezoid rule on ``times``,
    which overestimates it when ``|f(tau)|`` is convex.
    """
    e0 = np.sqrt(energy(u0))
    if force_sampling is None:
        return float(e0**2)
    norms = [np.sqrt(energy(force_sampling(float(t)))) for t in times]
    return float((e0 + trapezoid(norms, np.asarray(times, float))) ** 2)


@dataclass(frozen=True)
class NSEResidual:
    """Per-component maximum residual, absolute and relative to the largest term."""

    absolute: np.ndarray
    term_scale: np.ndarray

    @property
    def relative(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.term_scale > 0, self.absolute / self.term_scale, 0.0)

    @property
    def max_relative(self) -> float:
        return float(np.max(self.relative))


def nse_residual_components(traj: Trajectory, pressure: Optional[np.ndarray],
                            force_sampling: Optional[Callable[[float], VectorField]], nu: float,
                            nonlinear: bool = True) -> NSEResidual:
    """``du/dt + (u.grad)u - nu lap u + grad p - f`` at every snapshot.

    The nonlinear term uses the same 2/3-truncated product as the iteration,
    so the residual isolates time discretization error.  ``pressure=None``
    means zero pressure.
    """
    if len(traj) < 3:
        raise ValueError(f"need at least 3 snapshots, have {len(traj)}")
    grid = traj.grid
    wn = wavenumbers(grid)
    k = wn.deriv
    dudt = np.gradient(traj.velocity, traj.times, axis=0, edge_order=2)
    spec = traj.spectral
    absolute = np.zeros(3)
    scale = np.zeros(3)

    def track(term):
        m = np.max(np.abs(term.reshape(3, -1)), axis=1)
        np.maximum(scale, m, out=scale)

    for i, t in enumerate(traj.times):
        uh = spec[i]
        visc = inverse_real(grid, -nu * wn.gamma_sq * uh)
        res = dudt[i] - visc
        track(dudt[i])
        track(visc)
        if nonlinear:
            adv = inverse_real(grid, nonlinear_hat(grid, uh))
            res += adv
            track(adv)
        if pressure is not None:
            ph = forward_array(grid, pressure[i])
            gp = inverse_real(grid, np.stack([-1j * k[n] * ph for n in range(3)]))
            res += gp
            track(gp)
        if force_sampling is not None:
            f = force_sampling(float(t)).data
            res -= f
            track(f)
        np.maximum(absolute, np.max(np.abs(res.reshape(3, -1)), axis=1), out=absolute)
    logger.debug("NSE residual absolute=%s scale=%s", absolute, scale)
    return NSEResidual(absolute, scale)


def nse_residual(traj: Trajectory, pressure, force_sampling, nu: float, nonlinear: bool = True) -> float:
    """Largest per-component relative residual, see :func:`nse_residual_components`."""
    return nse_residual_components(traj, pressure, force_sampling, nu, nonlinear).max_relative


@dataclass(frozen=True)
class ResidualReport:
    divergence_max_rel: float
    nse_residual_max_rel: tuple
    energy: tuple
    boundary_decay: float

    def __post_init__(self):
        vals = [self.divergence_max_rel, self.boundary_decay, *self.nse_residual_max_rel, *self.energy]
        if not all(np.isfinite(v) and v >= 0 for v in vals):
            raise ValueError("report entries must be finite and nonnegative")

    def as_dict(self) -> dict:
        return {
            "divergence_max_rel": self.divergence_max_rel,
            "nse_residual_max_rel": list(self.nse_residual_max_rel),
            "energy": list(self.energy),
            "boundary_decay": self.boundary_decay,
        }


def residual_report(traj: Trajectory, force_sampling, nu: float, nonlinear: bool = True) -> ResidualReport:
    """All checks over a trajectory; the NSE entry needs at least 3 snapshots."""
    div = max(divergence_residual(traj.velocity_at(i)) for i in range(len(traj)))
    if len(traj) >= 3:
        nse = tuple(float(v) for v in
                    nse_residual_components(traj, traj.pressure, force_sampling, nu, nonlinear).relative)
    else:
        nse = (0.0, 0.0, 0.0)
    bd = max(boundary_decay(traj.velocity_at(i)) for i in range(len(traj)))
    return ResidualReport(float(div), nse, tuple(float(e) for e in energy_series(traj)), float(bd))
