"""Fixed-point iteration for the Navier-Stokes integral equation.

Each step solves the linear problem with force ``f - (u_{j-1}.grad) u_{j-1}``::

    u_j = u_1 - S[(u_{j-1}.grad) u_{j-1}]

where ``S`` is the projected Duhamel operator of :mod:`nspicard.stokes`.
The incremental form carries the differences ``u_l* = u_{l-1} - u_l``,
obtained as ``u_l* = S f_l*`` with

    f_2* = (u_1.grad) u_1
    f_l* = -(u_{l-2}.grad) u*_{l-1} - (u*_{l-1}.grad) u_{l-2} + (u*_{l-1}.grad) u*_{l-1}

so that ``u_j = u_1 - sum_{l=2..j} u_l*``.  Nonlinear products are formed in
physical space from 2/3-truncated inputs and truncated again afterwards.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .spectral import (
    Grid,
    VectorField,
    dealias_array,
    forward_array,
    inverse_real,
    leray_project_array,
    schwartz_norm_array,
    wavenumbers,
)
from .stokes import (
    DIVERGENCE_RTOL,
    ForceSampler,
    StokesConfig,
    Trajectory,
    evolve,
    pressure_array,
    relative_divergence,
    sample_forces,
    solve_stokes,
)

logger = logging.getLogger(__name__)


class Status(str, enum.Enum):
    RUNNING = "Running"
    CONVERGED = "Converged"
    DIVERGED = "Diverged"
    MAX_ITERATIONS = "MaxIterations"


@dataclass(frozen=True)
class PicardConfig:
    """Stopping rules and bookkeeping for the iteration.

    ``snapshot_times`` overrides the substep grid of the linear solver when
    given (it must start at 0 and end at ``t_end``).  ``schwartz_p`` selects
    the order of the countable norm tracked for every correction; ``None``
    skips it.  ``keep_corrections`` retains every ``u_l*`` and ``f_l*``,
    which costs one trajectory of memory per step.
    """

    max_iterations: int = 50
    tol_abs: float = 1e-10
    divergence_ratio_window: int = 3
    snapshot_times: Optional[tuple] = None
    schwartz_p: Optional[int] = 2
    keep_corrections: bool = False

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.tol_abs < 0:
            raise ValueError("tol_abs must be >= 0")
        if self.divergence_ratio_window < 1:
            raise ValueError("divergence_ratio_window must be >= 1")
        if self.snapshot_times is not None:
            object.__setattr__(self, "snapshot_times", tuple(float(t) for t in self.snapshot_times))


@dataclass(frozen=True, eq=False)
class ForceRecord:
    """Force spectra at the nodes of a trajectory, shape ``(T, 3, n, n, n)``."""

    grid: Grid
    times: np.ndarray
    spectral: np.ndarray

    def at(self, i: int) -> VectorField:
        return VectorField(self.grid, inverse_real(self.grid, self.spectral[i]))

    def sampler(self):
        """Piecewise-linear sampler in ``tau`` built from the nodes."""
        phys = inverse_real(self.grid, self.spectral)

        def sample(tau: float) -> VectorField:
            i = int(np.searchsorted(self.times, tau, side="right")) - 1
            i = min(max(i, 0), len(self.times) - 2) if len(self.times) > 1 else 0
            if len(self.times) == 1:
                return VectorField(self.grid, phys[0])
            a, b = self.times[i], self.times[i + 1]
            theta = (tau - a) / (b - a)
            return VectorField(self.grid, (1 - theta) * phys[i] + theta * phys[i + 1])

        return sample


@dataclass(frozen=True)
class CorrectionNorms:
    """Norms of one increment ``u_l - u_{l-1}`` over the whole trajectory.

    ``l = 1`` is the first iterate itself (``u_0 = 0``).
    """

    l: int
    sup: float
    l2: float
    schwartz: Optional[float] = None
    sup_by_time: Optional[tuple] = None


@dataclass(frozen=True, eq=False)
class PicardState:
    j: int
    u_current: Optional[Trajectory]
    u1: Optional[Trajectory]
    correction_norms: tuple
    status: Status = Status.RUNNING
    last_correction: Optional[Trajectory] = None
    corrections: tuple = ()
    base_force: Optional[ForceRecord] = None
    config: PicardConfig = field(default_factory=PicardConfig)


# -- nonlinear machinery ------------------------------------------------------------


def _physical_and_gradient(grid: Grid, u_hat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Truncated field and its gradient tensor ``G[k, n] = d u_k / d x_n`` in physical space."""
    k = wavenumbers(grid).deriv
    uh = dealias_array(grid, u_hat)
    u = inverse_real(grid, uh)
    grad = np.empty((3, 3) + grid.shape)
    for n in range(3):
        grad[:, n] = inverse_real(grid, -1j * k[n] * uh)
    return u, grad


def _advect(a: np.ndarray, grad_b: np.ndarray) -> np.ndarray:
    """``(a . grad) b`` given ``a`` and the gradient tensor of ``b``."""
    return np.einsum("n...,kn...->k...", a, grad_b)


def nonlinear_hat(grid: Grid, u_hat: np.ndarray) -> np.ndarray:
    u, g = _physical_and_gradient(grid, u_hat)
    return dealias_array(grid, forward_array(grid, _advect(u, g)))


def nonlinear_term(u: VectorField) -> VectorField:
    """Dealiased ``(u . grad) u``."""
    grid = u.grid
    out = nonlinear_hat(grid, forward_array(grid, u.data))
    return VectorField(grid, inverse_real(grid, out))


def correction_hat(grid: Grid, base_hat: np.ndarray, star_hat: np.ndarray) -> np.ndarray:
    """``-(a.grad) b - (b.grad) a + (b.grad) b`` with ``a = u_{l-2}``, ``b = u*_{l-1}``."""
    a, ga = _physical_and_gradient(grid, base_hat)
    b, gb = _physical_and_gradient(grid, star_hat)
    phys = _advect(b, gb) - _advect(a, gb) - _advect(b, ga)
    return dealias_array(grid, forward_array(grid, phys))


def force_correction(u_prev2: Trajectory, u_star_prev: Optional[Trajectory]) -> ForceRecord:
    """Force increment ``f_l*`` at every node.

    With ``u_star_prev=None`` this is the first increment ``f_2* = (u_1.grad) u_1``
    and ``u_prev2`` must be ``u_1``.
    """
    grid = u_prev2.grid
    if u_star_prev is not None and not u_prev2.same_times(u_star_prev):
        raise ValueError("trajectories are not on the same snapshot grid")
    base = u_prev2.spectral
    out = np.empty_like(base)
    for i in range(len(u_prev2)):
        if u_star_prev is None:
            out[i] = nonlinear_hat(grid, base[i])
        else:
            out[i] = correction_hat(grid, base[i], u_star_prev.spectral[i])
    return ForceRecord(grid, u_prev2.times, out)


# -- linear operator on trajectories ------------------------------------------------


def apply_solution_operator(force: ForceRecord, stokes: StokesConfig) -> Trajectory:
    """``S f``: zero initial data, projected Duhamel integral at every node."""
    grid = force.grid
    states = evolve(grid, None, force.spectral, force.times, stokes.viscosity, stokes.projection)
    vel = inverse_real(grid, np.stack(states))
    return Trajectory(grid, force.times, vel)


def _nonlinear_record(u: Trajectory) -> ForceRecord:
    spec = u.spectral
    out = np.empty_like(spec)
    for i in range(len(u)):
        out[i] = nonlinear_hat(u.grid, spec[i])
    return ForceRecord(u.grid, u.times, out)


def picard_step_full(u_prev: Trajectory, u1: Trajectory, stokes: StokesConfig) -> Trajectory:
    """One direct step ``u_j = u_1 - S[(u_{j-1}.grad) u_{j-1}]``."""
    if not u_prev.same_times(u1):
        raise ValueError("trajectories are not on the same snapshot grid")
    su = apply_solution_operator(_nonlinear_record(u_prev), stokes)
    return Trajectory(u1.grid, u1.times, u1.velocity - su.velocity)


# -- norms -------------------------------------------------------------------------


def trajectory_norms(traj: Trajectory, l: int, schwartz_p: Optional[int]) -> CorrectionNorms:
    v = traj.velocity
    sup_t = np.max(np.abs(v.reshape(len(traj), -1)), axis=1)
    energy = np.sum(v.reshape(len(traj), -1) ** 2, axis=1) * traj.grid.cell_volume
    sch = None
    if schwartz_p is not None:
        sch = max(schwartz_norm_array(traj.grid, v[i], schwartz_p) for i in range(len(traj)))
    return CorrectionNorms(l, float(sup_t.max()), float(np.sqrt(energy.max())), sch,
                           tuple(float(s) for s in sup_t))


# -- iteration ---------------------------------------------------------------------


def _time_grid(stokes: StokesConfig, config: PicardConfig) -> np.ndarray:
    if config.snapshot_times is None:
        return stokes.time_grid()
    times = np.asarray(config.snapshot_times, dtype=float)
    if times[0] != 0.0 or abs(times[-1] - stokes.t_end) > 1e-12 * stokes.t_end:
        raise ValueError("snapshot_times must start at 0 and end at t_end")
    return times


def initial_state(u0: VectorField, base_force: Optional[ForceSampler], stokes: StokesConfig,
                  config: PicardConfig) -> PicardState:
    """State at ``j = 1``: the linear solution ``u_1`` and its force record."""
    times = _time_grid(stokes, config)
    lin = replace(stokes, force_sampling=base_force, snapshot_times=None, substeps=1)
    grid = u0.grid
    forces = sample_forces(lin, times)
    spec = np.stack([np.zeros((3,) + grid.shape, complex) if f is None else f for f in forces])
    record = ForceRecord(grid, times, spec)
    u1 = _solve_on_nodes(u0, record, stokes)
    norms = trajectory_norms(u1, 1, config.schwartz_p)
    status = Status.CONVERGED if norms.sup < config.tol_abs else Status.RUNNING
    if status is Status.RUNNING and config.max_iterations <= 1:
        status = Status.MAX_ITERATIONS
    return PicardState(1, u1, u1, (norms,), status, None, (), record, config)


def _solve_on_nodes(u0: VectorField, force: ForceRecord, stokes: StokesConfig) -> Trajectory:
    # same time nodes as the force record; solve_stokes would re-sample the force
    grid = u0.grid
    u0_hat = forward_array(grid, u0.data)
    if stokes.projection == "leray" and np.any(u0.data):
        drift = relative_divergence(grid, u0_hat)
        if drift > DIVERGENCE_RTOL:
            logger.warning("initial velocity not solenoidal (relative divergence %.3e); projecting", drift)
            u0_hat = leray_project_array(grid, u0_hat)
    states = evolve(grid, u0_hat, force.spectral, force.times, stokes.viscosity, stokes.projection)
    return Trajectory(grid, force.times, inverse_real(grid, np.stack(states)))


def _classify(norms: tuple, config: PicardConfig) -> Status:
    latest = norms[-1]
    if not math.isfinite(latest.sup):
        return Status.DIVERGED
    if latest.sup < config.tol_abs:
        return Status.CONVERGED
    w = config.divergence_ratio_window
    if len(norms) > w:
        sups = [n.sup for n in norms[-(w + 1):]]
        growing = all(b > a for a, b in zip(sups[:-1], sups[1:]))
        if growing and latest.sup > norms[0].sup:
            return Status.DIVERGED
    if latest.l >= config.max_iterations:
        return Status.MAX_ITERATIONS
    return Status.RUNNING


def picard_step_incremental(state: PicardState, stokes: StokesConfig) -> PicardState:
    """Advance ``j -> j + 1`` through the increment ``u_{j+1}* = S f_{j+1}*``."""
    if state.status is not Status.RUNNING:
        raise ValueError(f"cannot step a state with status {state.status.value}")
    u = state.u_current
    if state.j == 1:
        f_star = force_correction(u, None)
    else:
        # u_{j-1} = u_j + u_j*
        prev = Trajectory(u.grid, u.times, u.velocity + state.last_correction.velocity)
        f_star = force_correction(prev, state.last_correction)
    with np.errstate(over="ignore", invalid="ignore"):
        grid = u.grid
        states = evolve(grid, None, f_star.spectral, f_star.times, stokes.viscosity, stokes.projection)
        vel = inverse_real(grid, np.stack(states))
    l = state.j + 1
    if not np.all(np.isfinite(vel)):
        bad = CorrectionNorms(l, math.inf, math.inf, math.inf if state.config.schwartz_p is not None else None)
        return replace(state, j=l, correction_norms=state.correction_norms + (bad,), status=Status.DIVERGED)
    u_star = Trajectory(grid, u.times, vel)
    new_u = Trajectory(grid, u.times, u.velocity - vel)
    if not np.all(np.isfinite(new_u.velocity)):
        return replace(state, j=l, status=Status.DIVERGED)
    norms = state.correction_norms + (trajectory_norms(u_star, l, state.config.schwartz_p),)
    kept = state.corrections + ((l, u_star, f_star),) if state.config.keep_corrections else ()
    status = _classify(norms, state.config)
    logger.debug("step j=%d: |u*|_sup=%.3e status=%s", l, norms[-1].sup, status.value)
    return replace(state, j=l, u_current=new_u, correction_norms=norms, status=status,
                   last_correction=u_star, corrections=kept)


def fixed_point_pressure(state: PicardState, stokes: StokesConfig) -> np.ndarray:
    """Pressure of ``f - (u.grad) u`` at every node of the current iterate."""
    u = state.u_current
    grid = u.grid
    spec = u.spectral
    out = np.empty((len(u),) + grid.shape)
    for i in range(len(u)):
        f = state.base_force.spectral[i] - nonlinear_hat(grid, spec[i])
        out[i] = inverse_real(grid, pressure_array(grid, f))
    return out


@dataclass(frozen=True)
class ContractionDiagnostics:
    """Empirical contraction data from a recorded increment history.

    ``alpha_sup[i]`` is ``|d_{i+2}| / |d_{i+1}|`` for the increments
    ``d_1 = u_1 - u_0, d_l = u_l - u_{l-1}``; ``alpha_hat`` is the geometric
    least-squares fit.  ``bound_holds`` checks
    ``|u_n - u_final| <= alpha^n / (1 - alpha) |u_1 - u_0|`` for every recorded
    ``n`` with ``alpha = alpha_hat``, bounding the left side by the tail sum
    of increment norms.  ``bound_holds_uniform`` repeats the check with the
    largest observed ratio, the uniform contraction constant.
    """

    alpha_sup: tuple
    alpha_schwartz: Optional[tuple]
    alpha_hat: float
    alpha_max: float
    bound_lhs: tuple
    bound_rhs: tuple
    bound_holds: bool
    bound_holds_uniform: bool


def _geometric_bound(d: np.ndarray, alpha: float) -> tuple[np.ndarray, np.ndarray, bool]:
    J = d.size
    # tail[n] = sum_{l > n} d_l with d indexed from l = 1
    tail = np.array([d[n:].sum() for n in range(J)])
    if not alpha < 1:
        return tail, np.full(J, math.inf), False
    rhs = np.array([alpha**n / (1.0 - alpha) * d[0] for n in range(J)])
    slack = 1e-12 * d[0]
    return tail, rhs, bool(np.all(tail <= rhs + slack))


def contraction_diagnostics(state: PicardState) -> ContractionDiagnostics:
    norms = state.correction_norms
    if len(norms) < 3:
        raise ValueError(f"need at least 3 recorded increments, have {len(norms)}")
    d = np.array([n.sup for n in norms], dtype=float)
    positive = d > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = np.where(d[:-1] > 0, d[1:] / d[:-1], 0.0)
    sch = None
    if all(n.schwartz is not None for n in norms):
        s = np.array([n.schwartz for n in norms])
        with np.errstate(divide="ignore", invalid="ignore"):
            sch = tuple(float(v) for v in np.where(s[:-1] > 0, s[1:] / s[:-1], 0.0))
    idx = np.nonzero(positive)[0]
    if idx.size >= 2:
        slope = np.polyfit(idx.astype(float), np.log(d[idx]), 1)[0]
        alpha_hat = float(np.exp(slope))
    else:
        alpha_hat = 0.0
    alpha_max = float(alpha.max()) if alpha.size else 0.0
    lhs, rhs, ok = _geometric_bound(d, alpha_hat)
    _, _, ok_u = _geometric_bound(d, alpha_max)
    return ContractionDiagnostics(tuple(float(a) for a in alpha), sch, alpha_hat, alpha_max,
                                  tuple(float(v) for v in lhs), tuple(float(v) for v in rhs), ok, ok_u)


@dataclass(frozen=True, eq=False)
class FixedPointResult:
    state: PicardState
    diagnostics: Optional[ContractionDiagnostics]
    pressure: Optional[np.ndarray]

    @property
    def solution(self) -> Trajectory:
        u = self.state.u_current
        return u if self.pressure is None else u.with_pressure(self.pressure)


def iterate_to_fixed_point(u0: VectorField, base_force: Optional[ForceSampler], stokes: StokesConfig,
                           config: PicardConfig = PicardConfig()) -> FixedPointResult:
    """Run incremental steps until Converged, Diverged or MaxIterations."""
    state = initial_state(u0, base_force, stokes, config)
    while state.status is Status.RUNNING:
        state = picard_step_incremental(state, stokes)
    diag = contraction_diagnostics(state) if len(state.correction_norms) >= 3 else None
    pressure = None
    if state.status is Status.CONVERGED:
        pressure = fixed_point_pressure(state, stokes)
    logger.info("iteration finished: status=%s j=%d", state.status.value, state.j)
    return FixedPointResult(state, diag, pressure)
