"""Linear step of the iteration: heat propagation, Duhamel integral, pressure.

For a given force ``f_j`` the velocity is

    U(t) = exp(-nu |g|^2 t) U0 + int_0^t exp(-nu |g|^2 (t - tau)) P(g) F(tau) dtau

mode by mode, where ``P`` is the divergence-free projector, and the pressure
is ``i g.F / |g|^2`` at the same instant.  The time integral is evaluated
exactly for a force that is linear in ``tau`` between consecutive samples
(second-order exponential time differencing); its error is ``O(dtau^2)``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

from .spectral import (
    Grid,
    ScalarField,
    SpectralScalarField,
    SpectralVectorField,
    VectorField,
    forward_array,
    inverse_real,
    leray_project_array,
    wavenumbers,
)

logger = logging.getLogger(__name__)

DIVERGENCE_RTOL = 1e-10
_TIME_RTOL = 1e-12
# below this |z| the phi-functions use their Taylor series
_PHI_SERIES_CUTOFF = 0.1

# relaxed operator: every projection fraction replaced by 1, signs of the
# diagonal (+) and off-diagonal (-) blocks kept
RELAXED_MATRIX = np.array([[1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]])

ForceSampler = Callable[[float], VectorField]


@dataclass(frozen=True)
class StokesConfig:
    """Settings for one linear solve.

    ``projection`` is ``"leray"`` for the true operator or ``"relaxed"`` for the
    upper-estimate operator whose fractions are all replaced by one.
    ``force_thread_safe`` declares that ``force_sampling`` may be called
    concurrently for distinct times.
    """

    viscosity: float
    t_end: float
    substeps: int
    force_sampling: Optional[ForceSampler] = None
    force_thread_safe: bool = False
    projection: str = "leray"
    snapshot_times: Optional[tuple] = None

    def __post_init__(self):
        if not self.viscosity > 0:
            raise ValueError(f"viscosity must be > 0, got {self.viscosity}")
        if not self.t_end > 0:
            raise ValueError(f"t_end must be > 0, got {self.t_end}")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ValueError(f"substeps must be a positive integer, got {self.substeps}")
        if self.projection not in ("leray", "relaxed"):
            raise ValueError(f"unknown projection {self.projection!r}")
        if self.snapshot_times is not None:
            object.__setattr__(self, "snapshot_times", tuple(float(t) for t in self.snapshot_times))

    def time_grid(self) -> np.ndarray:
        """Uniform substep nodes on ``[0, t_end]`` merged with any snapshot times."""
        nodes = np.linspace(0.0, self.t_end, int(self.substeps) + 1)
        if self.snapshot_times:
            extra = np.asarray(self.snapshot_times)
            if np.any(extra < 0) or np.any(extra > self.t_end * (1 + _TIME_RTOL)):
                raise ValueError("snapshot times must lie in [0, t_end]")
            nodes = merge_times(nodes, extra)
        return nodes


def merge_times(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Sorted union of two time arrays, collapsing entries closer than round-off."""
    allt = np.sort(np.concatenate([np.asarray(a, float), np.asarray(b, float)]))
    scale = max(float(allt[-1]), 1.0)
    keep = np.concatenate([[True], np.diff(allt) > _TIME_RTOL * scale])
    return allt[keep]


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Velocity (and optionally pressure) snapshots at increasing times starting at 0.

    ``velocity`` has shape ``(T, 3, n, n, n)``, ``pressure`` ``(T, n, n, n)``.
    """

    grid: Grid
    times: np.ndarray
    velocity: np.ndarray
    pressure: Optional[np.ndarray] = None

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        if times.ndim != 1 or times.size == 0:
            raise ValueError("times must be a non-empty 1-d array")
        if times[0] != 0.0:
            raise ValueError(f"first snapshot time must be 0, got {times[0]}")
        if np.any(np.diff(times) <= 0):
            raise ValueError("snapshot times must be strictly increasing")
        vel = np.asarray(self.velocity, dtype=float)
        if vel.shape != (times.size, 3) + self.grid.shape:
            raise ValueError(f"velocity shape {vel.shape} does not match times/grid")
        if not np.all(np.isfinite(vel)):
            raise ValueError("velocity contains non-finite values")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "velocity", vel)
        if self.pressure is not None:
            p = np.asarray(self.pressure, dtype=float)
            if p.shape != (times.size,) + self.grid.shape:
                raise ValueError(f"pressure shape {p.shape} does not match times/grid")
            object.__setattr__(self, "pressure", p)

    def __len__(self) -> int:
        return self.times.size

    def velocity_at(self, i: int) -> VectorField:
        return VectorField(self.grid, self.velocity[i])

    def pressure_at(self, i: int) -> ScalarField:
        if self.pressure is None:
            raise ValueError("trajectory carries no pressure")
        return ScalarField(self.grid, self.pressure[i])

    @property
    def final(self) -> VectorField:
        return self.velocity_at(-1)

    @cached_property
    def spectral(self) -> np.ndarray:
        """Fourier coefficients of every velocity snapshot, shape ``(T, 3, n, n, n)``."""
        return forward_array(self.grid, self.velocity)

    def with_pressure(self, pressure: np.ndarray) -> "Trajectory":
        return Trajectory(self.grid, self.times, self.velocity, pressure)

    def same_times(self, other: "Trajectory") -> bool:
        return (
            self.grid == other.grid
            and self.times.shape == other.times.shape
            and np.array_equal(self.times, other.times)
        )


# -- kernels ---------------------------------------------------------------------


def _phi12(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``phi1(-z) = (1 - e^-z)/z`` and ``phi2(-z) = (e^-z - 1 + z)/z^2`` for ``z >= 0``."""
    z = np.asarray(z, dtype=float)
    small = z < _PHI_SERIES_CUTOFF
    zs = np.where(small, 1.0, z)
    em1 = np.expm1(-zs)
    phi1 = np.where(small, 0.0, -em1 / zs)
    phi2 = np.where(small, 0.0, (em1 + zs) / zs**2)
    if np.any(small):
        zz = z[small]
        s1 = np.zeros_like(zz)
        s2 = np.zeros_like(zz)
        term = np.ones_like(zz)
        # phi1(-z) = sum (-z)^k/(k+1)!, phi2(-z) = sum (-z)^k/(k+2)!
        fact1, fact2 = 1.0, 2.0
        for k in range(12):
            s1 += term / fact1
            s2 += term / fact2
            term = term * -zz
            fact1 *= k + 2
            fact2 *= k + 3
        phi1[small] = s1
        phi2[small] = s2
    return phi1, phi2


def etd_weights(lam: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Decay factor and endpoint weights for one step of length ``h``.

    ``int_0^h e^{-lam (h - s)} [(1 - s/h) Fa + (s/h) Fb] ds = wa Fa + wb Fb``.
    At ``lam = 0`` this is the trapezoidal rule.
    """
    z = lam * h
    phi1, phi2 = _phi12(z)
    return np.exp(-z), h * (phi1 - phi2), h * phi2


def apply_projection(grid: Grid, coeffs: np.ndarray, projection: str) -> np.ndarray:
    if projection == "leray":
        return leray_project_array(grid, coeffs)
    if projection == "relaxed":
        return np.einsum("kl,l...->k...", RELAXED_MATRIX, coeffs)
    raise ValueError(f"unknown projection {projection!r}")


def evolve(grid: Grid, u0_hat: Optional[np.ndarray], force_hats, times: Sequence[float], nu: float,
           projection: str = "leray", record: Optional[Sequence[int]] = None,
           on_record: Optional[Callable[[int, Optional[np.ndarray]], None]] = None) -> list[np.ndarray]:
    """March the linear equation through ``times`` and return spectral snapshots.

    ``force_hats`` is iterated once in node order and yields unprojected force
    spectra (``None`` entries mean zero force), so it may be a generator.
    ``record`` selects the node indices returned; by default every node is
    returned.  ``on_record(i, force_hat)`` is called at each recorded node.
    """
    times = np.asarray(times, dtype=float)
    lam = nu * wavenumbers(grid).gamma_sq
    state = np.zeros((3,) + grid.shape, dtype=complex) if u0_hat is None else np.array(u0_hat, dtype=complex)
    wanted = set(range(times.size)) if record is None else set(int(i) % times.size for i in record)
    out: list[np.ndarray] = []
    forces = iter(force_hats)

    def projected(i):
        f = next(forces)
        if i in wanted and on_record is not None:
            on_record(i, f)
        return None if f is None else apply_projection(grid, f, projection)

    prev_f = projected(0)
    if 0 in wanted:
        out.append(state.copy())
    cache: dict[float, tuple] = {}
    for i in range(1, times.size):
        h = float(times[i] - times[i - 1])
        key = round(h, 15)
        if key not in cache:
            cache = {key: etd_weights(lam, h)}
        decay, wa, wb = cache[key]
        cur_f = projected(i)
        state *= decay
        if prev_f is not None:
            state += wa * prev_f
        if cur_f is not None:
            state += wb * cur_f
        prev_f = cur_f
        if i in wanted:
            out.append(state.copy())
    return out


# -- public operations ------------------------------------------------------------


def heat_propagate(u0_spec: SpectralVectorField, nu: float, t: float) -> SpectralVectorField:
    """Multiply every mode by ``exp(-nu |g|^2 t)``."""
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    if not nu > 0:
        raise ValueError(f"nu must be > 0, got {nu}")
    factor = np.exp(-nu * wavenumbers(u0_spec.grid).gamma_sq * t)
    return SpectralVectorField(u0_spec.grid, u0_spec.data * factor)


def duhamel_integrate(force_samples: Sequence[tuple[float, SpectralVectorField]], nu: float,
                      t: float) -> SpectralVectorField:
    """``int_0^t exp(-nu |g|^2 (t - tau)) F(tau) dtau`` for an already projected force.

    The samples must start at ``tau = 0`` and reach ``t``; the force is taken to
    be linear between consecutive samples.  Samples beyond ``t`` are clipped by
    interpolation.
    """
    if not force_samples:
        raise ValueError("no force samples")
    taus = np.array([s[0] for s in force_samples], dtype=float)
    grid = force_samples[0][1].grid
    if any(s[1].grid != grid for s in force_samples):
        raise ValueError("force samples live on different grids")
    if np.any(np.diff(taus) <= 0):
        raise ValueError("sample times must be strictly increasing")
    tol = _TIME_RTOL * max(t, 1.0)
    if abs(taus[0]) > tol or taus[-1] < t - tol:
        raise ValueError(f"samples cover [{taus[0]}, {taus[-1]}], need [0, {t}]")
    lam = nu * wavenumbers(grid).gamma_sq
    acc = np.zeros((3,) + grid.shape, dtype=complex)
    if t <= tol:
        return SpectralVectorField(grid, acc)
    for i in range(1, taus.size):
        a, b = taus[i - 1], taus[i]
        if a >= t - tol:
            break
        fa, fb = force_samples[i - 1][1].data, force_samples[i][1].data
        if b > t + tol:
            theta = (t - a) / (b - a)
            fb = (1 - theta) * fa + theta * fb
            b = t
        decay, wa, wb = etd_weights(lam, b - a)
        acc = decay * acc + wa * fa + wb * fb
    return SpectralVectorField(grid, acc)


def pressure_array(grid: Grid, force_hat: np.ndarray) -> np.ndarray:
    wn = wavenumbers(grid)
    k = wn.deriv
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(wn.deriv_sq > 0, 1.0 / wn.deriv_sq, 0.0)
    return 1j * (k[0] * force_hat[..., 0, :, :, :] + k[1] * force_hat[..., 1, :, :, :]
                 + k[2] * force_hat[..., 2, :, :, :]) * inv


def pressure_from_force(force_spec: SpectralVectorField) -> SpectralScalarField:
    """``P = i (g . F) / |g|^2`` at nonzero modes, zero at the mean."""
    return SpectralScalarField(force_spec.grid, pressure_array(force_spec.grid, force_spec.data))


def relative_divergence(grid: Grid, coeffs: np.ndarray) -> float:
    """``max |div u| / max |grad u|`` from spectral coefficients (0 for a constant field)."""
    k = wavenumbers(grid).deriv
    div = inverse_real(grid, -1j * (k[0] * coeffs[0] + k[1] * coeffs[1] + k[2] * coeffs[2]))
    gmax = 0.0
    for s in range(3):
        for n in range(3):
            gmax = max(gmax, float(np.max(np.abs(inverse_real(grid, -1j * k[n] * coeffs[s])))))
    dmax = float(np.max(np.abs(div)))
    return 0.0 if gmax == 0.0 else dmax / gmax


def sample_forces(config: StokesConfig, times: np.ndarray) -> list[Optional[np.ndarray]]:
    """Force spectra at every node (``None`` when no sampler is configured)."""
    return list(iter_forces(config, times))


def iter_forces(config: StokesConfig, times: np.ndarray, chunk: int = 8):
    """Yield force spectra node by node, sampling at most ``chunk`` at a time."""
    if config.force_sampling is None:
        for _ in times:
            yield None
        return

    def one(tau):
        f = config.force_sampling(float(tau))
        if not isinstance(f, VectorField):
            raise TypeError("force_sampling must return a VectorField")
        return f

    if not config.force_thread_safe:
        for t in times:
            f = one(t)
            yield forward_array(f.grid, f.data)
        return
    with ThreadPoolExecutor() as pool:
        for start in range(0, len(times), chunk):
            for f in pool.map(one, times[start:start + chunk]):
                yield forward_array(f.grid, f.data)


def solve_stokes(u0: VectorField, config: StokesConfig) -> Trajectory:
    """Linear solve from ``u0`` under ``config``.

    Snapshots are returned at ``config.snapshot_times`` when given, otherwise
    at every substep node.  ``u0`` is projected first if its relative
    divergence exceeds 1e-10.
    """
    grid = u0.grid
    u0_hat = forward_array(grid, u0.data)
    if config.projection == "leray" and np.any(u0.data):
        drift = relative_divergence(grid, u0_hat)
        if drift > DIVERGENCE_RTOL:
            logger.warning("initial velocity not solenoidal (relative divergence %.3e); projecting", drift)
            u0_hat = leray_project_array(grid, u0_hat)
    times = config.time_grid()
    if config.snapshot_times:
        wanted = sorted({int(np.argmin(np.abs(times - t))) for t in config.snapshot_times} | {0})
    else:
        wanted = list(range(times.size))
    pres = []

    def keep_pressure(i, f):
        pres.append(np.zeros(grid.shape) if f is None else inverse_real(grid, pressure_array(grid, f)))

    states = evolve(grid, u0_hat, iter_forces(config, times), times, config.viscosity, config.projection,
                    record=wanted, on_record=keep_pressure)
    vel = inverse_real(grid, np.stack(states))
    return Trajectory(grid, times[wanted], vel, np.stack(pres))
