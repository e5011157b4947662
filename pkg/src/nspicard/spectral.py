"""Fourier analysis on a periodic box standing in for R^3.

Transform convention
--------------------
Continuous pair (unitary, kernel sign ``+`` forward)::

    U(g) = (2 pi)^(-3/2) \\int u(x) exp(+i g.x) dx
    u(x) = (2 pi)^(-3/2) \\int U(g) exp(-i g.x) dg

On the grid ``x_j = -L/2 + j h`` the integrals become Riemann sums.  The
forward scale is ``h^3 / (2 pi)^(3/2)`` and the inverse scale is
``(2 pi / L)^3 / (2 pi)^(3/2)``; their product with the FFT length is exactly
one, so ``inverse(forward(u)) == u`` up to round-off.  The phase factor
``exp(-i g L/2) = (-1)^k`` from the off-centre origin is folded into both
directions, which makes the coefficients of an even, real profile real.

Under this convention a spatial derivative maps to multiplication by
``-i g``.  First-derivative multipliers drop the Nyquist wavenumber so that
derivatives of real fields stay real.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft as sp_fft

logger = logging.getLogger(__name__)

_AXES = (-3, -2, -1)
_WORKERS = 1

HERMITIAN_RTOL = 1e-12
IMAG_RESIDUE_RTOL = 1e-10
DEFAULT_P_MAX = 2


def set_fft_workers(n: int) -> None:
    """Set the thread count used by every transform in this process."""
    global _WORKERS
    if n < 1:
        raise ValueError(f"worker count must be >= 1, got {n}")
    _WORKERS = int(n)


def fft_workers() -> int:
    return _WORKERS


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid of ``n_per_axis``^3 points on a box of side ``box_length``."""

    n_per_axis: int
    box_length: float

    def __post_init__(self):
        n = self.n_per_axis
        if not isinstance(n, (int, np.integer)) or n < 4 or n & (n - 1):
            raise ValueError(f"n_per_axis must be a power of two >= 4, got {n!r}")
        if not (math.isfinite(self.box_length) and self.box_length > 0):
            raise ValueError(f"box_length must be positive, got {self.box_length!r}")
        object.__setattr__(self, "n_per_axis", int(n))
        object.__setattr__(self, "box_length", float(self.box_length))

    @property
    def spacing(self) -> float:
        # n is a power of two, so this division is exact
        return self.box_length / self.n_per_axis

    @property
    def shape(self) -> tuple[int, int, int]:
        n = self.n_per_axis
        return (n, n, n)

    @property
    def cell_volume(self) -> float:
        return self.spacing**3

    def axis_coordinates(self) -> np.ndarray:
        """Coordinates along one axis, in ``[-L/2, L/2)``."""
        return -0.5 * self.box_length + self.spacing * np.arange(self.n_per_axis)

    def coordinates(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = self.axis_coordinates()
        return tuple(np.meshgrid(x, x, x, indexing="ij"))

    def radius_squared(self) -> np.ndarray:
        x = self.axis_coordinates()
        return x[:, None, None] ** 2 + x[None, :, None] ** 2 + x[None, None, :] ** 2


@dataclass(frozen=True, eq=False)
class Wavenumbers:
    """Per-axis angular frequencies and derived mode-wise arrays for a grid.

    ``gamma[s]`` holds ``2 pi k / L`` in FFT order for integer ``k`` in
    ``[-n/2, n/2)``.  ``deriv[s]`` is the same array with the Nyquist entry set
    to zero; it is what first derivatives, divergence, projection and pressure
    use.  ``gamma_sq`` is the full ``|g|^2`` used by the heat kernel.
    """

    grid: Grid
    index: np.ndarray
    gamma: tuple[np.ndarray, np.ndarray, np.ndarray]
    deriv: tuple[np.ndarray, np.ndarray, np.ndarray]
    gamma_sq: np.ndarray
    deriv_sq: np.ndarray
    phase: np.ndarray
    dealias_mask: np.ndarray

    @property
    def spectral_cell(self) -> float:
        return (2.0 * math.pi / self.grid.box_length) ** 3


@lru_cache(maxsize=16)
def wavenumbers(grid: Grid) -> Wavenumbers:
    n = grid.n_per_axis
    k = np.fft.fftfreq(n, d=1.0 / n).astype(np.int64)
    g1 = 2.0 * math.pi * k / grid.box_length
    d1 = g1.copy()
    d1[n // 2] = 0.0
    gamma = (g1[:, None, None], g1[None, :, None], g1[None, None, :])
    deriv = (d1[:, None, None], d1[None, :, None], d1[None, None, :])
    gamma_sq = gamma[0] ** 2 + gamma[1] ** 2 + gamma[2] ** 2
    deriv_sq = deriv[0] ** 2 + deriv[1] ** 2 + deriv[2] ** 2
    sign = np.where(k % 2 == 0, 1.0, -1.0)
    phase = sign[:, None, None] * sign[None, :, None] * sign[None, None, :]
    keep = np.abs(k) <= n / 3.0
    mask = keep[:, None, None] & keep[None, :, None] & keep[None, None, :]
    for arr in (gamma_sq, deriv_sq, phase, mask):
        arr.flags.writeable = False
    return Wavenumbers(grid, k, gamma, deriv, gamma_sq, deriv_sq, phase, mask)


def _check_finite(data: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{what} contains non-finite values")


@dataclass(frozen=True, eq=False)
class VectorField:
    """Three real components sampled on ``grid``; ``data`` has shape ``(3, n, n, n)``."""

    grid: Grid
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.shape != (3,) + self.grid.shape:
            raise ValueError(f"expected shape {(3,) + self.grid.shape}, got {data.shape}")
        _check_finite(data, "VectorField")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        return cls(grid, np.zeros((3,) + grid.shape))

    def __add__(self, other: "VectorField") -> "VectorField":
        _same_grid(self.grid, other.grid)
        return VectorField(self.grid, self.data + other.data)

    def __sub__(self, other: "VectorField") -> "VectorField":
        _same_grid(self.grid, other.grid)
        return VectorField(self.grid, self.data - other.data)

    def __mul__(self, c: float) -> "VectorField":
        return VectorField(self.grid, self.data * c)

    __rmul__ = __mul__

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.data))) if self.data.size else 0.0


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.shape != self.grid.shape:
            raise ValueError(f"expected shape {self.grid.shape}, got {data.shape}")
        _check_finite(data, "ScalarField")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)


@dataclass(frozen=True, eq=False)
class SpectralVectorField:
    """Fourier coefficients of a :class:`VectorField`, full logical spectrum."""

    grid: Grid
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.complex128)
        if data.shape != (3,) + self.grid.shape:
            raise ValueError(f"expected shape {(3,) + self.grid.shape}, got {data.shape}")
        _check_finite(data, "SpectralVectorField")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    def __add__(self, other: "SpectralVectorField") -> "SpectralVectorField":
        _same_grid(self.grid, other.grid)
        return SpectralVectorField(self.grid, self.data + other.data)

    def __sub__(self, other: "SpectralVectorField") -> "SpectralVectorField":
        _same_grid(self.grid, other.grid)
        return SpectralVectorField(self.grid, self.data - other.data)

    def __mul__(self, c) -> "SpectralVectorField":
        return SpectralVectorField(self.grid, self.data * c)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class SpectralScalarField:
    grid: Grid
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.complex128)
        if data.shape != self.grid.shape:
            raise ValueError(f"expected shape {self.grid.shape}, got {data.shape}")
        _check_finite(data, "SpectralScalarField")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)


def _same_grid(a: Grid, b: Grid) -> None:
    if a != b:
        raise ValueError(f"grid mismatch: {a} vs {b}")


# -- raw-array kernels (used by the solver loops) ---------------------------


def forward_array(grid: Grid, data: np.ndarray) -> np.ndarray:
    """Forward transform over the trailing three axes of a real array."""
    wn = wavenumbers(grid)
    n3 = grid.n_per_axis**3
    scale = grid.cell_volume * n3 / (2.0 * math.pi) ** 1.5
    out = sp_fft.ifftn(data, axes=_AXES, workers=_WORKERS)
    out *= scale * wn.phase
    return out


def inverse_array(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    """Inverse transform over the trailing three axes; returns the complex result."""
    wn = wavenumbers(grid)
    scale = wn.spectral_cell / (2.0 * math.pi) ** 1.5
    out = sp_fft.fftn(coeffs * wn.phase, axes=_AXES, workers=_WORKERS)
    out *= scale
    return out


def inverse_real(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    """Inverse transform, real part only (no residue check)."""
    return inverse_array(grid, coeffs).real


# -- public operations -------------------------------------------------------


def forward_transform(field: VectorField) -> SpectralVectorField:
    return SpectralVectorField(field.grid, forward_array(field.grid, field.data))


def forward_scalar(field: ScalarField) -> SpectralScalarField:
    return SpectralScalarField(field.grid, forward_array(field.grid, field.data))


def _real_part_checked(values: np.ndarray) -> np.ndarray:
    scale = float(np.max(np.abs(values.real))) if values.size else 0.0
    residue = float(np.max(np.abs(values.imag))) if values.size else 0.0
    if residue > IMAG_RESIDUE_RTOL * max(scale, np.finfo(float).tiny):
        raise ValueError(
            f"spectrum is not Hermitian: imaginary residue {residue:.3e} "
            f"relative to {scale:.3e}"
        )
    return values.real


def inverse_transform(spec: SpectralVectorField) -> VectorField:
    values = inverse_array(spec.grid, spec.data)
    return VectorField(spec.grid, _real_part_checked(values))


def inverse_scalar(spec: SpectralScalarField) -> ScalarField:
    values = inverse_array(spec.grid, spec.data)
    return ScalarField(spec.grid, _real_part_checked(values))


def conjugate_partner(coeffs: np.ndarray) -> np.ndarray:
    """Coefficient array re-indexed so entry ``k`` holds the value at ``-k``."""
    out = coeffs
    for ax in _AXES:
        out = np.roll(np.flip(out, axis=ax), 1, axis=ax)
    return out


def hermitian_defect(spec: SpectralVectorField | SpectralScalarField) -> float:
    """Relative deviation from ``U(-g) = conj(U(g))``."""
    a = spec.data
    b = np.conj(conjugate_partner(a))
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(a - b))) / scale


def leray_project_array(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    wn = wavenumbers(grid)
    k = wn.deriv
    ksq = wn.deriv_sq
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(ksq > 0, 1.0 / ksq, 0.0)
    kdotu = k[0] * coeffs[0] + k[1] * coeffs[1] + k[2] * coeffs[2]
    kdotu *= inv
    out = np.empty_like(coeffs)
    for s in range(3):
        out[s] = coeffs[s] - k[s] * kdotu
    return out


def leray_project(force_spec: SpectralVectorField) -> SpectralVectorField:
    """Mode-wise ``P(g) = I - g g^T / |g|^2``; identity at the zero mode."""
    return SpectralVectorField(force_spec.grid, leray_project_array(force_spec.grid, force_spec.data))


def projection_tensor(grid: Grid, mode: tuple[int, int, int]) -> np.ndarray:
    """The 3x3 projection matrix at integer mode ``mode`` (for inspection and tests)."""
    L = grid.box_length
    g = np.array([2.0 * math.pi * m / L for m in mode])
    n = grid.n_per_axis
    g[np.array(mode) == -n // 2] = 0.0
    gsq = float(g @ g)
    if gsq == 0.0:
        return np.eye(3)
    return np.eye(3) - np.outer(g, g) / gsq


def spectral_gradient(spec: SpectralScalarField, axis: int) -> SpectralScalarField:
    """Derivative along ``axis`` (1, 2 or 3) as multiplication by ``-i g_axis``."""
    if axis not in (1, 2, 3):
        raise ValueError(f"axis must be 1, 2 or 3, got {axis!r}")
    k = wavenumbers(spec.grid).deriv[axis - 1]
    return SpectralScalarField(spec.grid, -1j * k * spec.data)


def spectral_divergence(spec: SpectralVectorField) -> SpectralScalarField:
    k = wavenumbers(spec.grid).deriv
    d = -1j * (k[0] * spec.data[0] + k[1] * spec.data[1] + k[2] * spec.data[2])
    return SpectralScalarField(spec.grid, d)


def dealias_array(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    return coeffs * wavenumbers(grid).dealias_mask


def dealias_two_thirds(spec: SpectralVectorField) -> SpectralVectorField:
    """Zero every mode with some integer index ``|k_s| > n/3``."""
    return SpectralVectorField(spec.grid, dealias_array(spec.grid, spec.data))


def spectral_energy(spec: SpectralVectorField) -> float:
    """Parseval counterpart of ``sum |u|^2 h^3``."""
    return float(np.sum(np.abs(spec.data) ** 2)) * wavenumbers(spec.grid).spectral_cell


def _multi_indices(p: int):
    for q in itertools.product(range(p + 1), repeat=3):
        if sum(q) <= p:
            yield q


def _monomial_weight(grid: Grid, p: int) -> np.ndarray:
    """Pointwise ``max_{|k| <= p} |x^k|``."""
    x = np.abs(grid.axis_coordinates())
    ax = (x[:, None, None], x[None, :, None], x[None, None, :])
    w = np.zeros(grid.shape)
    for k in _multi_indices(p):
        w = np.maximum(w, ax[0] ** k[0] * ax[1] ** k[1] * ax[2] ** k[2])
    return w


def schwartz_norm_array(grid: Grid, data: np.ndarray, p: int) -> float:
    """Discrete countable norm of a real ``(3, n, n, n)`` array, see :func:`schwartz_norm`."""
    if p == 0:
        return float(sum(np.max(np.abs(c)) for c in data))
    wn = wavenumbers(grid)
    weight = _monomial_weight(grid, p)
    coeffs = forward_array(grid, data)
    total = 0.0
    for comp, values in zip(coeffs, data):
        best = np.abs(values)
        for q in _multi_indices(p):
            if not sum(q):
                continue
            mult = 1.0
            for s in range(3):
                if q[s]:
                    mult = mult * (-1j * wn.deriv[s]) ** q[s]
            np.maximum(best, np.abs(inverse_real(grid, comp * mult)), out=best)
        total += float(np.max(weight * best))
    return total


def schwartz_norm(field: VectorField, p: int, p_max: int = DEFAULT_P_MAX) -> float:
    """Grid version of ``sum_i sup_x max_{|k|,|q| <= p} |x^k D^q phi_i|``.

    Monomials use the centred coordinates in ``[-L/2, L/2)``; derivatives are
    spectral.  The supremum over both multi-indices collapses to a pointwise
    weight ``max_k |x^k|`` times ``max_q |D^q phi|``.
    """
    if p < 0:
        raise ValueError("p must be non-negative")
    if p > p_max:
        raise ValueError(f"p={p} exceeds p_max={p_max}")
    return schwartz_norm_array(field.grid, field.data, p)
