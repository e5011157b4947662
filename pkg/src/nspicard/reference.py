"""Closed-form Gaussian-forcing solutions and the special functions behind them.

The forcing is ``f = (F g(tau) exp(-mu^2 |x|^2), 0, 0)`` with time profile
``g(tau; t) = [4 mu^2 nu (t - tau) + 1]^(-1/2)``.  The profile depends on the
evaluation time ``t``, so it is an estimation device rather than a causal
forcing: a solve to ``t_end`` uses ``t = t_end`` throughout.

With every projection fraction replaced by 1, the heat-kernel solution of the
first iterate has the closed form

    u11(r, t) = F / (4 mu^4 nu r^2) [exp(-mu^2 r^2 / (4 mu^2 nu t + 1)) - exp(-mu^2 r^2)]

and the remaining components follow ``u12 = u13 = -u11``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .spectral import Grid, VectorField

# |z| below which Phi(1, 2; z) switches to its Taylor series
PHI12_SERIES_CUTOFF = 1e-4
# Phi(2, 3; z) loses ~eps/|z| relative accuracy in closed form; series below 1
PHI23_SERIES_CUTOFF = 1.0

_GAMMA_EPS = 1e-16
_GAMMA_MAX_TERMS = 10_000


@dataclass(frozen=True)
class GaussianForceParams:
    """Amplitude ``F``, inverse width ``mu`` and viscosity ``nu``.

    ``F = 0`` is accepted so that zero-force sweeps remain expressible.
    """

    F: float
    mu: float
    nu: float

    def __post_init__(self):
        if not (math.isfinite(self.F) and self.F >= 0):
            raise ValueError(f"F must be >= 0, got {self.F!r}")
        if not (math.isfinite(self.mu) and self.mu > 0):
            raise ValueError(f"mu must be > 0, got {self.mu!r}")
        if not (math.isfinite(self.nu) and self.nu > 0):
            raise ValueError(f"nu must be > 0, got {self.nu!r}")
        for name in ("F", "mu", "nu"):
            object.__setattr__(self, name, float(getattr(self, name)))


def convergence_ratio(params: GaussianForceParams) -> float:
    """``F / (mu^4 nu)``; the iteration is estimated to converge when this is below 1."""
    return params.F / (params.mu**4 * params.nu)


def inside_estimated_region(params: GaussianForceParams) -> bool:
    return convergence_ratio(params) < 1.0


def time_profile(tau, t_eval: float, params: GaussianForceParams):
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0) or np.any(tau > t_eval):
        raise ValueError(f"tau must lie in [0, {t_eval}]")
    out = (4.0 * params.mu**2 * params.nu * (t_eval - tau) + 1.0) ** -0.5
    return float(out) if out.ndim == 0 else out


def gaussian_force_profile(x, tau: float, t_eval: float, params: GaussianForceParams) -> np.ndarray:
    """Force vector ``(f11, 0, 0)`` at point(s) ``x`` (last axis of length 3)."""
    x = np.asarray(x, dtype=float)
    g = time_profile(tau, t_eval, params)
    r2 = np.sum(x * x, axis=-1)
    out = np.zeros(x.shape)
    out[..., 0] = params.F * g * np.exp(-params.mu**2 * r2)
    return out



def gaussian_force_field(grid: Grid, tau: float, t_eval: float, params: GaussianForceParams) -> VectorField:
    """The forcing sampled on ``grid`` at time ``tau``."""
    data = np.zeros((3,) + grid.shape)
    g = time_profile(tau, t_eval, params)
    data[0] = params.F * g * np.exp(-params.mu**2 * grid.radius_squared())
    return VectorField(grid, data)


def gaussian_force_sampler(grid: Grid, t_eval: float, params: GaussianForceParams):
    """``tau -> gaussian_force_field(grid, tau, t_eval, params)``; safe to call concurrently."""
    spatial = params.F * np.exp(-params.mu**2 * grid.radius_squared())

    def sample(tau: float) -> VectorField:
        data = np.zeros((3,) + grid.shape)
        data[0] = time_profile(tau, t_eval, params) * spatial
        return VectorField(grid, data)

    return sample


# -- special functions -----------------------------------------------------------


def _gamma_series(a: float, x: float) -> float:
    # gamma(a, x) = x^a e^-x sum_n x^n / (a (a+1) ... (a+n))
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_GAMMA_MAX_TERMS):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _GAMMA_EPS:
            return total * math.exp(-x + a * math.log(x))
    raise ArithmeticError(f"incomplete gamma series did not converge for a={a}, x={x}")


def _gamma_upper_cf(a: float, x: float) -> float:
    """Regularised upper function ``Q(a, x)`` by modified Lentz continued fraction."""
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _GAMMA_MAX_TERMS):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _GAMMA_EPS:
            return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h
    raise ArithmeticError(f"incomplete gamma continued fraction did not converge for a={a}, x={x}")


def incomplete_gamma_lower(a: float, x: float) -> float:
    """Lower incomplete gamma ``gamma(a, x) = int_0^x s^(a-1) e^-s ds`` (not regularised)."""
    a = float(a)
    x = float(x)
    if not (math.isfinite(a) and a > 0):
        raise ValueError(f"a must be > 0, got {a}")
    if not (math.isfinite(x) and x >= 0):
        raise ValueError(f"x must be >= 0, got {x}")
    if x == 0.0:
        return 0.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return math.gamma(a) * (1.0 - _gamma_upper_cf(a, x))


def _phi_series(a: int, c: int, z, terms: int = 40):
    z = np.asarray(z, dtype=float)
    term = np.ones_like(z)
    total = np.ones_like(z)
    for k in range(terms):
        term = term * (a + k) / (c + k) * z / (k + 1)
        total = total + term
    return total


def kummer_phi(a: int, c: int, z):
    """Confluent hypergeometric ``Phi(a, c; z)`` for ``(a, c)`` in ``{(1, 2), (2, 3)}``."""
    if (a, c) not in ((1, 2), (2, 3)):
        raise ValueError(f"unsupported (a, c) = ({a}, {c}); only (1, 2) and (2, 3) are implemented")
    z = np.asarray(z, dtype=float)
    scalar = z.ndim == 0
    z = np.atleast_1d(z)
    out = np.empty_like(z)
    if (a, c) == (1, 2):
        small = np.abs(z) < PHI12_SERIES_CUTOFF
        zz = z[~small]
        out[~small] = np.expm1(zz) / zz
        out[small] = _phi_series(1, 2, z[small], terms=8)
    else:
        small = np.abs(z) < PHI23_SERIES_CUTOFF
        zz = z[~small]
        # e^z (z - 1) + 1 written to keep the leading cancellation in expm1
        out[~small] = 2.0 * (zz * np.exp(zz) - np.expm1(zz)) / zz**2
        out[small] = _phi_series(2, 3, z[small], terms=30)
    return float(out[0]) if scalar else out


# -- closed forms ----------------------------------------------------------------


def _shrink(t, params: GaussianForceParams):
    """``y0 = 1 / (4 mu^2 nu t + 1)``."""
    return 1.0 / (4.0 * params.mu**2 * params.nu * np.asarray(t, dtype=float) + 1.0)


def _r2(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.sum(x * x, axis=-1)


def u11_from_r2(r2, t, params: GaussianForceParams):
    """Exponential-difference form evaluated from ``r^2``; exact limit at ``r = 0``."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("t must be >= 0")
    F, mu, nu = params.F, params.mu, params.nu
    r2 = np.asarray(r2, dtype=float)
    t = np.asarray(t, dtype=float)
    y0 = _shrink(t, params)
    z = mu**2 * r2
    # e^{-z y0} - e^{-z} = e^{-z y0} (1 - e^{-z (1 - y0)})
    diff = -np.exp(-z * y0) * np.expm1(-z * (1.0 - y0))
    with np.errstate(divide="ignore", invalid="ignore"):
        val = F / (4.0 * mu**4 * nu * r2) * diff
    limit = F * t / (4.0 * mu**2 * nu * t + 1.0)
    out = np.where(r2 == 0.0, limit, val)
    return float(out) if out.ndim == 0 else out


def u11_closed_form(x, t, params: GaussianForceParams):
    """First-iterate velocity component ``u11`` at point(s) ``x`` and time ``t``."""
    return u11_from_r2(_r2(x), t, params)


def u11_phi_form(x, t, params: GaussianForceParams):
    """Same quantity through ``Phi(1, 2; .)``."""
    F, mu, nu = params.F, params.mu, params.nu
    z = mu**2 * _r2(x)
    y0 = _shrink(t, params)
    out = F / (4.0 * mu**2 * nu) * (kummer_phi(1, 2, -z) - y0 * kummer_phi(1, 2, -z * y0))
    return out


def u11_gamma_form(x, t, params: GaussianForceParams) -> float:
    """Same quantity through the lower incomplete gamma function (scalar, ``r > 0``)."""
    F, mu, nu = params.F, params.mu, params.nu
    r2 = float(_r2(x))
    z = mu**2 * r2
    y0 = float(_shrink(t, params))
    return F / (4.0 * mu**4 * nu * r2) * (incomplete_gamma_lower(1.0, z) - incomplete_gamma_lower(1.0, z * y0))


def grad_u11_closed_form(x, t, params: GaussianForceParams, axis: int):
    """Signed derivative ``d u11 / d x_axis`` (axis 1, 2 or 3).

    The published expression is the magnitude for ``x_axis > 0``; it equals
    ``-d u11/d x_axis``, so the sign is restored here.  Evaluated through
    ``Phi(2, 3; .)`` to stay accurate at small radius.
    """
    if axis not in (1, 2, 3):
        raise ValueError("axis must be 1, 2 or 3")
    F, mu, nu = params.F, params.mu, params.nu
    x = np.asarray(x, dtype=float)
    z = mu**2 * _r2(x)
    y0 = _shrink(t, params)
    xn = x[..., axis - 1]
    mag = F * xn / (4.0 * nu) * (kummer_phi(2, 3, -z) - y0**2 * kummer_phi(2, 3, -z * y0))
    return -mag


def u11_envelope(x, t, params: GaussianForceParams):
    """Relaxed envelope ``F/(4 mu^2 nu) exp(-mu^2 r^2 y0)``, valid for ``|x|^2 > 1``."""
    F, mu, nu = params.F, params.mu, params.nu
    return F / (4.0 * mu**2 * nu) * np.exp(-mu**2 * _r2(x) * _shrink(t, params))


def u2_star_bracket(t, params: GaussianForceParams):
    """``1 - pi/4 - s + arctan(s)`` with ``s = (8 mu^2 nu t + 1)^(-1/2)``."""
    s = (8.0 * params.mu**2 * params.nu * np.asarray(t, dtype=float) + 1.0) ** -0.5
    return 1.0 - math.pi / 4.0 - s + np.arctan(s)


def u2_star_estimate(x, t, params: GaussianForceParams):
    """Upper estimate of the second-step correction magnitude at ``(x, t)``."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("t must be >= 0")
    F, mu, nu = params.F, params.mu, params.nu
    pref = F**2 / (8.0 * mu**6 * nu**3)
    return pref * np.exp(-mu**2 * _r2(x) * _shrink(t, params)) * u2_star_bracket(t, params)


def u2_star_time_integral(t: float, params: GaussianForceParams) -> float:
    """``int_0^t (4 mu^2 nu tau + 1)^(1/2) / (8 mu^2 nu t - 4 mu^2 nu tau + 1)^(3/2) dtau`` by quadrature."""
    s = 4.0 * params.mu**2 * params.nu

    def integrand(tau):
        return math.sqrt(s * tau + 1.0) / (2.0 * s * t - s * tau + 1.0) ** 1.5

    val, _ = integrate.quad(integrand, 0.0, t, epsabs=1e-14, epsrel=1e-13)
    return val


class QuadratureError(RuntimeError):
    pass


def quadrature_oracle_u11(x, t: float, params: GaussianForceParams, tol: float = 1e-12) -> float:
    """Direct adaptive Gauss-Kronrod quadrature of the Duhamel time integral for ``u11``.

    Integrates ``F int_0^t g(tau) w^(3/2) exp(-mu^2 r^2 w) dtau`` with
    ``w = 1 / (4 mu^2 nu (t - tau) + 1)``.
    """
    if tol < 1e-12:
        raise ValueError("tol must be >= 1e-12")
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return 0.0
    F, mu, nu = params.F, params.mu, params.nu
    r2 = float(_r2(x))
    a = 4.0 * mu**2 * nu

    def integrand(tau):
        w = 1.0 / (a * (t - tau) + 1.0)
        return math.sqrt(w) * w**1.5 * math.exp(-mu**2 * r2 * w)

    if F == 0.0:
        return 0.0
    res = integrate.quad(integrand, 0.0, t, epsabs=tol / F, epsrel=0.0, limit=200, full_output=True)
    val, err = res[0], res[1]
    if len(res) > 3 or err > tol / F:
        msg = res[3] if len(res) > 3 else ""
        raise QuadratureError(f"refinement did not reach tol {tol:.1e} (estimate {err:.3e}) {msg}")
    return F * val
