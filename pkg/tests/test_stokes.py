import logging
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nspicard.reference import GaussianForceParams, gaussian_force_sampler, u11_closed_form
from nspicard.spectral import (
    Grid,
    ScalarField,
    SpectralVectorField,
    VectorField,
    forward_array,
    forward_scalar,
    forward_transform,
    inverse_real,
    spectral_gradient,
    wavenumbers,
)
from nspicard.stokes import (
    RELAXED_MATRIX,
    StokesConfig,
    Trajectory,
    duhamel_integrate,
    etd_weights,
    heat_propagate,
    merge_times,
    pressure_from_force,
    relative_divergence,
    solve_stokes,
)

from conftest import smooth_random_field

TWO_PI = 2 * math.pi


def single_mode_spectrum(grid, mode, vec):
    spec = np.zeros((3,) + grid.shape, complex)
    idx = tuple(k % grid.n_per_axis for k in mode)
    partner = tuple((-k) % grid.n_per_axis for k in mode)
    for c in range(3):
        spec[(c,) + idx] += vec[c]
        spec[(c,) + partner] += np.conj(vec[c])
    return spec, idx


def constant_sampler(field):
    return lambda tau: field


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(viscosity=0.0), dict(t_end=-1.0), dict(substeps=0),
                                    dict(projection="other")])
    def test_invalid(self, kw):
        args = dict(viscosity=1.0, t_end=1.0, substeps=4)
        args.update(kw)
        with pytest.raises(ValueError):
            StokesConfig(**args)

    def test_time_grid_merges_snapshots(self):
        cfg = StokesConfig(1.0, 1.0, 4, snapshot_times=(0.1, 0.5))
        assert np.allclose(cfg.time_grid(), [0, 0.1, 0.25, 0.5, 0.75, 1.0])

    def test_merge_collapses_round_off(self):
        assert merge_times([0, 0.3], [0.1 + 0.2]).size == 2


class TestTrajectory:
    def test_validation(self, grid16):
        v = np.zeros((2, 3) + grid16.shape)
        with pytest.raises(ValueError):
            Trajectory(grid16, [0.1, 0.2], v)
        with pytest.raises(ValueError):
            Trajectory(grid16, [0.0, 0.0], v)
        with pytest.raises(ValueError):
            Trajectory(grid16, [0.0, 0.1, 0.2], v)


class TestHeatPropagate:
    def test_zero_time_identity(self, grid16, rng):
        spec = forward_transform(VectorField(grid16, rng.standard_normal((3,) + grid16.shape)))
        assert np.array_equal(heat_propagate(spec, 1.0, 0.0).data, spec.data)

    def test_single_mode_factor(self):
        g = Grid(16, TWO_PI)
        spec, idx = single_mode_spectrum(g, (2, 0, 0), (0, 1.0, 0))
        out = heat_propagate(SpectralVectorField(g, spec), 0.25, 1.0).data
        assert out[(1,) + idx].real == pytest.approx(0.3678794, abs=1e-7)
        assert out[(1,) + idx].real == pytest.approx(math.exp(-1), rel=1e-15)

    def test_zero_mode_unchanged(self, grid16):
        spec = forward_transform(VectorField(grid16, np.ones((3,) + grid16.shape)))
        assert np.array_equal(heat_propagate(spec, 3.0, 2.0).data, spec.data)

    @given(st.floats(0, 1), st.floats(0, 1))
    def test_semigroup(self, t1, t2):
        g = Grid(8, TWO_PI)
        spec = SpectralVectorField(g, forward_array(g, np.random.default_rng(0).standard_normal((3,) + g.shape)))
        a = heat_propagate(heat_propagate(spec, 0.7, t1), 0.7, t2).data
        b = heat_propagate(spec, 0.7, t1 + t2).data
        assert np.abs(a - b).max() <= 1e-13 * np.abs(spec.data).max()

    def test_negative_time_rejected(self, grid16):
        spec = SpectralVectorField(grid16, np.zeros((3,) + grid16.shape, complex))
        with pytest.raises(ValueError):
            heat_propagate(spec, 1.0, -0.1)


class TestEtdWeights:
    def test_trapezoid_at_zero_rate(self):
        decay, wa, wb = etd_weights(np.array([0.0]), 0.2)
        assert decay[0] == 1.0 and wa[0] == pytest.approx(0.1, rel=1e-15) and wb[0] == pytest.approx(0.1, rel=1e-15)

    def test_exact_for_linear_force(self):
        # int_0^h e^{-lam (h - s)} (a + b s) ds in closed form
        lam = np.array([1e-6, 0.05, 0.0999, 0.1001, 1.0, 37.0])
        h, a, b = 0.3, 1.7, -2.2
        decay, wa, wb = etd_weights(lam, h)
        got = wa * a + wb * (a + b * h)
        e1 = -np.expm1(-lam * h)
        # substitute r = h - s
        exact = (a + b * h) * e1 / lam - b * (e1 / lam**2 - h * np.exp(-lam * h) / lam)
        # cancellation in the oracle itself at tiny lam
        exact[0] = a * h + b * h * h / 2 - lam[0] * (a * h * h / 2 + b * h**3 / 6)
        assert np.allclose(got, exact, rtol=1e-13, atol=0)


class TestDuhamel:
    def test_constant_force_factor(self):
        g = Grid(16, TWO_PI)  # mode (1,0,0) has |gamma|^2 = 1
        spec, idx = single_mode_spectrum(g, (1, 0, 0), (0, 1.0, 0))
        f = SpectralVectorField(g, spec)
        samples = [(tau, f) for tau in np.linspace(0, 1, 5)]
        out = duhamel_integrate(samples, 1.0, 1.0).data
        assert out[(1,) + idx].real == pytest.approx(1 - math.exp(-1), rel=1e-14)
        assert 1 - math.exp(-1) == pytest.approx(0.6321206, abs=1e-7)

    def test_zero_force(self, grid16):
        z = SpectralVectorField(grid16, np.zeros((3,) + grid16.shape, complex))
        out = duhamel_integrate([(0.0, z), (1.0, z)], 1.0, 1.0)
        assert not np.any(out.data)

    def test_zero_mode_trapezoid(self, grid16):
        # mean force linear in tau integrates exactly
        def mean_force(tau):
            return forward_transform(VectorField(grid16, np.full((3,) + grid16.shape, 1.0 + 2.0 * tau)))

        out = duhamel_integrate([(t, mean_force(t)) for t in (0.0, 0.5, 1.0)], 1.0, 1.0)
        expected = forward_transform(VectorField(grid16, np.full((3,) + grid16.shape, 2.0))).data
        assert np.allclose(out.data, expected, rtol=1e-14, atol=1e-14)

    def test_coverage_gap_rejected(self, grid16):
        z = SpectralVectorField(grid16, np.zeros((3,) + grid16.shape, complex))
        with pytest.raises(ValueError):
            duhamel_integrate([(0.0, z), (0.5, z)], 1.0, 1.0)
        with pytest.raises(ValueError):
            duhamel_integrate([(0.1, z), (1.0, z)], 1.0, 1.0)

    def test_clips_by_interpolation(self):
        g = Grid(16, TWO_PI)
        spec, idx = single_mode_spectrum(g, (1, 0, 0), (0, 1.0, 0))
        f = SpectralVectorField(g, spec)
        out = duhamel_integrate([(0.0, f), (2.0, f)], 1.0, 1.0).data
        assert out[(1,) + idx].real == pytest.approx(1 - math.exp(-1), rel=1e-14)

    def test_gaussian_forcing_matches_closed_form(self):
        # heat-kernel integral of the unprojected force is u11 in component 1
        p = GaussianForceParams(1.0, 1.0, 1.0)
        g = Grid(32, 10.0)
        sampler = gaussian_force_sampler(g, 1.0, p)
        taus = np.linspace(0.0, 1.0, 1025)
        samples = [(t, forward_transform(sampler(t))) for t in taus]
        u = inverse_real(g, duhamel_integrate(samples, p.nu, 1.0).data)[0]
        x = np.stack(g.coordinates(), axis=-1)
        exact = u11_closed_form(x, 1.0, p)
        inner = g.radius_squared() < (g.box_length / 4) ** 2
        rel = np.abs(u[inner] - exact[inner]) / np.abs(exact).max()
        assert rel.max() < 1e-6


class TestPressure:
    def test_single_mode_value(self):
        g = Grid(16, TWO_PI)
        spec = np.zeros((3,) + g.shape, complex)
        spec[0, 2, 0, 0] = 1.0
        P = pressure_from_force(SpectralVectorField(g, spec)).data
        assert P[2, 0, 0] == pytest.approx(0.5j, abs=1e-15)

    def test_solenoidal_force_no_pressure(self, grid16):
        _, x2, _ = grid16.coordinates()
        data = np.zeros((3,) + grid16.shape)
        data[0] = np.sin(x2)
        P = pressure_from_force(forward_transform(VectorField(grid16, data))).data
        assert np.abs(P).max() < 1e-14

    def test_gradient_field_recovered(self):
        g = Grid(64, 12.0)
        phi = np.exp(-g.radius_squared())
        phi_hat = forward_scalar(ScalarField(g, phi))
        f_hat = np.stack([spectral_gradient(phi_hat, a).data for a in (1, 2, 3)])
        p_hat = pressure_from_force(SpectralVectorField(g, f_hat))
        grad_p = np.stack([spectral_gradient(p_hat, a).data for a in (1, 2, 3)])
        assert np.abs(grad_p - f_hat).max() <= 1e-10 * np.abs(f_hat).max()


class TestSolveStokes:
    def test_pure_decay_per_mode(self, grid16, rng):
        u0_hat = forward_array(grid16, smooth_random_field(grid16, rng))
        from nspicard.spectral import leray_project_array

        u0 = VectorField(grid16, inverse_real(grid16, leray_project_array(grid16, u0_hat)))
        traj = solve_stokes(u0, StokesConfig(0.5, 1.0, 7))
        lam = 0.5 * wavenumbers(grid16).gamma_sq
        start = forward_array(grid16, u0.data)
        for i, t in enumerate(traj.times):
            expected = start * np.exp(-lam * t)
            got = traj.spectral[i]
            assert np.abs(got - expected).max() <= 1e-12 * np.abs(start).max()

    def test_first_snapshot_is_initial(self, grid16):
        _, x2, _ = grid16.coordinates()
        data = np.zeros((3,) + grid16.shape)
        data[0] = np.sin(x2)
        u0 = VectorField(grid16, data)
        traj = solve_stokes(u0, StokesConfig(1.0, 0.5, 4))
        assert np.abs(traj.velocity[0] - data).max() < 1e-14

    def test_small_time_expansion(self):
        g = Grid(16, TWO_PI)
        _, x2, _ = g.coordinates()
        data = np.zeros((3,) + g.shape)
        data[0] = np.cos(3 * x2)  # |gamma|^2 = 9, transverse
        nu = 0.2
        errs = []
        for t in (1e-3, 5e-4):
            u = solve_stokes(VectorField(g, data), StokesConfig(nu, t, 1)).velocity[-1]
            errs.append(np.abs(u - (1 - nu * 9 * t) * data).max())
        # second-order remainder: halving t quarters the error
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=1e-3)
        assert errs[0] < (nu * 9 * 1e-3) ** 2

    def test_linearity(self, grid16, rng):
        fa = VectorField(grid16, smooth_random_field(grid16, rng))
        fb = VectorField(grid16, smooth_random_field(grid16, rng))
        zero = VectorField.zeros(grid16)

        def run(sampler):
            return solve_stokes(zero, StokesConfig(0.7, 0.5, 5, force_sampling=sampler)).velocity

        a, b = run(lambda t: fa * (1 + t)), run(lambda t: fb * (1 - t))
        both = run(lambda t: fa * (2 * (1 + t)) + fb * (-3 * (1 - t)))
        assert np.abs(both - (2 * a - 3 * b)).max() <= 1e-12 * np.abs(both).max()

    def test_divergence_free_snapshots(self, grid16, rng):
        f = VectorField(grid16, smooth_random_field(grid16, rng))
        traj = solve_stokes(VectorField.zeros(grid16), StokesConfig(1.0, 1.0, 4, force_sampling=constant_sampler(f)))
        for i in range(1, len(traj)):
            assert relative_divergence(grid16, traj.spectral[i]) < 1e-10

    def test_restart_consistency(self):
        p = GaussianForceParams(1.0, 1.0, 1.0)
        g = Grid(16, 10.0)
        spatial = gaussian_force_sampler(g, 1.0, p)(1.0)

        def force(t):
            return spatial * math.cos(t)

        full = solve_stokes(VectorField.zeros(g), StokesConfig(1.0, 2.0, 64, force_sampling=force))
        half = solve_stokes(VectorField.zeros(g), StokesConfig(1.0, 1.0, 32, force_sampling=force))
        rest = solve_stokes(half.final, StokesConfig(1.0, 1.0, 32, force_sampling=lambda t: force(t + 1.0)))
        assert np.array_equal(half.times[:-1] * 0, half.times[:-1] * 0)
        assert np.abs(rest.velocity[-1] - full.velocity[-1]).max() <= 1e-12 * np.abs(full.velocity[-1]).max()

    def test_mean_momentum(self, grid16):
        f = VectorField(grid16, np.stack([np.full(grid16.shape, c) for c in (1.0, -2.0, 0.5)]))
        u0 = VectorField(grid16, np.stack([np.full(grid16.shape, c) for c in (0.3, 0.0, 0.1)]))
        traj = solve_stokes(u0, StokesConfig(1.0, 2.0, 3, force_sampling=lambda t: f * (1 + t)))
        mean = traj.velocity[-1].mean(axis=(1, 2, 3))
        # mean of u0 plus the integral of (1 + t) over [0, 2]
        assert np.allclose(mean, [0.3 + 4.0, -8.0, 0.1 + 2.0], rtol=1e-13, atol=1e-13)

    def test_non_solenoidal_initial_projected(self, grid16, caplog):
        x1, _, _ = grid16.coordinates()
        data = np.zeros((3,) + grid16.shape)
        data[0] = np.sin(x1)
        with caplog.at_level(logging.WARNING, logger="nspicard.stokes"):
            traj = solve_stokes(VectorField(grid16, data), StokesConfig(1.0, 1.0, 2))
        assert "not solenoidal" in caplog.text
        assert np.abs(traj.velocity).max() < 1e-14

    def test_pressure_from_instantaneous_force(self, grid16, rng):
        base = VectorField(grid16, smooth_random_field(grid16, rng))
        sampler = lambda t: base * (1 + t * t)  # noqa: E731
        traj = solve_stokes(VectorField.zeros(grid16), StokesConfig(1.0, 1.0, 4, force_sampling=sampler))
        for i, t in enumerate(traj.times):
            p = inverse_real(grid16, pressure_from_force(forward_transform(sampler(t))).data)
            assert np.array_equal(traj.pressure[i], p)

    def test_snapshot_selection(self, grid16):
        cfg = StokesConfig(1.0, 1.0, 4, snapshot_times=(0.5, 1.0))
        traj = solve_stokes(VectorField.zeros(grid16), cfg)
        assert np.allclose(traj.times, [0.0, 0.5, 1.0])

    def test_relaxed_operator_signs(self):
        p = GaussianForceParams(1.0, 1.0, 1.0)
        g = Grid(16, 10.0)
        cfg = StokesConfig(1.0, 1.0, 8, force_sampling=gaussian_force_sampler(g, 1.0, p), projection="relaxed")
        u = solve_stokes(VectorField.zeros(g), cfg).velocity[-1]
        assert np.array_equal(u[1], -u[0]) and np.array_equal(u[2], -u[0])
        assert np.array_equal(RELAXED_MATRIX, RELAXED_MATRIX.T)

    @pytest.mark.slow
    def test_gaussian_relaxed_matches_closed_form(self):
        p = GaussianForceParams(1.0, 1.0, 1.0)
        g = Grid(64, 10.0 / p.mu)
        cfg = StokesConfig(1.0, 1.0, 256, force_sampling=gaussian_force_sampler(g, 1.0, p), projection="relaxed",
                           snapshot_times=(1.0,))
        u = solve_stokes(VectorField.zeros(g), cfg).velocity[-1][0]
        x = np.stack(g.coordinates(), axis=-1)
        exact = u11_closed_form(x, 1.0, p)
        inner = g.radius_squared() <= 2.5**2
        assert (np.abs(u - exact)[inner] / exact.max()).max() < 1e-5
