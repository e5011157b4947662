"""Gaussian-force benchmark: first iterate against its closed form, then the fixed point.

Run with ``python3 demos/gaussian_benchmark.py [n_per_axis] [substeps]``.
Defaults (32, 32) finish in well under a minute on one core.
"""

import sys
import time

import numpy as np

from nspicard import (
    GaussianForceParams,
    Grid,
    PicardConfig,
    StokesConfig,
    VectorField,
    convergence_ratio,
    gaussian_force_sampler,
    iterate_to_fixed_point,
    solve_stokes,
    u11_closed_form,
)
from nspicard.verify import nse_residual, residual_report


def main(n=32, substeps=32):
    params = GaussianForceParams(F=1.0, mu=1.0, nu=1.0)
    grid = Grid(n, 10.0 / params.mu)
    force = gaussian_force_sampler(grid, 1.0, params)
    print(f"F/(mu^4 nu) = {convergence_ratio(params):g} on a {n}^3 grid, {substeps} time steps")

    # first iterate with the fraction-to-one operator, which the closed form describes
    cfg = StokesConfig(params.nu, 1.0, substeps, force_sampling=force, projection="relaxed", snapshot_times=(1.0,))
    u = solve_stokes(VectorField.zeros(grid), cfg).velocity[-1][0]
    x1 = grid.axis_coordinates()
    mid = n // 2
    pts = np.stack([x1, np.zeros(n), np.zeros(n)], axis=-1)
    exact = u11_closed_form(pts, 1.0, params)
    print("\n  x1       numerical u1   closed form    difference")
    for i in range(mid, n, max(1, n // 16)):
        print(f"  {x1[i]:6.3f}  {u[i, mid, mid]: .6e}  {exact[i]: .6e}  {u[i, mid, mid] - exact[i]: .2e}")

    start = time.perf_counter()
    result = iterate_to_fixed_point(VectorField.zeros(grid), force, StokesConfig(params.nu, 1.0, substeps),
                                    PicardConfig(schwartz_p=None))
    state = result.state
    print(f"\nfixed point: {state.status.value} after {state.j} iterations ({time.perf_counter() - start:.1f}s)")
    for n_ in state.correction_norms:
        print(f"  l = {n_.l:2d}  sup |u_l - u_(l-1)| = {n_.sup:.3e}")
    d = result.diagnostics
    if d is not None:
        print(f"  alpha_hat = {d.alpha_hat:.4f}, max alpha = {d.alpha_max:.4f}, geometric bound holds: {d.bound_holds}")
    if result.pressure is not None:
        sol = result.solution
        rep = residual_report(sol, force, params.nu)
        print(f"  relative NSE residual {nse_residual(sol, sol.pressure, force, params.nu):.3e}, "
              f"divergence {rep.divergence_max_rel:.1e}, boundary decay {rep.boundary_decay:.1e}")


if __name__ == "__main__":
    main(*(int(a) for a in sys.argv[1:3]))
