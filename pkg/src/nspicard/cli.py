"""Command-line entry points: ``solve``, ``reference``, ``sweep``, ``verify``.

Every subcommand reads a JSON run configuration (``--config``), writes its
outputs below ``--out`` and returns 0 on success.  Failures print a JSON
error record on stderr, also written to ``error.json`` when the output
directory is usable, and return 2.

Environment variables ``NSPICARD_<SECTION>__<KEY>`` override configuration
entries; ``NSPICARD_THREADS`` and ``NSPICARD_LOG_LEVEL`` supply defaults for
the matching flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import spectral
from .fileio import (
    ConfigError,
    RunConfig,
    Snapshot,
    load_config,
    read_snapshot,
    read_snapshot_set,
    write_csv,
    write_json,
    write_manifest,
    write_snapshot,
    snapshot_name,
)
from .picard import PicardConfig, contraction_diagnostics, iterate_to_fixed_point, nonlinear_hat
from .reference import (
    GaussianForceParams,
    gaussian_force_sampler,
    grad_u11_closed_form,
    quadrature_oracle_u11,
    u11_closed_form,
    u2_star_estimate,
)
from .spectral import Grid, VectorField, forward_array, inverse_real
from .stokes import StokesConfig, Trajectory, pressure_array
from .sweep import SweepPlan, region_report, run_sweep
from .verify import ResidualReport, energy_bound, residual_report

logger = logging.getLogger("nspicard")


class UsageError(Exception):
    pass


# -- helpers -----------------------------------------------------------------------


def _prepare_out(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=out, prefix=".probe."):
            pass
    except OSError as exc:
        raise UsageError(f"output directory {out} is not writable: {exc}") from None
    return out


def _force_params(cfg: RunConfig) -> Optional[GaussianForceParams]:
    if cfg.force is None:
        return None
    nu = cfg.stokes.viscosity if cfg.force.nu is None else cfg.force.nu
    return GaussianForceParams(cfg.force.F, cfg.force.mu, nu)


def _sampler(cfg: RunConfig, grid: Grid):
    params = _force_params(cfg)
    return None if params is None else gaussian_force_sampler(grid, cfg.stokes.t_end, params)


def _stokes(cfg: RunConfig) -> StokesConfig:
    s = cfg.stokes
    return StokesConfig(s.viscosity, s.t_end, s.substeps, projection=s.projection)


def _picard(cfg: RunConfig) -> PicardConfig:
    p = cfg.picard
    times = None if p.snapshot_times is None else tuple(p.snapshot_times)
    return PicardConfig(p.max_iterations, p.tol_abs, p.divergence_ratio_window, times, p.schwartz_p)


def with_consistent_pressure(traj: Trajectory, sampler) -> Trajectory:
    """Attach the pressure of ``f - (u.grad) u`` computed from the velocity alone."""
    grid = traj.grid
    spec = traj.spectral
    p = np.empty((len(traj),) + grid.shape)
    for i, t in enumerate(traj.times):
        rhs = -nonlinear_hat(grid, spec[i])
        if sampler is not None:
            rhs = rhs + forward_array(grid, sampler(float(t)).data)
        p[i] = inverse_real(grid, pressure_array(grid, rhs))
    return traj.with_pressure(p)


def verification(traj: Trajectory, sampler, nu: float, nonlinear: bool = True) -> ResidualReport:
    """Report used by both ``solve`` and ``verify``, so the two agree bit for bit."""
    return residual_report(with_consistent_pressure(traj, sampler), sampler, nu, nonlinear)


def _write_snapshots_atomically(out: Path, traj: Trajectory, nu: float) -> Path:
    final = out / "snapshots"
    staging = Path(tempfile.mkdtemp(dir=out, prefix=".snapshots."))
    try:
        for i, t in enumerate(traj.times):
            write_snapshot(staging / snapshot_name(i), Snapshot(traj.velocity_at(i), float(t), nu))
        if final.exists():
            shutil.rmtree(final)
        os.replace(staging, final)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    return final


# -- subcommands -------------------------------------------------------------------


def cmd_solve(cfg: RunConfig, out: Path, threads: int) -> int:
    if cfg.scenario not in ("GaussianBenchmark", "CustomInitial"):
        raise UsageError(f"solve does not run scenario {cfg.scenario!r}")
    if cfg.scenario == "CustomInitial":
        u0 = read_snapshot(cfg.initial_snapshot).field
        grid = u0.grid
    else:
        grid = Grid(cfg.grid.n_per_axis, cfg.grid.box_length)
        u0 = VectorField.zeros(grid)
    stokes = _stokes(cfg)
    sampler = _sampler(cfg, grid)
    result = iterate_to_fixed_point(u0, sampler, stokes, _picard(cfg))
    state = result.state
    traj = state.u_current
    _write_snapshots_atomically(out, traj, stokes.viscosity)

    norms = state.correction_norms
    alphas = [None] + [b.sup / a.sup if a.sup > 0 else 0.0 for a, b in zip(norms[:-1], norms[1:])]
    rows = [(n.l, n.sup, n.l2, "" if n.schwartz is None else n.schwartz, "" if a is None else a)
            for n, a in zip(norms, alphas)]
    write_csv(out / "diagnostics.csv", ("iteration", "sup_norm", "l2_norm", "schwartz_norm", "alpha"), rows)

    report = verification(traj, sampler, stokes.viscosity)
    write_json(out / "verify_report.json", report.as_dict())
    diag = contraction_diagnostics(state) if len(norms) >= 3 else None
    results = {
        "status": state.status.value,
        "iterations": state.j,
        "final_correction_norm": norms[-1].sup,
        "alpha_hat": None if diag is None else diag.alpha_hat,
        "alpha_max": None if diag is None else diag.alpha_max,
        "geometric_bound_holds": None if diag is None else diag.bound_holds,
        "energy_bound": energy_bound(u0, sampler, traj.times),
        "snapshot_count": len(traj),
    }
    write_manifest(out / "manifest.json", cfg, results, threads)
    logger.info("solve finished: %s after %d iterations", state.status.value, state.j)
    return 0


def cmd_reference(cfg: RunConfig, out: Path, threads: int) -> int:
    params = _force_params(cfg)
    if params is None:
        raise UsageError("reference needs a force section")
    ref = cfg.reference
    rows = []
    for pt in ref.points:
        if len(pt) != 4:
            raise UsageError(f"reference point {pt!r} must be [x1, x2, x3, t]")
        x = np.array(pt[:3], dtype=float)
        t = float(pt[3])
        u = float(u11_closed_form(x, t, params))
        grads = [abs(float(grad_u11_closed_form(x, t, params, a))) for a in (1, 2, 3)]
        est = float(u2_star_estimate(x, t, params))
        oracle = quadrature_oracle_u11(x, t, params, ref.oracle_tol)
        rows.append((*x, t, u, *grads, est, oracle, abs(u - oracle)))
    header = ("x1", "x2", "x3", "t", "u11", "abs_du11_dx1", "abs_du11_dx2", "abs_du11_dx3",
              "u2_star_estimate", "oracle_u11", "abs_diff")
    write_csv(out / "reference.csv", header, rows)
    write_manifest(out / "manifest.json", cfg, {"rows": len(rows)}, threads)
    return 0


def cmd_sweep(cfg: RunConfig, out: Path, threads: int) -> int:
    s = cfg.sweep
    if s is None:
        raise UsageError("sweep needs a sweep section")
    picard = replace(_picard(cfg), max_iterations=s.max_iterations, schwartz_p=None)
    try:
        plan = SweepPlan(tuple(s.F_values), tuple(s.mu_values), tuple(s.nu_values), cfg.grid.n_per_axis,
                         s.box_scale, cfg.stokes.t_end, cfg.stokes.substeps, picard, s.workers, s.fft_threads)
    except ValueError as exc:
        raise UsageError(f"invalid sweep plan: {exc}") from None
    records = run_sweep(plan)
    rows = [(r.params.F, r.params.mu, r.params.nu, r.estimate_ratio, r.status, r.iterations_used,
             r.max_alpha, r.final_correction_norm, r.reason) for r in records]
    write_csv(out / "sweep_atlas.csv", ("F", "mu", "nu", "ratio", "status", "iterations", "max_alpha",
                                        "final_correction_norm", "reason"), rows)
    write_csv(out / "sweep_timing.csv", ("F", "mu", "nu", "wall_time"),
              [(r.params.F, r.params.mu, r.params.nu, r.wall_time) for r in records])
    report = region_report(records, s.inside_threshold, plan=plan)
    (out / "region_report.txt").write_text("\n".join(report.lines()) + "\n")
    write_manifest(out / "manifest.json", cfg, {
        "points": len(records),
        "agreement_fraction": report.agreement_fraction,
        "inside_total": report.inside_total,
        "interleaved_rays": [list(r) for r in report.interleaved_rays],
    }, threads)
    return 0


def cmd_verify(cfg: RunConfig, out: Path, threads: int) -> int:
    v = cfg.verify
    if v is None or not v.snapshot_dir:
        raise UsageError("verify needs verify.snapshot_dir")
    snaps = read_snapshot_set(v.snapshot_dir)
    grid = snaps[0].grid
    if any(s.grid != grid for s in snaps):
        raise UsageError("snapshots live on different grids")
    nus = {s.viscosity for s in snaps}
    if len(nus) != 1:
        raise UsageError("snapshots carry different viscosities")
    nu = nus.pop()
    traj = Trajectory(grid, [s.time for s in snaps], np.stack([s.field.data for s in snaps]))
    sampler = _sampler(cfg, grid)
    report = verification(traj, sampler, nu, v.nonlinear)
    write_json(out / "verify_report.json", report.as_dict())
    rows = [(t, e) for t, e in zip(traj.times, report.energy)]
    write_csv(out / "energy.csv", ("time", "energy"), rows)
    write_manifest(out / "manifest.json", cfg, {"snapshots": len(snaps)}, threads)
    return 0


COMMANDS = {"solve": cmd_solve, "reference": cmd_reference, "sweep": cmd_sweep, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nspicard", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--threads", type=int, default=int(os.environ.get("NSPICARD_THREADS", "1")),
                       help="FFT worker threads")
        p.add_argument("--log-level", default=os.environ.get("NSPICARD_LOG_LEVEL", "WARNING"))
    return parser


def _error(out: Optional[Path], exc: BaseException) -> int:
    record = {"error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(record), file=sys.stderr)
    if out is not None and out.is_dir():
        try:
            write_json(out / "error.json", record)
        except OSError:
            pass
    return 2


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    out: Optional[Path] = None
    previous = spectral.fft_workers()
    try:
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        spectral.set_fft_workers(args.threads)
        cfg = load_config(args.config)
        if args.command == "sweep" and cfg.sweep is None:
            raise UsageError("sweep needs a sweep section in the configuration")
        if args.command == "reference" and cfg.reference is None:
            raise UsageError("reference needs a reference section in the configuration")
        if args.command == "verify" and (cfg.verify is None or not cfg.verify.snapshot_dir):
            raise UsageError("verify needs verify.snapshot_dir in the configuration")
        out = _prepare_out(args.out or cfg.output_dir)
        return COMMANDS[args.command](cfg, out, args.threads)
    except (ConfigError, UsageError, ValueError, OSError) as exc:
        return _error(out, exc)
    finally:
        spectral.set_fft_workers(previous)


if __name__ == "__main__":
    sys.exit(main())
