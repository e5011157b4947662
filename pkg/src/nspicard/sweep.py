"""Parameter sweeps of the Gaussian benchmark over (F, mu, nu).

Each point runs the full fixed-point iteration from zero initial data and is
classified Converged, Diverged or Inconclusive.  Results are compared with
the estimated region ``F / (mu^4 nu) < 1``.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import spectral
from .picard import PicardConfig, Status, iterate_to_fixed_point
from .reference import GaussianForceParams, convergence_ratio, gaussian_force_sampler
from .spectral import Grid, VectorField
from .stokes import StokesConfig

logger = logging.getLogger(__name__)

CONVERGED = "Converged"
DIVERGED = "Diverged"
INCONCLUSIVE = "Inconclusive"

# max contraction ratios in this band are too close to 1 to call
ALPHA_BAND = (0.95, 1.05)

REPORT_HEADER = (
    "Empirical status from the fixed-point iteration capped at {max_iterations} iterations "
    "on a {n}^3 grid (box length {box_scale}/mu, {substeps} time steps to t = {t_end}). "
    "Reduced resolution trades fidelity for speed."
)


def _values(name: str, vals) -> tuple:
    out = tuple(float(v) for v in vals)
    if not out:
        raise ValueError(f"axis {name} has no samples")
    if any(not math.isfinite(v) for v in out):
        raise ValueError(f"axis {name} has non-finite values")
    return out


@dataclass(frozen=True)
class SweepPlan:
    """Axes and solver settings for a sweep.

    The box length at each point is ``box_scale / mu``, so the force Gaussian
    is equally well contained for every ``mu``.  ``fft_threads`` is fixed per
    task so that records do not depend on ``workers``.
    """

    F_values: tuple
    mu_values: tuple
    nu_values: tuple
    n_per_axis: int = 32
    box_scale: float = 10.0
    t_end: float = 1.0
    substeps: int = 32
    # classification only needs sup-norm ratios, so the costly Schwartz norm is off
    picard: PicardConfig = field(default_factory=lambda: PicardConfig(max_iterations=30, schwartz_p=None))
    workers: int = 1
    fft_threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "F_values", _values("F", self.F_values))
        object.__setattr__(self, "mu_values", _values("mu", self.mu_values))
        object.__setattr__(self, "nu_values", _values("nu", self.nu_values))
        if any(v < 0 for v in self.F_values):
            raise ValueError("F values must be >= 0")
        if any(v <= 0 for v in self.mu_values + self.nu_values):
            raise ValueError("mu and nu values must be > 0")
        if self.workers < 1 or self.fft_threads < 1:
            raise ValueError("workers and fft_threads must be >= 1")
        if not self.box_scale > 0 or not self.t_end > 0:
            raise ValueError("box_scale and t_end must be > 0")
        Grid(self.n_per_axis, 1.0)

    def points(self) -> list[GaussianForceParams]:
        """Parameter tuples in index order (F slowest, nu fastest)."""
        return [GaussianForceParams(F, mu, nu)
                for F, mu, nu in itertools.product(self.F_values, self.mu_values, self.nu_values)]

    def __len__(self) -> int:
        return len(self.F_values) * len(self.mu_values) * len(self.nu_values)


@dataclass(frozen=True)
class SweepRecord:
    params: GaussianForceParams
    estimate_ratio: float
    status: str
    iterations_used: int
    max_alpha: float
    final_correction_norm: float
    wall_time: float = 0.0
    reason: str = ""

    def __post_init__(self):
        if self.estimate_ratio != convergence_ratio(self.params):
            raise ValueError("estimate_ratio must equal convergence_ratio(params)")
        if self.status not in (CONVERGED, DIVERGED, INCONCLUSIVE):
            raise ValueError(f"unknown status {self.status!r}")

    def content(self) -> tuple:
        """Every field except the wall time."""
        return (self.params, self.estimate_ratio, self.status, self.iterations_used,
                self.max_alpha, self.final_correction_norm, self.reason)


def classify(status: Status, max_alpha: float) -> tuple[str, str]:
    lo, hi = ALPHA_BAND
    if status is Status.MAX_ITERATIONS:
        return INCONCLUSIVE, "iteration cap reached"
    if lo <= max_alpha <= hi:
        return INCONCLUSIVE, f"max alpha {max_alpha:.4g} within [{lo}, {hi}]"
    if status is Status.CONVERGED:
        return CONVERGED, ""
    if status is Status.DIVERGED:
        return DIVERGED, ""
    return INCONCLUSIVE, f"unexpected status {status.value}"


def run_point(plan: SweepPlan, params: GaussianForceParams) -> SweepRecord:
    """One sweep point; failures become Inconclusive records."""
    start = time.perf_counter()
    ratio = convergence_ratio(params)
    try:
        grid = Grid(plan.n_per_axis, plan.box_scale / params.mu)
        stokes = StokesConfig(params.nu, plan.t_end, plan.substeps)
        sampler = gaussian_force_sampler(grid, plan.t_end, params)
        result = iterate_to_fixed_point(VectorField.zeros(grid), sampler, stokes, plan.picard)
        norms = [n.sup for n in result.state.correction_norms]
        ratios = [b / a for a, b in zip(norms[:-1], norms[1:]) if a > 0 and math.isfinite(b)]
        max_alpha = float(max(ratios)) if ratios else 0.0
        if len(norms) > 1 and not math.isfinite(norms[-1]):
            max_alpha = math.inf
        status, reason = classify(result.state.status, max_alpha)
        return SweepRecord(params, ratio, status, result.state.j, max_alpha, float(norms[-1]),
                           time.perf_counter() - start, reason)
    except Exception as exc:  # a failed point must not abort the sweep
        logger.warning("sweep point %s failed: %s", params, exc)
        return SweepRecord(params, ratio, INCONCLUSIVE, 0, math.nan, math.nan,
                           time.perf_counter() - start, f"{type(exc).__name__}: {exc}")


def _worker_init(threads: int) -> None:
    spectral.set_fft_workers(threads)


def _task(args):
    plan, params = args
    return run_point(plan, params)


def run_sweep(plan: SweepPlan) -> list[SweepRecord]:
    """One record per parameter tuple, in tuple-index order."""
    points = plan.points()
    logger.info("sweep: %d points, %d workers", len(points), plan.workers)
    if plan.workers == 1:
        previous = spectral.fft_workers()
        spectral.set_fft_workers(plan.fft_threads)
        try:
            return [run_point(plan, p) for p in points]
        finally:
            spectral.set_fft_workers(previous)
    records: list[Optional[SweepRecord]] = [None] * len(points)
    with ProcessPoolExecutor(plan.workers, initializer=_worker_init, initargs=(plan.fft_threads,)) as pool:
        for i, rec in enumerate(pool.map(_task, [(plan, p) for p in points])):
            records[i] = rec
    return records  # type: ignore[return-value]


@dataclass(frozen=True)
class RegionReport:
    """Estimate class (inside/outside) against empirical status.

    ``agreement_fraction`` is the share of inside points that converged;
    ``None`` when no point is inside.  ``interleaved_rays`` lists ``(mu, nu)``
    rays along which a Diverged point precedes a Converged one in ``F``.
    """

    threshold: float
    table: dict
    inside_total: int
    inside_converged: int
    agreement_fraction: Optional[float]
    interleaved_rays: tuple
    header: str = ""

    def lines(self) -> list[str]:
        out = [self.header] if self.header else []
        out.append(f"estimate threshold: ratio < {self.threshold:g}")
        for cls in ("inside", "outside"):
            counts = self.table.get(cls, {})
            out.append(f"{cls:8s} " + " ".join(f"{s}={counts.get(s, 0)}" for s in (CONVERGED, DIVERGED, INCONCLUSIVE)))
        frac = "n/a" if self.agreement_fraction is None else f"{self.agreement_fraction:.6g}"
        out.append(f"inside agreement fraction: {frac} ({self.inside_converged}/{self.inside_total})")
        for mu, nu in self.interleaved_rays:
            out.append(f"Inconclusive-region: ray mu={mu:g} nu={nu:g} has Diverged before Converged")
        return out


def region_report(records: Sequence[SweepRecord], threshold: float = 1.0, inclusive: bool = False,
                  plan: Optional[SweepPlan] = None) -> RegionReport:
    """Cross-tabulate ``ratio < threshold`` (or ``<=`` with ``inclusive``) against status."""
    if not records:
        raise ValueError("region_report needs at least one record")
    inside = (lambda r: r <= threshold) if inclusive else (lambda r: r < threshold)
    table: dict = {"inside": Counter(), "outside": Counter()}
    for rec in records:
        table["inside" if inside(rec.estimate_ratio) else "outside"][rec.status] += 1
    n_in = sum(table["inside"].values())
    n_conv = table["inside"][CONVERGED]
    rays: dict = {}
    for rec in records:
        rays.setdefault((rec.params.mu, rec.params.nu), []).append(rec)
    flagged = []
    for key in sorted(rays):
        ray = sorted(rays[key], key=lambda r: r.params.F)
        statuses = [r.status for r in ray]
        conv = [i for i, s in enumerate(statuses) if s == CONVERGED]
        div = [i for i, s in enumerate(statuses) if s == DIVERGED]
        if conv and div and min(div) < max(conv):
            flagged.append(key)
    header = ""
    if plan is not None:
        header = REPORT_HEADER.format(max_iterations=plan.picard.max_iterations, n=plan.n_per_axis,
                                      box_scale=plan.box_scale, substeps=plan.substeps, t_end=plan.t_end)
    return RegionReport(threshold, {k: dict(v) for k, v in table.items()}, n_in, n_conv,
                        None if n_in == 0 else n_conv / n_in, tuple(flagged), header)
