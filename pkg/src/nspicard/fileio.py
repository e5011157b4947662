"""Snapshot files, CSV tables, run configuration and manifests.

Snapshot layout (all little-endian)::

    offset  size  field
    0       4     magic b"SPKD"
    4       4     format version (u32)
    8       4     points per axis n (u32)
    12      8     box length (f64)
    20      8     time (f64)
    28      8     viscosity (f64)
    36      4     component count (u32)
    40      ...   payload: f64, component-major, x index fastest

Files are written to a temporary name and renamed, so a failed write leaves
no partial snapshot behind.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np

from .spectral import Grid, VectorField

MAGIC = b"SPKD"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIIdddI")
ENV_PREFIX = "NSPICARD_"
SCHEMA_VERSION = 1


# -- snapshots ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Snapshot:
    field: VectorField
    time: float
    viscosity: float

    @property
    def grid(self) -> Grid:
        return self.field.grid


def encode_snapshot(snap: Snapshot) -> bytes:
    grid = snap.grid
    data = snap.field.data
    head = HEADER.pack(MAGIC, FORMAT_VERSION, grid.n_per_axis, grid.box_length, snap.time,
                       snap.viscosity, data.shape[0])
    payload = b"".join(np.asarray(data[c], dtype="<f8").tobytes(order="F") for c in range(data.shape[0]))
    return head + payload


def decode_snapshot(raw: bytes) -> Snapshot:
    if len(raw) < HEADER.size:
        raise ValueError("snapshot shorter than its header")
    magic, version, n, box, t, nu, ncomp = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    if ncomp != 3:
        raise ValueError(f"expected 3 components, got {ncomp}")
    expected = HEADER.size + ncomp * n**3 * 8
    if len(raw) != expected:
        raise ValueError(f"snapshot has {len(raw)} bytes, expected {expected}")
    flat = np.frombuffer(raw, dtype="<f8", offset=HEADER.size)
    data = np.stack([flat[c * n**3:(c + 1) * n**3].reshape((n, n, n), order="F") for c in range(ncomp)])
    return Snapshot(VectorField(Grid(n, box), data.astype(float)), t, nu)


def _atomic_write(path: Path, raw: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_snapshot(path, snap: Snapshot) -> None:
    _atomic_write(Path(path), encode_snapshot(snap))


def read_snapshot(path) -> Snapshot:
    return decode_snapshot(Path(path).read_bytes())


def snapshot_name(index: int) -> str:
    return f"snapshot_{index:05d}.spkd"


def write_trajectory(directory, traj, viscosity: float) -> list[Path]:
    """One snapshot file per trajectory node; returns the paths in time order."""
    directory = Path(directory)
    paths = []
    for i, t in enumerate(traj.times):
        p = directory / snapshot_name(i)
        write_snapshot(p, Snapshot(traj.velocity_at(i), float(t), viscosity))
        paths.append(p)
    return paths


def read_snapshot_set(directory) -> list[Snapshot]:
    paths = sorted(Path(directory).glob("snapshot_*.spkd"))
    if not paths:
        raise FileNotFoundError(f"no snapshot files in {directory}")
    return [read_snapshot(p) for p in paths]


# -- CSV ---------------------------------------------------------------------------


def format_value(v) -> str:
    """Shortest round-trip text for floats, plain ``str`` otherwise."""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


# -- configuration -----------------------------------------------------------------


class ConfigError(ValueError):
    pass


@dataclass
class GridSection:
    n_per_axis: int = 32
    box_length: float = 10.0


@dataclass
class StokesSection:
    viscosity: float = 1.0
    t_end: float = 1.0
    substeps: int = 32
    projection: str = "leray"


@dataclass
class PicardSection:
    max_iterations: int = 50
    tol_abs: float = 1e-10
    divergence_ratio_window: int = 3
    snapshot_times: Optional[list] = None
    schwartz_p: Optional[int] = 2


@dataclass
class ForceSection:
    F: float = 1.0
    mu: float = 1.0
    nu: Optional[float] = None  # defaults to the stokes viscosity


@dataclass
class SweepSection:
    F_values: list = field(default_factory=lambda: [0.1, 0.5, 1.0, 2.0, 3.0])
    mu_values: list = field(default_factory=lambda: [0.7, 1.0, 1.4])
    nu_values: list = field(default_factory=lambda: [0.5, 1.0, 2.0])
    box_scale: float = 10.0
    max_iterations: int = 30
    workers: int = 1
    fft_threads: int = 1
    inside_threshold: float = 1.0


@dataclass
class ReferenceSection:
    # rows of [x1, x2, x3, t]
    points: list = field(default_factory=lambda: [[0.0, 0.0, 0.0, 1.0]])
    oracle_tol: float = 1e-12


@dataclass
class VerifySection:
    snapshot_dir: Optional[str] = None
    nonlinear: bool = True


SCENARIOS = ("GaussianBenchmark", "CustomInitial", "Sweep", "Verify", "Reference")


@dataclass
class RunConfig:
    """Everything a run needs; serialized as JSON with a schema version.

    ``initial_snapshot`` names a snapshot file holding ``u0`` for the
    ``CustomInitial`` scenario.  ``force`` may be ``None`` there for an
    unforced run.
    """

    scenario: str = "GaussianBenchmark"
    schema_version: int = SCHEMA_VERSION
    grid: GridSection = field(default_factory=GridSection)
    stokes: StokesSection = field(default_factory=StokesSection)
    picard: PicardSection = field(default_factory=PicardSection)
    force: Optional[ForceSection] = field(default_factory=ForceSection)
    sweep: Optional[SweepSection] = None
    reference: Optional[ReferenceSection] = None
    verify: Optional[VerifySection] = None
    initial_snapshot: Optional[str] = None
    output_dir: str = "out"
    seed: int = 0

    def validate(self) -> "RunConfig":
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if self.scenario == "GaussianBenchmark" and self.force is None:
            raise ConfigError("GaussianBenchmark needs a force section")
        if self.scenario == "CustomInitial" and not self.initial_snapshot:
            raise ConfigError("CustomInitial needs initial_snapshot")
        if self.scenario == "Sweep" and self.sweep is None:
            raise ConfigError("Sweep needs a sweep section")
        if self.scenario == "Verify" and (self.verify is None or not self.verify.snapshot_dir):
            raise ConfigError("Verify needs verify.snapshot_dir")
        if self.scenario == "Reference" and self.reference is None:
            raise ConfigError("Reference needs a reference section")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {
    "grid": GridSection,
    "stokes": StokesSection,
    "picard": PicardSection,
    "force": ForceSection,
    "sweep": SweepSection,
    "reference": ReferenceSection,
    "verify": VerifySection,
}


def _build(cls, data: Mapping, where: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    return cls(**data)


def config_from_dict(data: Mapping) -> RunConfig:
    if not isinstance(data, Mapping):
        raise ConfigError("configuration must be a JSON object")
    top = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = None if value is None else _build(_SECTIONS[key], value, key)
        else:
            kwargs[key] = value
    try:
        cfg = RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    # sections left out of the file are only defaulted when the scenario needs them
    if cfg.scenario == "Sweep" and cfg.sweep is None and "sweep" not in data:
        cfg.sweep = SweepSection()
    if cfg.scenario == "Reference" and cfg.reference is None and "reference" not in data:
        cfg.reference = ReferenceSection()
    return cfg.validate()


def _parse_env_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_env_overrides(data: dict, environ: Optional[Mapping[str, str]] = None) -> dict:
    """Overlay ``NSPICARD_<SECTION>__<KEY>=value`` (or ``NSPICARD_<KEY>``) onto ``data``.

    Values are parsed as JSON when possible, else kept as strings.  Names are
    case-insensitive.
    """
    environ = os.environ if environ is None else environ
    out = json.loads(json.dumps(data))
    for name, text in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        path = name[len(ENV_PREFIX):].lower().split("__")
        if path == ["threads"] or path == ["log_level"]:
            continue
        target = out
        for part in path[:-1]:
            if target.get(part) is None:
                target[part] = {}
            target = target[part]
        target[_case_key(target, path[-1])] = _parse_env_value(text)
    return out


def _case_key(section: Mapping, key: str) -> str:
    # config keys like "F" or "F_values" are mixed case
    for existing in list(section) + ["F", "F_values"]:
        if existing.lower() == key:
            return existing
    return key


def load_config(path=None, environ: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Read a JSON config, or the ``config`` object embedded in a run manifest."""
    data = {} if path is None else json.loads(Path(path).read_text())
    if isinstance(data, dict) and "modelling_choices" in data and "config" in data:
        data = data["config"]
    return config_from_dict(apply_env_overrides(data, environ))


def save_config(path, cfg: RunConfig) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


# -- manifest ----------------------------------------------------------------------

# modelling choices recorded in every manifest
MODELLING_CHOICES = {
    "domain": "periodic box of side L standing in for R^3, centered at the origin",
    "fourier_convention": "unitary, kernel exp(+i gamma x), discrete sums scaled to the continuous transform",
    "time_quadrature": "exponential integration exact for piecewise-linear force between nodes",
    "derivative_wavenumbers": "Nyquist entry zeroed for first derivatives and projection",
    "dealiasing": "2/3 truncation of nonlinear inputs and products",
    "pressure": "i gamma.F / |gamma|^2 of the instantaneous force, zero mean mode",
    "stopping": "sup norm of the latest correction below tol_abs; divergence after a window of growing ratios",
    "diagnostic_norms": "sup, L2 and discrete Schwartz norm",
    "sweep_classification": "contraction ratios in [0.95, 1.05] are Inconclusive",
    "residual_normalization": "max residual over the max individual term, per component",
    "time_derivative": "second-order differences, one-sided at the ends",
    "csv_floats": "shortest round-trip decimal",
}


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return _jsonable(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def write_manifest(path, cfg: RunConfig, results: Mapping, threads: int) -> None:
    from . import __version__

    doc = {
        "package_version": __version__,
        "config": cfg.to_dict(),
        "threads": threads,
        "modelling_choices": MODELLING_CHOICES,
        "results": dict(results),
    }
    Path(path).write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


def write_json(path, doc: Mapping) -> None:
    Path(path).write_text(json.dumps(_jsonable(dict(doc)), indent=2, sort_keys=True) + "\n")
