import json
import math
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from nspicard.fileio import (
    HEADER,
    ConfigError,
    RunConfig,
    Snapshot,
    apply_env_overrides,
    config_from_dict,
    decode_snapshot,
    encode_snapshot,
    format_value,
    load_config,
    read_csv,
    read_snapshot,
    read_snapshot_set,
    save_config,
    write_csv,
    write_manifest,
    write_snapshot,
    write_trajectory,
)
from nspicard.spectral import Grid, VectorField
from nspicard.stokes import Trajectory


def snap(n=4, seed=0, t=0.25, nu=0.5):
    g = Grid(n, 3.0)
    data = np.random.default_rng(seed).standard_normal((3,) + g.shape)
    return Snapshot(VectorField(g, data), t, nu)


class TestSnapshot:
    def test_header_layout(self):
        assert HEADER.size == 40
        raw = encode_snapshot(snap())
        assert raw[:4] == b"SPKD"
        magic, version, n, box, t, nu, ncomp = struct.unpack_from("<4sIIdddI", raw)
        assert (version, n, box, t, nu, ncomp) == (1, 4, 3.0, 0.25, 0.5, 3)
        assert len(raw) == 40 + 3 * 4**3 * 8

    def test_payload_order(self):
        # component-major, x1 fastest
        g = Grid(4, 1.0)
        data = np.arange(192, dtype=float).reshape((3, 4, 4, 4))
        raw = encode_snapshot(Snapshot(VectorField(g, data), 0.0, 1.0))
        flat = np.frombuffer(raw[40:], dtype="<f8")
        assert flat[0] == data[0, 0, 0, 0] and flat[1] == data[0, 1, 0, 0] and flat[4] == data[0, 0, 1, 0]
        assert flat[64] == data[1, 0, 0, 0]

    def test_file_round_trip_byte_identical(self, tmp_path):
        p1, p2 = tmp_path / "a.spkd", tmp_path / "b.spkd"
        write_snapshot(p1, snap())
        write_snapshot(p2, read_snapshot(p1))
        assert p1.read_bytes() == p2.read_bytes()
        assert not list(tmp_path.glob("*.tmp"))

    @given(arrays(np.float64, (3, 4, 4, 4), elements=st.floats(allow_nan=False, allow_infinity=False)),
           st.floats(0, 1e6), st.floats(1e-6, 1e6))
    def test_round_trip_property(self, data, t, nu):
        s = Snapshot(VectorField(Grid(4, 2.0), data), t, nu)
        raw = encode_snapshot(s)
        back = decode_snapshot(raw)
        assert encode_snapshot(back) == raw
        assert np.array_equal(back.field.data, data) and back.time == t and back.viscosity == nu

    @pytest.mark.parametrize("mutate", [
        lambda r: b"XXXX" + r[4:],
        lambda r: r[:4] + struct.pack("<I", 9) + r[8:],
        lambda r: r[:-8],
        lambda r: r[:20],
    ])
    def test_corrupt_rejected(self, mutate):
        with pytest.raises(ValueError):
            decode_snapshot(mutate(encode_snapshot(snap())))

    def test_trajectory_set(self, tmp_path):
        g = Grid(4, 1.0)
        v = np.random.default_rng(1).standard_normal((3, 3) + g.shape)
        traj = Trajectory(g, [0.0, 0.5, 1.0], v)
        write_trajectory(tmp_path, traj, 0.7)
        back = read_snapshot_set(tmp_path)
        assert [s.time for s in back] == [0.0, 0.5, 1.0]
        assert np.array_equal(np.stack([s.field.data for s in back]), v)

    def test_empty_set(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_snapshot_set(tmp_path)


class TestCSV:
    @given(st.floats(allow_nan=False))
    def test_float_round_trip(self, x):
        assert float(format_value(x)) == x

    def test_shortest_repr(self):
        assert format_value(0.1) == "0.1"
        assert format_value(np.float64(1e-300)) == "1e-300"
        assert format_value(np.int64(3)) == "3"

    def test_write_read(self, tmp_path):
        write_csv(tmp_path / "a.csv", ("a", "b"), [(1, 0.1 + 0.2), ("x", math.inf)])
        header, rows = read_csv(tmp_path / "a.csv")
        assert header == ["a", "b"]
        assert rows == [["1", "0.30000000000000004"], ["x", "inf"]]


class TestConfig:
    def test_defaults(self):
        cfg = config_from_dict({})
        assert cfg.scenario == "GaussianBenchmark" and cfg.grid.n_per_axis == 32

    @pytest.mark.parametrize("doc", [{"bogus": 1}, {"grid": {"n": 32}}, {"stokes": {"visc": 1}},
                                     {"scenario": "Nope"}, {"schema_version": 99},
                                     {"scenario": "CustomInitial"}, {"scenario": "Verify"},
                                     {"grid": 5}, []])
    def test_rejected(self, doc):
        with pytest.raises(ConfigError):
            config_from_dict(doc)

    def test_sweep_defaults_filled(self):
        cfg = config_from_dict({"scenario": "Sweep"})
        assert cfg.sweep.F_values == [0.1, 0.5, 1.0, 2.0, 3.0]

    def test_env_overrides(self):
        env = {"NSPICARD_GRID__N_PER_AXIS": "16", "NSPICARD_FORCE__F": "2.5", "NSPICARD_SEED": "7",
               "NSPICARD_THREADS": "4", "OTHER": "x", "NSPICARD_STOKES__PROJECTION": "relaxed"}
        cfg = config_from_dict(apply_env_overrides({"force": {"F": 1.0}}, env))
        assert cfg.grid.n_per_axis == 16 and cfg.force.F == 2.5 and cfg.seed == 7
        assert cfg.stokes.projection == "relaxed"

    def test_env_unknown_key_fails(self):
        with pytest.raises(ConfigError):
            config_from_dict(apply_env_overrides({}, {"NSPICARD_GRID__SIZE": "3"}))

    def test_save_load(self, tmp_path):
        cfg = config_from_dict({"grid": {"n_per_axis": 8, "box_length": 4.0}, "seed": 3})
        save_config(tmp_path / "c.json", cfg)
        assert load_config(tmp_path / "c.json", environ={}).to_dict() == cfg.to_dict()

    def test_load_from_manifest(self, tmp_path):
        cfg = config_from_dict({"grid": {"n_per_axis": 8, "box_length": 4.0}})
        write_manifest(tmp_path / "m.json", cfg, {"status": "Converged", "x": math.inf}, 1)
        doc = json.loads((tmp_path / "m.json").read_text())
        assert doc["results"]["x"] == "inf" and "modelling_choices" in doc
        assert load_config(tmp_path / "m.json", environ={}).to_dict() == cfg.to_dict()

    def test_round_trip_dict(self):
        cfg = RunConfig()
        assert config_from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()
