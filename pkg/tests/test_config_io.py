import hashlib
import json
import math
import os

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_scalar, random_vector
from nlchns import config as cfgmod
from nlchns import io
from nlchns.constitutive import MobilitySpec
from nlchns.errors import ConfigError, FormatError
from nlchns.fields import Grid, ScalarField, VectorField
from nlchns.integrator import SimConfig, advance, initial_state

SAMPLE = """
# spinodal run
grid.nx=16
grid.ny=16
kernel.family=gaussian
kernel.eps=0.05
potential.family=log
potential.theta=1.0
potential.thetac=2.0
kernel.mass=2.0
mobility.family=const
viscosity.family=variable
time.dt=2e-3
time.t_end=0.02
init.phi=random_smooth   # smooth random data
init.u=taylor_green
init.u_amp=0.5
seed=42
"""

DEFAULT_HASH = "68e991a26225665e6b067cf13ed8024bf34bf140781250ff8be125f381a78c47"


# --------------------------------------------------------------------------
# flat config


def test_parse_fills_defaults_and_aliases():
    v = cfgmod.parse_flat(SAMPLE)
    assert v["grid.nx"] == 16 and v["seed"] == 42
    assert v["viscosity.family"] == "lipschitz" and v["mobility.family"] == "constant"
    assert v["potential.family"] == "log"
    assert v["grid.bc"] == "periodic" and v["time.stride"] == 1
    cfg = cfgmod.to_config(v)
    assert cfg.grid == Grid(16, 16) and cfg.potential.singular and not cfg.viscosity.constant
    assert cfg.dt == 2e-3 and cfg.n_steps == 10


def test_empty_config_is_valid():
    cfg, _ = cfgmod.loads("")
    # the file default for k1 is a physical scale, not the bare class default
    assert cfg == SimConfig(mobility=MobilitySpec("constant", m0=0.01, k1=0.01))


def test_serialize_round_trip():
    v = cfgmod.parse_flat(SAMPLE)
    text = cfgmod.serialize(v)
    assert cfgmod.parse_flat(text) == v
    assert cfgmod.serialize(cfgmod.parse_flat(text)) == text
    keys = [ln.split("=")[0] for ln in text.splitlines()]
    assert keys == sorted(keys)


def test_from_config_inverts_to_config():
    v = cfgmod.parse_flat(SAMPLE)
    cfg = cfgmod.to_config(v)
    assert cfgmod.to_config(cfgmod.from_config(cfg)) == cfg
    assert cfgmod.config_hash(cfg) == cfgmod.config_hash(v)


@given(dt=st.floats(1e-6, 1.0, allow_nan=False), nu=st.floats(1e-3, 10.0), seed=st.integers(0, 2 ** 31))
def test_float_formatting_round_trips(dt, nu, seed):
    v = cfgmod.parse_flat(f"time.dt={dt!r}\nviscosity.nu={nu!r}\nseed={seed}\n")
    back = cfgmod.parse_flat(cfgmod.serialize(v))
    assert back["time.dt"] == dt and back["viscosity.nu"] == nu and back["seed"] == seed


def test_hash_is_frozen_for_defaults():
    assert cfgmod.config_hash(cfgmod.parse_flat("")) == DEFAULT_HASH
    text = cfgmod.serialize(cfgmod.parse_flat(""))
    assert hashlib.sha256(text.encode()).hexdigest() == DEFAULT_HASH


def test_hash_ignores_order_comments_and_output_keys():
    a = cfgmod.parse_flat("grid.nx=64\nseed=3\n")
    b = cfgmod.parse_flat("# comment\nseed=3\n\ngrid.nx = 64\noutput.snapshot_every=10\n")
    assert cfgmod.config_hash(a) == cfgmod.config_hash(b)
    c = cfgmod.parse_flat("grid.nx=64\nseed=4\n")
    assert cfgmod.config_hash(a) != cfgmod.config_hash(c)


def test_checkpoint_hash_ignores_t_end_only():
    a = cfgmod.parse_flat("time.t_end=1\n")
    b = cfgmod.parse_flat("time.t_end=5\n")
    c = cfgmod.parse_flat("time.t_end=5\ntime.dt=2e-3\n")
    assert cfgmod.config_hash(a) != cfgmod.config_hash(b)
    assert cfgmod.checkpoint_hash(a) == cfgmod.checkpoint_hash(b)
    assert cfgmod.checkpoint_hash(a) != cfgmod.checkpoint_hash(c)


@pytest.mark.parametrize("text, match", [
    ("grid.nz=3\n", "unknown key"),
    ("grid.nx=16\ngrid.nx=32\n", "duplicate key"),
    ("grid.nx\n", "expected key=value"),
    ("grid.nx=abc\n", "cannot parse"),
    ("grid.nx=16.5\n", "cannot parse"),
    ("scheme.ch=maybe\n", "cannot parse"),
])
def test_parse_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        cfgmod.parse_flat(text)


def test_constructor_errors_become_config_errors():
    with pytest.raises(ConfigError):
        cfgmod.loads("grid.nx=7\n")
    with pytest.raises(ConfigError):
        cfgmod.loads("potential.family=quartic\n")
    with pytest.raises(ConfigError, match="init.mode"):
        cfgmod.loads("init.mode=1,2,3\n")


def test_overrides():
    cfg, v = cfgmod.loads("grid.nx=16\n", ["grid.nx=32", "seed=9"])
    assert cfg.grid.nx == 32 and cfg.seed == 9
    with pytest.raises(ConfigError):
        cfgmod.apply_overrides(v, ["bogus=1"])
    with pytest.raises(ConfigError):
        cfgmod.apply_overrides(v, ["grid.nx"])


def test_with_values():
    cfg = cfgmod.with_values(SimConfig(), **{"grid.nx": 64, "kernel.eps": 0.1})
    assert cfg.grid.nx == 64 and cfg.kernel.eps == 0.1


def test_load_from_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(SAMPLE)
    cfg, v = cfgmod.load(p)
    assert cfg.seed == 42 and v["init.phi"] == "random_smooth"


# --------------------------------------------------------------------------
# snapshots


@pytest.mark.parametrize("kind", ["scalar", "vector"])
def test_snapshot_round_trip_is_bitwise(kind, bc, rng):
    g = Grid(16, 8, 2.0, 1.0, bc)
    f = random_scalar(g, rng) if kind == "scalar" else random_vector(g, rng)
    buf = io.encode_field(f)
    assert buf.startswith(b"NLCHNS1 kind=" + kind.encode())
    back = io.decode_field(buf, g)
    assert type(back) is type(f) and back.grid == g
    if kind == "scalar":
        assert np.array_equal(back.data, f.data)
    else:
        assert np.array_equal(back.ux, f.ux) and np.array_equal(back.uy, f.uy)


def test_snapshot_header_layout():
    g = Grid(8, 8, 1.0, 0.5, "box")
    buf = io.encode_field(ScalarField(g, np.arange(64.0).reshape(8, 8)))
    header, payload = buf.split(b"\n", 1)
    assert header == b"NLCHNS1 kind=scalar nx=8 ny=8 lx=1.0 ly=0.5 bc=b"
    assert len(payload) == 64 * 8
    assert np.frombuffer(payload, "<f8")[5] == 5.0


def test_truncated_payload_offset():
    g = Grid(8, 8)
    buf = io.encode_field(ScalarField(g, np.ones(g.shape)))
    start = buf.index(b"\n") + 1
    with pytest.raises(FormatError) as info:
        io.decode_field(buf[:-10])
    assert info.value.offset == len(buf) - 10
    assert "byte offset" in str(info.value)
    with pytest.raises(FormatError) as info:
        io.decode_field(buf + b"xx")
    assert info.value.offset == start + 64 * 8


@pytest.mark.parametrize("mutate, offset", [
    (lambda b: b"XLCHNS1" + b[7:], 0),
    (lambda b: b.replace(b"kind=scalar", b"kind=tensor"), 8),
    (lambda b: b.replace(b" nx=8", b" mx=8"), 20),
    (lambda b: b.replace(b"bc=p", b"bc=q"), 44),
    (lambda b: b.replace(b"\n", b" ", 1)[:40], 40),
])
def test_malformed_headers(mutate, offset):
    g = Grid(8, 8)
    buf = io.encode_field(ScalarField(g, np.ones(g.shape)))
    with pytest.raises(FormatError) as info:
        io.decode_field(mutate(buf))
    assert info.value.offset == offset


def test_nonfinite_payload_rejected():
    g = Grid(8, 8)
    buf = bytearray(io.encode_field(ScalarField(g, np.ones(g.shape))))
    start = buf.index(b"\n") + 1
    buf[start + 8 * 27:start + 8 * 28] = np.array([np.nan], "<f8").tobytes()
    with pytest.raises(FormatError, match="non-finite") as info:
        io.decode_field(bytes(buf))
    assert info.value.offset == start + 8 * 27


def test_grid_mismatch_rejected():
    buf = io.encode_field(ScalarField(Grid(8, 8), np.zeros((8, 8))))
    with pytest.raises(FormatError, match="does not match"):
        io.decode_field(buf, Grid(16, 16))


def test_snapshot_files(tmp_path, rng):
    g = Grid(8, 8)
    f = random_vector(g, rng)
    io.write_snapshot(tmp_path / "u.snap", f)
    back = io.read_snapshot(tmp_path / "u.snap")
    assert isinstance(back, VectorField) and np.array_equal(back.uy, f.uy)


# --------------------------------------------------------------------------
# checkpoints


def _config():
    cfg, _ = cfgmod.loads(SAMPLE)
    return cfg


def test_checkpoint_restart_is_bitwise(tmp_path):
    cfg = _config()
    h = cfgmod.checkpoint_hash(cfg)
    whole, _ = advance(initial_state(cfg), cfg, 10)
    half, _ = advance(initial_state(cfg), cfg, 4)
    io.write_checkpoint(tmp_path / "ck", half, h)
    meta = io.read_checkpoint_line(tmp_path / "ck")
    assert meta == {"t": half.t, "step": 4, "config_hash": h}
    restored = io.read_checkpoint(tmp_path / "ck", cfg, h)
    assert restored.t == half.t and restored.step == 4
    assert np.array_equal(restored.mu.data, half.mu.data)
    rest, _ = advance(restored, cfg, 6)
    assert np.array_equal(rest.phi.data, whole.phi.data)
    assert np.array_equal(rest.u.ux, whole.u.ux) and np.array_equal(rest.u.uy, whole.u.uy)
    assert sorted(os.listdir(tmp_path / "ck")) == sorted(io.CHECKPOINT_FILES)


def test_checkpoint_hash_mismatch(tmp_path):
    cfg = _config()
    io.write_checkpoint(tmp_path, initial_state(cfg), "abc")
    with pytest.raises(FormatError, match="config"):
        io.read_checkpoint(tmp_path, cfg, "def")


def test_malformed_checkpoint_line(tmp_path):
    (tmp_path / "checkpoint.txt").write_text("t=zero\n")
    with pytest.raises(FormatError):
        io.read_checkpoint_line(tmp_path)


def test_checkpoint_snapshot_kinds_checked(tmp_path):
    cfg = _config()
    s = initial_state(cfg)
    io.write_checkpoint(tmp_path, s, "h")
    io.write_snapshot(tmp_path / "u.snap", s.phi)
    with pytest.raises(FormatError, match="kinds"):
        io.read_checkpoint(tmp_path, cfg)


# --------------------------------------------------------------------------
# JSON and manifests


def test_json_is_strict_with_nonfinite_values(tmp_path):
    obj = {"k": math.inf, "arr": np.array([1.0, np.nan]), "flag": np.bool_(True), "n": np.int64(3),
           "nested": ({"x": np.float64(0.1)},)}
    text = io.dumps_json(obj)
    data = json.loads(text)
    assert data == {"k": "inf", "arr": [1.0, "nan"], "flag": True, "n": 3, "nested": [{"x": 0.1}]}
    io.write_json(tmp_path / "r.json", obj)
    assert io.read_json(tmp_path / "r.json") == data


def test_manifest_fields():
    m = io.RunManifest("abc", 1, "regular-const-nu", {"coercivity": 1.0})
    d = m.to_dict()
    assert d["config_hash"] == "abc" and d["finished"] is None
    assert d["code_version"] and d["started"].endswith("+00:00")
