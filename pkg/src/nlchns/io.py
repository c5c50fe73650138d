"""Field snapshots, checkpoints, run manifests and JSON reports.

Snapshot layout: one ASCII header line

    NLCHNS1 kind=<scalar|vector> nx=<int> ny=<int> lx=<float> ly=<float> bc=<p|b>

followed by little-endian float64 values in C order: the cell array for a
scalar field, the x-face array then the y-face array for a vector field.
"""

from __future__ import annotations

import datetime
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .errors import FormatError
from .fields import Grid, ScalarField, VectorField
from .integrator import SimConfig, SimState, initial_state

MAGIC = "NLCHNS1"
_MAX_HEADER = 512
_LE = np.dtype("<f8")


def _header(kind, grid: Grid) -> bytes:
    bc = "p" if grid.periodic else "b"
    return (f"{MAGIC} kind={kind} nx={grid.nx} ny={grid.ny} lx={grid.lx!r} ly={grid.ly!r} bc={bc}\n").encode()


def encode_field(f) -> bytes:
    if isinstance(f, ScalarField):
        return _header("scalar", f.grid) + f.data.astype(_LE).tobytes()
    if isinstance(f, VectorField):
        return _header("vector", f.grid) + f.ux.astype(_LE).tobytes() + f.uy.astype(_LE).tobytes()
    raise TypeError(f"cannot encode {type(f).__name__}")


def _parse_header(buf: bytes):
    end = buf.find(b"\n", 0, _MAX_HEADER)
    if end < 0:
        raise FormatError("no header line", min(len(buf), _MAX_HEADER))
    try:
        line = buf[:end].decode("ascii")
    except UnicodeDecodeError as exc:
        raise FormatError("header is not ASCII", exc.start) from None
    tokens = line.split(" ")
    if tokens[0] != MAGIC:
        raise FormatError(f"bad magic {tokens[0]!r}", 0)
    want = ("kind", "nx", "ny", "lx", "ly", "bc")
    vals = {}
    pos = len(tokens[0]) + 1
    for name, tok in zip(want, tokens[1:]):
        k, _, v = tok.partition("=")
        if k != name or not v:
            raise FormatError(f"expected {name}=..., got {tok!r}", pos)
        vals[k] = (v, pos)
        pos += len(tok) + 1
    if len(tokens) != len(want) + 1:
        raise FormatError(f"header has {len(tokens) - 1} fields, expected {len(want)}", pos)
    kind, kpos = vals["kind"]
    if kind not in ("scalar", "vector"):
        raise FormatError(f"unknown kind {kind!r}", kpos)
    try:
        nx, ny = int(vals["nx"][0]), int(vals["ny"][0])
        lx, ly = float(vals["lx"][0]), float(vals["ly"][0])
    except ValueError:
        raise FormatError("bad grid size in header", vals["nx"][1]) from None
    bc, bpos = vals["bc"]
    if bc not in ("p", "b"):
        raise FormatError(f"unknown boundary mode {bc!r}", bpos)
    try:
        grid = Grid(nx, ny, lx, ly, "periodic" if bc == "p" else "box")
    except ValueError as exc:
        raise FormatError(f"invalid grid: {exc}", vals["nx"][1]) from None
    return kind, grid, end + 1


def decode_field(buf: bytes, grid: Grid | None = None):
    """Inverse of ``encode_field``; ``grid`` (optional) must match the header."""
    kind, g, start = _parse_header(buf)
    if grid is not None and grid != g:
        raise FormatError(f"snapshot grid {g} does not match {grid}", 0)
    shapes = [g.shape] if kind == "scalar" else [(g.nx + 1, g.ny), (g.nx, g.ny + 1)]
    need = sum(a * b for a, b in shapes) * 8
    have = len(buf) - start
    if have != need:
        raise FormatError(f"payload has {have} bytes, expected {need}", start + min(have, need))
    arrays, off = [], start
    for shp in shapes:
        n = shp[0] * shp[1]
        arrays.append(np.frombuffer(buf, _LE, n, off).reshape(shp).astype(float))
        off += 8 * n
    flat = np.concatenate([a.ravel() for a in arrays])
    bad = np.flatnonzero(~np.isfinite(flat))
    if bad.size:
        raise FormatError("payload contains non-finite values", start + 8 * int(bad[0]))
    if kind == "scalar":
        return ScalarField(g, arrays[0])
    return VectorField(g, arrays[0], arrays[1])


def write_snapshot(path, f):
    with open(path, "wb") as fh:
        fh.write(encode_field(f))


def read_snapshot(path, grid: Grid | None = None):
    with open(path, "rb") as fh:
        return decode_field(fh.read(), grid)


# --------------------------------------------------------------------------
# checkpoints

CHECKPOINT_FILES = ("phi.snap", "u.snap", "checkpoint.txt")


def write_checkpoint(directory, state: SimState, cfg_hash: str):
    """Two snapshots (phi, u) plus a manifest line ``t=... step=... config_hash=...``."""
    os.makedirs(directory, exist_ok=True)
    write_snapshot(os.path.join(directory, "phi.snap"), state.phi)
    write_snapshot(os.path.join(directory, "u.snap"), state.u)
    with open(os.path.join(directory, "checkpoint.txt"), "w", encoding="ascii") as fh:
        fh.write(f"t={float(state.t)!r} step={int(state.step)} config_hash={cfg_hash}\n")


def read_checkpoint_line(directory) -> dict:
    path = os.path.join(directory, "checkpoint.txt")
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        items = dict(tok.split("=", 1) for tok in raw.decode("ascii").split())
        return {"t": float(items["t"]), "step": int(items["step"]), "config_hash": items["config_hash"]}
    except (UnicodeDecodeError, ValueError, KeyError):
        raise FormatError("malformed checkpoint line", 0) from None


def read_checkpoint(directory, config: SimConfig, cfg_hash: str | None = None) -> SimState:
    """Restore a state.  The chemical potential is recomputed from phi, so a
    restarted run reproduces the uninterrupted one bit for bit."""
    meta = read_checkpoint_line(directory)
    if cfg_hash is not None and meta["config_hash"] != cfg_hash:
        raise FormatError(f"checkpoint was written for config {meta['config_hash'][:12]}...", 0)
    phi = read_snapshot(os.path.join(directory, "phi.snap"), config.grid)
    u = read_snapshot(os.path.join(directory, "u.snap"), config.grid)
    if not isinstance(phi, ScalarField) or not isinstance(u, VectorField):
        raise FormatError("checkpoint snapshots have the wrong kinds", 0)
    state = initial_state(config, u, phi)
    state.t = meta["t"]
    state.step = meta["step"]
    return state


# --------------------------------------------------------------------------
# manifests and reports


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    regime: str
    constants: dict
    code_version: str = __version__
    command: str = "run"
    started: str = field(default_factory=_now)
    finished: str | None = None

    def to_dict(self):
        return asdict(self)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)  # "inf", "nan" as strings keep the file strict JSON
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def dumps_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=1, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_json(obj))


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
