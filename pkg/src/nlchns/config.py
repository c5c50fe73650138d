"""Flat ``section.key=value`` run configurations.

One assignment per line, ``#`` starts a comment.  Every key has a default, so
an empty file is a valid (regular, periodic, constant viscosity) run.  The
canonical form lists every key in sorted order with shortest round-trip
floats; its sha256 is the configuration hash.
"""

from __future__ import annotations

import hashlib

from .constitutive import KernelSpec, MobilitySpec, PotentialSpec, ViscositySpec
from .errors import ConfigError
from .fields import Grid
from .integrator import ForcingSpec, InitSpec, SchemeSpec, SimConfig

_ALIASES = {
    ("viscosity.family", "const"): "constant",
    ("viscosity.family", "variable"): "lipschitz",
    ("potential.family", "double_well"): "doublewell",
    ("potential.family", "logarithmic"): "log",
    ("mobility.family", "const"): "constant",
    ("grid.bc", "p"): "periodic",
    ("grid.bc", "b"): "box",
}

# key -> (parser, default); None defaults mean "not set"
_FLOAT, _INT, _STR, _BOOL = "float", "int", "str", "bool"
_OPTFLOAT, _FLOATS, _INTS = "optfloat", "floats", "ints"

_KEYS = {
    "grid.nx": (_INT, 32), "grid.ny": (_INT, 32), "grid.lx": (_FLOAT, 1.0), "grid.ly": (_FLOAT, 1.0),
    "grid.bc": (_STR, "periodic"),
    "kernel.family": (_STR, "gaussian"), "kernel.eps": (_FLOAT, 0.05), "kernel.mass": (_FLOAT, 5.0),
    "kernel.delta": (_FLOAT, 0.05), "kernel.c": (_FLOAT, 1.0), "kernel.rho0": (_OPTFLOAT, None),
    "kernel.radius": (_OPTFLOAT, None), "kernel.kappa": (_FLOAT, 10.0),
    "potential.family": (_STR, "doublewell"), "potential.coeffs": (_FLOATS, ()),
    "potential.theta": (_FLOAT, 1.0), "potential.thetac": (_FLOAT, 2.0), "potential.c0": (_FLOAT, 0.0),
    "mobility.family": (_STR, "constant"), "mobility.m0": (_FLOAT, 0.01), "mobility.k1": (_FLOAT, 0.01),
    "viscosity.family": (_STR, "constant"), "viscosity.nu": (_FLOAT, 0.1), "viscosity.nu1": (_FLOAT, 0.05),
    "viscosity.nu2": (_FLOAT, 0.2),
    "time.dt": (_FLOAT, 1e-3), "time.t_end": (_FLOAT, 1.0), "time.stride": (_INT, 1),
    "time.dt_min": (_FLOAT, 1e-8),
    "forcing.family": (_STR, "zero"), "forcing.hx": (_FLOAT, 0.0), "forcing.hy": (_FLOAT, 0.0),
    "forcing.k": (_INT, 1), "forcing.amplitude": (_FLOAT, 0.0),
    "init.u": (_STR, "zero"), "init.u_amp": (_FLOAT, 1.0), "init.u_kmax": (_INT, 3),
    "init.phi": (_STR, "constant"), "init.phi_mean": (_FLOAT, 0.0), "init.phi_amp": (_FLOAT, 0.1),
    "init.phi_bound": (_FLOAT, 0.9), "init.phi_kmax": (_INT, 4), "init.mode": (_INTS, (1, 0)),
    "scheme.stab": (_OPTFLOAT, None), "scheme.korteweg": (_STR, "gauge"), "scheme.cfl": (_FLOAT, 0.5),
    "scheme.newton_tol": (_FLOAT, 1e-12), "scheme.newton_maxit": (_INT, 50), "scheme.ch": (_BOOL, True),
    "scheme.ns": (_BOOL, True), "scheme.viscous": (_STR, "auto"),
    "elliptic.tol": (_FLOAT, 1e-11), "elliptic.method": (_STR, "spectral"),
    "output.snapshot_every": (_INT, 0), "output.checkpoint_every": (_INT, 0),
    "seed": (_INT, 0),
}


def _parse_value(key, kind, text):
    text = text.strip()
    try:
        if kind == _FLOAT:
            return float(text)
        if kind == _OPTFLOAT:
            return None if text.lower() in ("", "none", "auto") else float(text)
        if kind == _INT:
            v = float(text)
            if v != int(v):
                raise ValueError
            return int(v)
        if kind == _BOOL:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if kind == _FLOATS:
            return tuple(float(x) for x in text.split(",") if x.strip())
        if kind == _INTS:
            return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind}") from None
    low = text.lower()
    return _ALIASES.get((key, low), low) if key.endswith(("family", ".bc", ".u", ".phi")) else text


def _format_value(kind, v):
    if v is None:
        return "none"
    if kind in (_FLOAT, _OPTFLOAT):
        return repr(float(v))
    if kind == _BOOL:
        return "true" if v else "false"
    if kind == _FLOATS:
        return ",".join(repr(float(x)) for x in v)
    if kind == _INTS:
        return ",".join(str(int(x)) for x in v)
    return str(v)


def parse_flat(text: str) -> dict:
    """Parse ``key=value`` lines into a dict of typed values (defaults filled in)."""
    values = {k: d for k, (_, d) in _KEYS.items()}
    seen = set()
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        seen.add(key)
        values[key] = _parse_value(key, _KEYS[key][0], val)
    return values


def apply_overrides(values: dict, overrides) -> dict:
    """Apply ``key=value`` strings (command-line ``--set``) on top of parsed values."""
    out = dict(values)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, val = (s.strip() for s in item.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"unknown key {key!r}")
        out[key] = _parse_value(key, _KEYS[key][0], val)
    return out


def to_config(values: dict) -> SimConfig:
    """Build a SimConfig from typed flat values; constructor errors become ConfigError."""
    v = values
    try:
        grid = Grid(v["grid.nx"], v["grid.ny"], v["grid.lx"], v["grid.ly"], v["grid.bc"])
        kernel = KernelSpec(v["kernel.family"], eps=v["kernel.eps"], mass=v["kernel.mass"], delta=v["kernel.delta"],
                            c=v["kernel.c"], rho0=v["kernel.rho0"], radius=v["kernel.radius"],
                            kappa=v["kernel.kappa"])
        pot = PotentialSpec(v["potential.family"], coeffs=v["potential.coeffs"], theta=v["potential.theta"],
                            thetac=v["potential.thetac"], c0=v["potential.c0"])
        mob = MobilitySpec(v["mobility.family"], m0=v["mobility.m0"], k1=v["mobility.k1"])
        visc = ViscositySpec(v["viscosity.family"], nu=v["viscosity.nu"], nu1=v["viscosity.nu1"],
                             nu2=v["viscosity.nu2"])
        forcing = ForcingSpec(v["forcing.family"], vector=(v["forcing.hx"], v["forcing.hy"]),
                              wavenumber=v["forcing.k"], amplitude=v["forcing.amplitude"])
        if len(v["init.mode"]) != 2:
            raise ValueError("init.mode needs two integers")
        init = InitSpec(u=v["init.u"], u_amp=v["init.u_amp"], u_kmax=v["init.u_kmax"], phi=v["init.phi"],
                        phi_mean=v["init.phi_mean"], phi_amp=v["init.phi_amp"], phi_bound=v["init.phi_bound"],
                        phi_kmax=v["init.phi_kmax"], mode=v["init.mode"])
        scheme = SchemeSpec(stab=v["scheme.stab"], korteweg=v["scheme.korteweg"], cfl=v["scheme.cfl"],
                            dt_min=v["time.dt_min"], newton_tol=v["scheme.newton_tol"],
                            newton_maxit=v["scheme.newton_maxit"], ch=v["scheme.ch"], ns=v["scheme.ns"],
                            viscous=v["scheme.viscous"], poisson=v["elliptic.method"])
        return SimConfig(grid=grid, kernel=kernel, potential=pot, mobility=mob, viscosity=visc, dt=v["time.dt"],
                         t_end=v["time.t_end"], forcing=forcing, init=init, scheme=scheme, tol=v["elliptic.tol"],
                         seed=v["seed"], stride=v["time.stride"])
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def from_config(config: SimConfig, output=None) -> dict:
    """Flat values of a SimConfig (inverse of ``to_config``)."""
    g, k, p, m, nu = config.grid, config.kernel, config.potential, config.mobility, config.viscosity
    f, i, s = config.forcing, config.init, config.scheme
    v = {
        "grid.nx": g.nx, "grid.ny": g.ny, "grid.lx": g.lx, "grid.ly": g.ly, "grid.bc": g.bc,
        "kernel.family": k.family, "kernel.eps": k.eps, "kernel.mass": k.mass, "kernel.delta": k.delta,
        "kernel.c": k.c, "kernel.rho0": k.rho0, "kernel.radius": k.radius, "kernel.kappa": k.kappa,
        "potential.family": p.family, "potential.coeffs": p.coeffs, "potential.theta": p.theta,
        "potential.thetac": p.thetac, "potential.c0": p.c0,
        "mobility.family": m.family, "mobility.m0": m.m0, "mobility.k1": m.k1,
        "viscosity.family": nu.family, "viscosity.nu": nu.nu, "viscosity.nu1": nu.nu1, "viscosity.nu2": nu.nu2,
        "time.dt": config.dt, "time.t_end": config.t_end, "time.stride": config.stride, "time.dt_min": s.dt_min,
        "forcing.family": f.family, "forcing.hx": f.vector[0], "forcing.hy": f.vector[1],
        "forcing.k": f.wavenumber, "forcing.amplitude": f.amplitude,
        "init.u": i.u, "init.u_amp": i.u_amp, "init.u_kmax": i.u_kmax, "init.phi": i.phi,
        "init.phi_mean": i.phi_mean, "init.phi_amp": i.phi_amp, "init.phi_bound": i.phi_bound,
        "init.phi_kmax": i.phi_kmax, "init.mode": tuple(i.mode),
        "scheme.stab": s.stab, "scheme.korteweg": s.korteweg, "scheme.cfl": s.cfl,
        "scheme.newton_tol": s.newton_tol, "scheme.newton_maxit": s.newton_maxit, "scheme.ch": s.ch,
        "scheme.ns": s.ns, "scheme.viscous": s.viscous,
        "elliptic.tol": config.tol, "elliptic.method": s.poisson,
        "output.snapshot_every": 0, "output.checkpoint_every": 0,
        "seed": config.seed,
    }
    v.update(output or {})
    return v


def serialize(values: dict) -> str:
    """Canonical text: every key, sorted, shortest round-trip floats."""
    return "".join(f"{k}={_format_value(_KEYS[k][0], values[k])}\n" for k in sorted(_KEYS))


def config_hash(values_or_config) -> str:
    """sha256 of the canonical serialisation of the simulation keys (output keys excluded)."""
    v = values_or_config
    if isinstance(v, SimConfig):
        v = from_config(v)
    v = dict(v, **{"output.snapshot_every": 0, "output.checkpoint_every": 0})
    return hashlib.sha256(serialize(v).encode()).hexdigest()


def checkpoint_hash(values_or_config) -> str:
    """Hash of everything that affects the dynamics (t_end excluded, so a
    checkpoint can seed a longer run)."""
    v = values_or_config
    if isinstance(v, SimConfig):
        v = from_config(v)
    return config_hash(dict(v, **{"time.t_end": 0.0}))


def load(path) -> tuple[SimConfig, dict]:
    """Read a config file; returns (SimConfig, flat values)."""
    with open(path, encoding="utf-8") as fh:
        values = parse_flat(fh.read())
    return to_config(values), values


def loads(text: str, overrides=()) -> tuple[SimConfig, dict]:
    values = apply_overrides(parse_flat(text), overrides)
    return to_config(values), values


def with_values(config: SimConfig, **flat) -> SimConfig:
    """Copy of ``config`` with flat keys replaced, e.g. ``with_values(c, **{"grid.nx": 64})``."""
    return to_config(dict(from_config(config), **flat))


__all__ = ["parse_flat", "apply_overrides", "to_config", "from_config", "serialize", "config_hash", "checkpoint_hash", "load",
           "loads", "with_values"]
