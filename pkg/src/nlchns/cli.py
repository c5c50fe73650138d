"""Command-line entry points: run, twin, audit, opscheck, longtime, refine.

Exit codes: 0 ok, 2 configuration error, 3 numerical failure or failed
check, 4 I/O or file-format error.  ``NLCHNS_THREADS`` sets the number of
FFT workers (unset or 0: one worker, deterministic).
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np
import scipy.fft as sfft

from . import config as cfgmod
from . import io
from .constitutive import kernel_constants
from .diagnostics import energy, interaction_energy
from .errors import ConfigError, FormatError, NLCHNSError
from .fields import VectorField, divergence, norms
from .harness import (RefinementStudy, TwinExperiment, run_longtime, run_refinement, run_twin,
                      scaling_collapse, simulate)
from .integrator import SimConfig, SimState, _model, initial_state, validate

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def fft_workers(env=None) -> int:
    env = os.environ if env is None else env
    raw = env.get("NLCHNS_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"NLCHNS_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def _load(args):
    with open(args.config, encoding="utf-8") as fh:
        text = fh.read()
    return cfgmod.loads(text, getattr(args, "set", None) or ())


def _constants(config: SimConfig) -> dict:
    out = validate(config)
    kc = kernel_constants(config.kernel, config.grid)
    out.setdefault("a_star", kc["a_star"])
    out.setdefault("a_lower", kc["a_lower"])
    out["grad_J_L1"] = kc["grad_J_L1"]
    out["c0"] = config.potential.c0
    return out


def _prepare_out(path):
    os.makedirs(path, exist_ok=True)
    return path


def _write_config_copy(out, values):
    with open(os.path.join(out, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(cfgmod.serialize(values))


# --------------------------------------------------------------------------
# run


def cmd_run(args):
    config, values = _load(args)
    constants = _constants(config)
    out = _prepare_out(args.out)
    h = cfgmod.config_hash(values)
    hc = cfgmod.checkpoint_hash(values)
    manifest = io.RunManifest(h, config.seed, config.regime, constants, command="run")
    io.write_json(os.path.join(out, "manifest.json"), manifest.to_dict())
    _write_config_copy(out, values)

    state = io.read_checkpoint(args.restart, config, hc) if args.restart else initial_state(config)
    snap_every = values["output.snapshot_every"] or config.stride
    ckpt_every = values["output.checkpoint_every"]
    snapdir = os.path.join(out, "snapshots")
    os.makedirs(snapdir, exist_ok=True)

    def save(s):
        io.write_snapshot(os.path.join(snapdir, f"phi_{s.step:08d}.snap"), s.phi)
        io.write_snapshot(os.path.join(snapdir, f"u_{s.step:08d}.snap"), s.u)

    def hook(s, rep):
        if s.step % snap_every == 0:
            save(s)
        if ckpt_every and s.step % ckpt_every == 0:
            io.write_checkpoint(os.path.join(out, "checkpoint"), s, hc)

    if not args.restart:
        save(state)
    n_left = config.n_steps - state.step
    if n_left < 0:
        raise ConfigError(f"checkpoint step {state.step} is past the configured end ({config.n_steps} steps)")
    state, log = simulate(config, state=state, n_steps=n_left, stride=config.stride, hooks=(hook,))
    with open(os.path.join(out, "diagnostics.csv"), "w", encoding="utf-8") as fh:
        fh.write(log.to_csv())
    io.write_checkpoint(os.path.join(out, "checkpoint"), state, hc)
    manifest.finished = io._now()
    io.write_json(os.path.join(out, "manifest.json"), manifest.to_dict())
    print(f"run: {config.regime} t={state.t!r} steps={state.step} hash={h[:12]}")
    return EXIT_OK


# --------------------------------------------------------------------------
# twin


def cmd_twin(args):
    config, values = _load(args)
    _constants(config)
    out = _prepare_out(args.out)
    horizon = args.horizon if args.horizon is not None else config.t_end
    stride = args.stride or config.stride
    if args.mean_shift is not None:
        kind, eps = "mean_shift", args.mean_shift
    else:
        kind, eps = args.mode.replace("-", "_"), args.eps
    rep = run_twin(TwinExperiment(config, kind, eps, horizon, stride, args.seed))
    report = {"config_hash": cfgmod.config_hash(values), "twin": rep.to_dict()}
    if eps > 0 and kind in ("phase_meanzero", "phase", "velocity") and not args.no_collapse:
        coll = scaling_collapse(config, kind, (eps * 100, eps, eps / 100), horizon, stride, args.seed)
        report["collapse"] = coll.to_dict()
    io.write_json(os.path.join(out, "twin.json"), report)
    status = "pass" if rep.envelope_pass else "FAIL"
    print(f"twin: kind={kind} eps={eps!r} metric={rep.metric} d_end={rep.d[-1]:.6e} "
          f"kappa_fit={rep.kappa_fit:.6g} envelope={status}")
    if "collapse" in report:
        print(f"collapse: spread={report['collapse']['spread']:.4g} passed={report['collapse']['passed']}")
    return EXIT_OK if rep.envelope_pass else EXIT_NUMERIC


# --------------------------------------------------------------------------
# audit


def audit_state(state, config: SimConfig):
    """Recompute the stored-state invariants; returns rows (name, value, ok)."""
    rows = []
    phi, u = state.phi, state.u
    finite = bool(np.all(np.isfinite(phi.data)) and np.all(np.isfinite(u.ux)) and np.all(np.isfinite(u.uy)))
    rows.append(("finite", float(finite), finite))
    maxphi = float(np.abs(phi.data).max())
    bound_ok = maxphi < 1 if config.potential.singular or config.mobility.degenerate else True
    rows.append(("max|phi|", maxphi, bound_ok))
    rows.append(("mass", phi.mean(), True))
    div = float(np.abs(divergence(u).data).max())
    div_tol = 1e-10 * max(1.0, u.max_abs() / min(config.grid.hx, config.grid.hy))
    rows.append(("max|div u|", div, div <= div_tol))
    inter = interaction_energy(phi, state.a, config.kernel)
    rows.append(("E_int", inter, inter >= -1e-12 * max(1.0, norms(phi).l2 ** 2)))
    if finite and bound_ok:
        e = energy(state, config)
        rows += [("E_kin", e.kinetic, True), ("E_bulk", e.bulk, bool(np.isfinite(e.bulk))),
                 ("E_total", e.total, bool(np.isfinite(e.total))),
                 ("D_visc", e.dissipation_visc, e.dissipation_visc >= 0),
                 ("D_chem", e.dissipation_chem, e.dissipation_chem >= -1e-12)]
    else:
        rows.append(("E_total", math.nan, False))
    return rows


def cmd_audit(args):
    config, _ = _load(args)
    rows = []
    try:
        constants = _constants(config)
        rows += [(f"const.{k}", float(v), True) for k, v in sorted(constants.items())]
    except ConfigError as exc:
        print(f"assumption check failed: {exc}")
        rows.append(("assumptions", math.nan, False))
    if args.checkpoint:
        state = io.read_checkpoint(args.checkpoint, config)
    else:
        phi = io.read_snapshot(args.phi, config.grid)
        u = io.read_snapshot(args.u, config.grid) if args.u else None
        if not hasattr(phi, "data"):
            raise FormatError("--phi must hold a scalar snapshot", 0)
        if u is not None and not hasattr(u, "ux"):
            raise FormatError("--u must hold a vector snapshot", 0)
        u = VectorField.zeros(config.grid) if u is None else u
        if np.abs(phi.data).max() < 1 or not (config.potential.singular or config.mobility.degenerate):
            state = initial_state(config, u, phi)
        else:  # the chemical potential is undefined; keep the state for the report
            z = phi * 0.0
            state = SimState(0.0, u, phi, _model(config).a, z, z, 0)
    rows += audit_state(state, config)
    ok = all(r[2] for r in rows)
    for name, value, good in rows:
        print(f"{name:<24s} {value!r:>26s} {'ok' if good else 'VIOLATED'}")
    print("audit: " + ("all invariants hold" if ok else "invariant failure"))
    return EXIT_OK if ok else EXIT_NUMERIC


# --------------------------------------------------------------------------
# opscheck, longtime, refine


def cmd_opscheck(args):
    from .opscheck import broken_gradient, run_opscheck

    ops = {"gradient": broken_gradient} if args.inject_fault == "stencil" else None
    results = run_opscheck(cases=args.cases, seed=args.seed, ops=ops)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print("opscheck: " + ("all oracles agree" if ok else "oracle mismatch"))
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_longtime(args):
    config, values = _load(args)
    _constants(config)
    out = _prepare_out(args.out)
    rep = run_longtime(config, t_end=args.t_end, stride=args.stride or config.stride, min_t_end=args.min_t_end)
    io.write_json(os.path.join(out, "longtime.json"),
                  {"config_hash": cfgmod.config_hash(values), "longtime": rep.to_dict()})
    with open(os.path.join(out, "diagnostics.csv"), "w", encoding="utf-8") as fh:
        fh.write(rep.log.to_csv())
    print(f"longtime: k={rep.fit.k:.6g} K={rep.fit.K:.6g} t*={rep.t_star:.6g} marker={rep.plateau_marker:.6g}")
    return EXIT_OK if rep.fit.ok else EXIT_NUMERIC


def cmd_refine(args):
    config, values = _load(args)
    _constants(config)
    out = _prepare_out(args.out)
    conv = int if args.kind == "space" else float
    levels = tuple(conv(x) for x in args.levels.split(","))
    table = run_refinement(RefinementStudy(config, args.kind, levels, args.t_end))
    io.write_json(os.path.join(out, "refine.json"),
                  {"config_hash": cfgmod.config_hash(values), "refinement": table.to_dict()})
    for lv, dp, op in zip(table.levels, table.diff_phi, [None] + table.order_phi):
        print(f"level={lv!r} diff_phi={dp:.6e}" + (f" order={op:.4f}" if op is not None else ""))
    ok = all(b < a for a, b in zip(table.diff_phi, table.diff_phi[1:]))
    return EXIT_OK if ok else EXIT_NUMERIC


# --------------------------------------------------------------------------
# entry point


def build_parser():
    p = argparse.ArgumentParser(prog="nlchns", description="Nonlocal Cahn-Hilliard-Navier-Stokes simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("config", help="flat key=value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")

    r = sub.add_parser("run", help="integrate to t_end and write diagnostics")
    with_config(r)
    r.add_argument("--out", required=True)
    r.add_argument("--restart", metavar="CHECKPOINT_DIR")
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("twin", help="twin-trajectory experiment")
    with_config(t)
    t.add_argument("--out", required=True)
    t.add_argument("--mode", default="phase-meanzero",
                   choices=["phase-meanzero", "phase", "velocity", "forcing", "none"])
    t.add_argument("--eps", type=float, default=1e-6)
    t.add_argument("--mean-shift", type=float)
    t.add_argument("--horizon", type=float)
    t.add_argument("--stride", type=int)
    t.add_argument("--seed", type=int, default=12345)
    t.add_argument("--no-collapse", action="store_true", help="skip the eps-scaling section")
    t.set_defaults(func=cmd_twin)

    a = sub.add_parser("audit", help="recompute invariants of stored data")
    a.add_argument("--config", required=True)
    a.add_argument("--set", action="append", metavar="KEY=VALUE")
    src = a.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", metavar="DIR")
    src.add_argument("--phi", metavar="SNAPSHOT")
    a.add_argument("--u", metavar="SNAPSHOT")
    a.set_defaults(func=cmd_audit)

    o = sub.add_parser("opscheck", help="operator oracle suite")
    o.add_argument("--cases", type=int, default=10)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--inject-fault", choices=["stencil"], help=argparse.SUPPRESS)
    o.set_defaults(func=cmd_opscheck)

    lt = sub.add_parser("longtime", help="long autonomous run with the dissipative fit")
    with_config(lt)
    lt.add_argument("--out", required=True)
    lt.add_argument("--t-end", type=float)
    lt.add_argument("--stride", type=int)
    lt.add_argument("--min-t-end", type=float, default=100.0)
    lt.set_defaults(func=cmd_longtime)

    rf = sub.add_parser("refine", help="space or time refinement ladder")
    with_config(rf)
    rf.add_argument("--out", required=True)
    rf.add_argument("--kind", choices=["space", "time"], default="space")
    rf.add_argument("--levels", default="64,128,256", help="comma list: cell counts or time steps")
    rf.add_argument("--t-end", type=float, default=0.05)
    rf.set_defaults(func=cmd_refine)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with sfft.set_workers(fft_workers()):
            return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NLCHNSError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
