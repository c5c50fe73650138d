"""Experiments built from the integrator and diagnostics: twin trajectories,
refinement ladders, long runs and batches."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import stats

from . import elliptic
from .diagnostics import (ContractionMetrics, DissipativeFit, TrajectoryLog, contraction_metrics,
                          dissipative_check)
from .errors import ConfigError, TrajectoryTooShort
from .fields import Grid, ScalarField, VectorField, inner
from .integrator import SimConfig, SimState, advance, forcing_field, initial_state, make_initial

PERTURBATIONS = ("none", "velocity", "phase", "phase_meanzero", "mean_shift", "forcing")


# --------------------------------------------------------------------------
# seeds and trajectories


def child_seeds(root: int, n: int):
    """Deterministic child seeds: SeedSequence(root).spawn(n), first 32-bit word of each."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(root).spawn(n)]


def simulate(config: SimConfig, state: SimState | None = None, n_steps: int | None = None,
             stride: int | None = None, snapshot_every: int | None = None, log: TrajectoryLog | None = None,
             hooks=()):
    """Advance from ``state`` (default: the configured initial data) and log every ``stride`` steps."""
    state = initial_state(config) if state is None else state
    n_steps = config.n_steps if n_steps is None else n_steps
    stride = stride or config.stride
    log = TrajectoryLog() if log is None else log
    if not log.times:
        log.record(state, config, snapshot=bool(snapshot_every))
    done = 0
    while done < n_steps:
        k = min(stride, n_steps - done)
        state, _ = advance(state, config, k, hooks=hooks)
        done += k
        snap = bool(snapshot_every) and (state.step % snapshot_every == 0)
        log.record(state, config, snapshot=snap)
    return state, log


def trajectory(config: SimConfig, state: SimState, n_steps: int, stride: int):
    """States sampled every ``stride`` steps (the initial one included)."""
    out = [state]
    done = 0
    while done < n_steps:
        k = min(stride, n_steps - done)
        state, _ = advance(state, config, k)
        done += k
        out.append(state)
    return out


# --------------------------------------------------------------------------
# twins


@dataclass(frozen=True)
class TwinExperiment:
    """Two trajectories from nearby data.

    ``kind``: ``none``, ``velocity`` (solenoidal noise), ``phase`` (noise with a
    mean part), ``phase_meanzero``, ``mean_shift`` (phi + eps), ``forcing``
    (forcing amplitude + eps, same initial data).  ``eps`` is the L2 size of
    the perturbation.
    """

    base: SimConfig
    kind: str = "phase_meanzero"
    eps: float = 1e-6
    horizon: float = 1.0
    stride: int = 10
    seed: int = 12345

    def __post_init__(self):
        if self.kind not in PERTURBATIONS:
            raise ValueError(f"unknown perturbation {self.kind!r}")


def _unit_phase_noise(grid, rng, mean_zero=True):
    from .integrator import _smooth_random

    f = _smooth_random(grid, rng, 4, 2.0)
    if not mean_zero:
        f = f + 0.5 * np.abs(f).max()
    f = ScalarField(grid, f)
    return f * (1.0 / math.sqrt(inner(f, f)))


def _unit_velocity_noise(grid, rng):
    from .integrator import InitSpec

    cfg = SimConfig(grid=grid, init=InitSpec(u="random_solenoidal", u_amp=1.0), seed=int(rng.integers(2 ** 31)))
    u, _ = make_initial(cfg)
    return u * (1.0 / math.sqrt(inner(u, u)))


def perturb(exp: TwinExperiment, state: SimState):
    """Second initial state and config for a twin experiment."""
    cfg = exp.base
    rng = np.random.default_rng(exp.seed)
    g = cfg.grid
    u, phi = state.u, state.phi
    cfg2 = cfg
    if exp.kind == "velocity":
        u = u + _unit_velocity_noise(g, rng) * exp.eps
    elif exp.kind in ("phase", "phase_meanzero"):
        phi = phi + _unit_phase_noise(g, rng, exp.kind == "phase_meanzero") * exp.eps
    elif exp.kind == "mean_shift":
        phi = phi + exp.eps
    elif exp.kind == "forcing":
        f = cfg.forcing
        if f.family == "zero":
            f = replace(f, family="fourier", amplitude=exp.eps)
        elif f.family == "fourier":
            f = replace(f, amplitude=f.amplitude + exp.eps)
        else:
            f = replace(f, vector=(f.vector[0] + exp.eps, f.vector[1]))
        cfg2 = replace(cfg, forcing=f)
    if cfg.potential.singular and np.abs(phi.data).max() >= 1:
        raise ConfigError("perturbed phase leaves (-1, 1)")
    s2 = initial_state(cfg2, u, phi)
    return s2, cfg2


@dataclass
class TwinReport:
    kind: str
    eps: float
    metric: str
    times: list
    d: list
    metrics: list
    kappa_fit: float
    envelope: list
    envelope_pass: bool
    integral_lhs: list
    beta_integral: list
    forcing_fit: float | None = None
    mean_gap: list = field(default_factory=list)

    def to_dict(self):
        out = asdict(self)
        out["metrics"] = [asdict(m) for m in self.metrics]
        return out


def _metric_name(config):
    return "d_weak" if config.viscosity.constant else "d_strong"


def _trapz_cumulative(t, y):
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    out = np.zeros_like(t)
    if t.size > 1:
        out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))
    return out


def kappa_envelope(times, d):
    """kappa = max_t log(d(t)/d(0))/t; the envelope d <= d(0) e^{kappa t} is then
    checked sample by sample."""
    t = np.asarray(times, float)
    d = np.asarray(d, float)
    if d[0] <= 0:
        if np.all(d == 0):
            return 0.0, [True] * len(d)
        return math.inf, [bool(x == 0) for x in d]
    with np.errstate(divide="ignore"):
        rates = np.where((t > 0) & (d > 0), np.log(np.maximum(d, 1e-300) / d[0]) / np.where(t > 0, t, 1), -np.inf)
    kappa = float(max(rates.max(), 0.0)) if t.size > 1 else 0.0
    env = [bool(di <= d[0] * math.exp(kappa * ti) * (1 + 1e-12)) for ti, di in zip(t, d)]
    return kappa, env


def run_twin(exp: TwinExperiment, base_traj=None) -> TwinReport:
    """Integrate both trajectories with identical settings and compare them.

    ``base_traj`` may carry the unperturbed sampled states (reused across a
    scan in eps).
    """
    cfg = exp.base
    n = int(round(exp.horizon / cfg.dt))
    if base_traj is None:
        base_traj = trajectory(cfg, initial_state(cfg), n, exp.stride)
    s2, cfg2 = perturb(exp, base_traj[0])
    traj2 = trajectory(cfg2, s2, n, exp.stride)
    ms = [contraction_metrics(a, b, cfg) for a, b in zip(base_traj, traj2)]
    times = [s.t for s in base_traj]
    name = _metric_name(cfg)
    d = [getattr(m, name) for m in ms]
    lhs_rate = [m.dphi_l2 + m.dgrad_u for m in ms]
    beta = [m.beta_integrand for m in ms]
    forcing_fit = None
    if exp.kind == "forcing":
        dh = forcing_field(cfg2.forcing, cfg.grid) - forcing_field(cfg.forcing, cfg.grid)
        dh = elliptic.leray_project(dh)[0]
        hnorm2 = inner(dh, dh)
        t = np.array(times)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(t > 0, np.array(d) / (hnorm2 * np.maximum(t, 1e-300)), 0.0)
        forcing_fit = float(np.max(ratios))
        kappa, env = 0.0, [bool(np.isfinite(r)) for r in ratios]
    else:
        kappa, env = kappa_envelope(times, d)
    return TwinReport(exp.kind, exp.eps, name, times, d, ms, kappa, env, bool(all(env) and math.isfinite(kappa)),
                      list(_trapz_cumulative(times, lhs_rate)), list(_trapz_cumulative(times, beta)),
                      forcing_fit, [m.mean_gap for m in ms])


@dataclass
class CollapseReport:
    eps: list
    times: list
    scaled: list  # d_eps(t) / eps^2 per eps
    spread: float  # max over t of (max/min - 1) across eps
    tol: float
    passed: bool
    reports: list

    def to_dict(self):
        return {"eps": self.eps, "times": self.times, "scaled": self.scaled, "spread": self.spread,
                "tol": self.tol, "passed": self.passed,
                "kappa_fit": [r.kappa_fit for r in self.reports],
                "envelope_pass": [r.envelope_pass for r in self.reports]}


def scaling_collapse(base: SimConfig, kind="phase_meanzero", eps_list=(1e-4, 1e-6, 1e-8), horizon=1.0,
                     stride=10, seed=12345, tol=0.05) -> CollapseReport:
    """d_eps(t)/eps^2 for several eps; they collapse in the linearised regime."""
    n = int(round(horizon / base.dt))
    traj = trajectory(base, initial_state(base), n, stride)
    reports = [run_twin(TwinExperiment(base, kind, e, horizon, stride, seed), traj) for e in eps_list]
    scaled = np.array([np.array(r.d) / e ** 2 for r, e in zip(reports, eps_list)])
    with np.errstate(divide="ignore", invalid="ignore"):
        spread = float(np.nanmax(scaled.max(axis=0) / scaled.min(axis=0) - 1.0))
    passed = bool(spread <= tol and all(r.envelope_pass for r in reports))
    return CollapseReport(list(eps_list), reports[0].times, scaled.tolist(), spread, tol, passed, reports)


# --------------------------------------------------------------------------
# refinement


def restrict_scalar(fine: np.ndarray) -> np.ndarray:
    """2x2 cell averaging onto the next coarser grid."""
    return 0.25 * (fine[0::2, 0::2] + fine[1::2, 0::2] + fine[0::2, 1::2] + fine[1::2, 1::2])


def restrict_vector(u: VectorField, coarse: Grid) -> VectorField:
    ux = 0.5 * (u.ux[0::2, 0::2] + u.ux[0::2, 1::2])
    uy = 0.5 * (u.uy[0::2, 0::2] + u.uy[1::2, 0::2])
    return VectorField(coarse, ux, uy)


@dataclass(frozen=True)
class RefinementStudy:
    """``kind='space'``: grids with nx in ``levels`` (fixed dt); ``kind='time'``:
    time steps in ``levels`` (fixed grid).  Levels must refine strictly."""

    base: SimConfig
    kind: str = "space"
    levels: tuple = (64, 128, 256)
    t_end: float = 0.05

    def __post_init__(self):
        if len(self.levels) < 3:
            raise ValueError("a refinement ladder needs at least 3 levels")
        lv = list(self.levels)
        if self.kind == "space":
            if any(b != 2 * a for a, b in zip(lv, lv[1:])):
                raise ValueError("spatial levels must double")
        elif self.kind == "time":
            if any(not b < a for a, b in zip(lv, lv[1:])):
                raise ValueError("time steps must decrease strictly")
        else:
            raise ValueError(f"unknown refinement kind {self.kind!r}")


@dataclass
class RefinementTable:
    kind: str
    levels: list
    diff_phi: list  # ||phi_l - R phi_{l+1}||
    diff_u: list
    order_phi: list
    order_u: list
    err_vs_finest: list

    def to_dict(self):
        return asdict(self)


def _level_config(study, lv):
    b = study.base
    if study.kind == "space":
        g = b.grid
        return replace(b, grid=Grid(lv, int(lv * g.ny // g.nx), g.lx, g.ly, g.bc))
    return replace(b, dt=float(lv))


def _restricted_initial(study):
    """Initial data per level: generated once on the finest level and restricted
    down, so every level starts from the same data."""
    cfgs = [_level_config(study, lv) for lv in study.levels]
    u, phi = make_initial(cfgs[-1])
    out = [None] * len(cfgs)
    for k in range(len(cfgs) - 1, -1, -1):
        g = cfgs[k].grid
        if study.kind == "space":
            while phi.grid != g:
                coarse = Grid(phi.grid.nx // 2, phi.grid.ny // 2, g.lx, g.ly, g.bc)
                phi = ScalarField(coarse, restrict_scalar(phi.data))
                u = restrict_vector(u, coarse)
        out[k] = initial_state(cfgs[k], u, phi)
    return cfgs, out


def run_refinement(study: RefinementStudy) -> RefinementTable:
    finals = []
    for cfg, s0 in zip(*_restricted_initial(study)):
        n = int(round(study.t_end / cfg.dt))
        s, _ = advance(s0, cfg, n)
        finals.append(s)
    dphi, du, evf = [], [], []
    for k in range(len(finals) - 1):
        a, b = finals[k], finals[k + 1]
        if study.kind == "space":
            pb = ScalarField(a.phi.grid, restrict_scalar(b.phi.data))
            ub = restrict_vector(b.u, a.phi.grid)
        else:
            pb, ub = b.phi, b.u
        e = a.phi - pb
        dphi.append(math.sqrt(inner(e, e)))
        w = a.u - ub
        du.append(math.sqrt(inner(w, w)))
    fin = finals[-1]
    for k in range(len(finals)):
        p = fin.phi.data
        a = finals[k]
        if study.kind == "space":
            while p.shape != a.phi.grid.shape:
                p = restrict_scalar(p)
        e = a.phi - p
        evf.append(math.sqrt(inner(e, e)))

    def orders(x):
        r = 2.0 if study.kind == "space" else None
        out = []
        for k in range(len(x) - 1):
            ratio = r if r else study.levels[k] / study.levels[k + 1]
            out.append(math.log(x[k] / x[k + 1]) / math.log(ratio) if x[k + 1] > 0 and x[k] > 0 else math.nan)
        return out

    lv = list(study.levels)
    return RefinementTable(study.kind, lv, dphi, du, orders(dphi), orders(du), evf)


# --------------------------------------------------------------------------
# long runs


@dataclass
class LongtimeReport:
    fit: DissipativeFit
    t_star: float
    plateau_grad_u: float
    plateau_grad_phi_l4: float
    plateau_marker: float  # late max of ||grad u|| + ||phi||_{L4} + ||grad phi||_{L4}
    log: TrajectoryLog = field(repr=False)

    def to_dict(self):
        return {"k": self.fit.k, "K": self.fit.K, "ok": self.fit.ok, "floor": self.fit.floor,
                "t_star": self.t_star, "plateau_grad_u": self.plateau_grad_u,
                "plateau_grad_phi_l4": self.plateau_grad_phi_l4, "plateau_marker": self.plateau_marker,
                "times": self.log.times, "E_total": self.log.series("total").tolist()}


def plateau_time(t, series_list, margin=0.05, late_fraction=0.5):
    """Plateaus (max over the late window) and the first time after which every
    series stays below (1 + margin) times its plateau."""
    t = np.asarray(t, float)
    late = t >= t[0] + (1 - late_fraction) * (t[-1] - t[0])
    levels = []
    ok = np.ones(t.size, dtype=bool)
    for s in series_list:
        s = np.asarray(s, float)
        P = float(s[late].max())
        levels.append(P)
        ok &= s <= P * (1 + margin) + 1e-12
    # first index from which ok holds to the end
    idx = t.size - 1
    while idx > 0 and ok[idx - 1]:
        idx -= 1
    return float(t[idx] - t[0]), levels


def run_longtime(config: SimConfig, t_end: float | None = None, stride: int = 10, min_t_end: float = 100.0,
                 state: SimState | None = None) -> LongtimeReport:
    """Autonomous run with the dissipative fit and plateau markers.

    t* is the first time after which ||grad u|| and ||grad phi||_{L4} both
    stay below 1.05 times their late-window maxima.  The combined marker
    ||grad u|| + ||phi||_{W^{1,4}} is reported as a single plateau level for
    comparing runs.
    """
    t_end = config.t_end if t_end is None else t_end
    if t_end < min_t_end:
        raise TrajectoryTooShort(f"t_end={t_end:g} < {min_t_end:g}")
    cfg = replace(config, t_end=t_end)
    _, log = simulate(cfg, state=state, stride=stride)
    fit = dissipative_check(log, cfg, min_t=min(50.0, min_t_end / 2))
    gu = [n.h1_semi for n in log.norms_u]
    gp = log.grad_phi_l4
    t_star, (pu, pp) = plateau_time(log.t, [gu, gp])
    marker = np.array(gu) + np.array([n.l4 for n in log.norms_phi]) + np.array(gp)
    _, (pm,) = plateau_time(log.t, [marker])
    return LongtimeReport(fit, t_star, pu, pp, pm, log)


# --------------------------------------------------------------------------
# batches


def kappa_beta_batch(configs, kind="phase_meanzero", eps=1e-6, horizon=0.5, stride=10, root_seed=0):
    """kappa_fit and the time integral of beta over a batch; Spearman correlation.

    Child seeds are derived from ``root_seed`` with :func:`child_seeds` and
    results are kept in config order.
    """
    seeds = child_seeds(root_seed, len(configs))
    kappas, betas = [], []
    for cfg, sd in zip(configs, seeds):
        rep = run_twin(TwinExperiment(cfg, kind, eps, horizon, stride, sd))
        kappas.append(rep.kappa_fit)
        betas.append(rep.beta_integral[-1])
    rho = float(stats.spearmanr(kappas, betas).statistic)
    return {"seeds": seeds, "kappa_fit": kappas, "beta_integral": betas, "spearman": rho}


def mean_shift_gaps(base: SimConfig, deltas=(0.0, 1e-4, 1e-3), horizon=0.5, stride=10):
    """d(t) at the final sample for each mean shift delta."""
    n = int(round(horizon / base.dt))
    traj = trajectory(base, initial_state(base), n, stride)
    out = []
    for dlt in deltas:
        rep = run_twin(TwinExperiment(base, "mean_shift", dlt, horizon, stride), traj)
        out.append(rep.d[-1])
    return out
