"""Energy, energy-identity residuals, the dissipative-estimate fit, twin
contraction metrics, trajectory logs and the empirical Hoelder modulus."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import elliptic
from .constitutive import (KernelSpec, chemical_potential, convolve, degenerate_flux_fields,
                           kernel_constants)
from .errors import (GridMismatch, InsufficientSnapshots, NonuniformSampling,
                     TrajectoryTooShort)
from .fields import NormSuite, ScalarField, VectorField, gradient, inner, lp_norm, norms

CSV_COLUMNS = ("t", "E_total", "E_kin", "E_int", "E_bulk", "mass", "maxphi", "diss_visc",
               "diss_chem", "work", "residual")


@dataclass(frozen=True)
class EnergyBreakdown:
    kinetic: float
    interaction: float
    bulk: float
    total: float
    work_rate: float = 0.0
    dissipation_visc: float = 0.0
    dissipation_chem: float = 0.0


def interaction_energy(phi: ScalarField, a: ScalarField, kernel: KernelSpec) -> float:
    """1/4 double integral of J(x-y)(phi(x)-phi(y))^2, via the expanded form."""
    return 0.5 * inner(a * phi, phi) - 0.5 * inner(phi, convolve(kernel, phi))


def energy(state, config, dissipation=True) -> EnergyBreakdown:
    from .integrator import _model

    model = _model(config)
    phi, u = state.phi, state.u
    kin = 0.5 * inner(u, u)
    inter = interaction_energy(phi, model.a, config.kernel)
    bulk = float(np.sum(config.potential.F(phi.data)) * phi.grid.cell_area)
    total = kin + inter + bulk
    if not dissipation:
        return EnergyBreakdown(kin, inter, bulk, total)
    work = inner(model.h, u)
    nu = config.viscosity(phi.data)
    dv = elliptic.viscous_dissipation(u, nu)
    mu = chemical_potential(phi, model.a, config.kernel, config.potential)
    gm = gradient(mu)
    mob = config.mobility
    if mob.degenerate:
        flux = degenerate_flux_fields(phi, model.a, config.kernel, config.potential, mob).flux
        dc = inner(gm, flux)
    else:
        dc = mob.m0 * inner(gm, gm)
    return EnergyBreakdown(kin, inter, bulk, total, work, dv, dc)


# --------------------------------------------------------------------------
# trajectory log


@dataclass
class TrajectoryLog:
    times: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    maxphi: list = field(default_factory=list)
    norms_u: list = field(default_factory=list)
    norms_phi: list = field(default_factory=list)
    norms_grad_mu: list = field(default_factory=list)
    grad_phi_l4: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)  # (t, phi array, ux, uy)

    def record(self, state, config, snapshot=False):
        if self.times and not state.t > self.times[-1]:
            raise NonuniformSampling("log times must increase strictly")
        e = energy(state, config)
        self.times.append(float(state.t))
        self.energies.append(e)
        self.mass.append(state.phi.mean())
        self.maxphi.append(float(np.abs(state.phi.data).max()))
        self.norms_u.append(norms(state.u))
        self.norms_phi.append(norms(state.phi))
        self.norms_grad_mu.append(norms(gradient(state.mu)))
        self.grad_phi_l4.append(lp_norm(gradient(state.phi), 4))
        if snapshot:
            self.snapshots.append((float(state.t), state.phi.data.copy(), state.u.ux.copy(),
                                   state.u.uy.copy()))

    def series(self, name):
        return np.array([getattr(e, name) for e in self.energies])

    @property
    def t(self):
        return np.array(self.times)

    def to_csv(self) -> str:
        R = np.full(len(self.times), np.nan)
        if len(self.times) >= 2:
            r, _ = energy_identity_residual(self)
            R[:-1] = r
        buf = io.StringIO()
        buf.write(",".join(CSV_COLUMNS) + "\n")
        for i, t in enumerate(self.times):
            e = self.energies[i]
            row = (t, e.total, e.kinetic, e.interaction, e.bulk, self.mass[i], self.maxphi[i],
                   e.dissipation_visc, e.dissipation_chem, e.work_rate, R[i])
            buf.write(",".join(repr(float(x)) for x in row) + "\n")
        return buf.getvalue()


def read_csv(text: str) -> dict:
    lines = text.strip("\n").split("\n")
    head = lines[0].split(",")
    if tuple(head) != CSV_COLUMNS:
        raise ValueError("unexpected CSV header")
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]]).reshape(-1, len(head))
    return {k: data[:, i] for i, k in enumerate(head)}


# --------------------------------------------------------------------------
# energy identity and dissipative estimate


def energy_identity_residual(log: TrajectoryLog):
    """R_n = (E_{n+1}-E_n)/dt + D_visc + D_chem - work, dissipation and work
    averaged over the interval end points.  Returns (series, mean |R|)."""
    t = log.t
    if t.size < 2:
        raise TrajectoryTooShort("need at least two samples")
    dts = np.diff(t)
    if np.ptp(dts) > 1e-9 * dts.mean():
        raise NonuniformSampling("energy residual needs uniform sampling")
    E = log.series("total")
    dv = log.series("dissipation_visc")
    dc = log.series("dissipation_chem")
    w = log.series("work_rate")
    mid = lambda x: 0.5 * (x[1:] + x[:-1])
    R = np.diff(E) / dts + mid(dv) + mid(dc) - mid(w)
    return R, float(np.mean(np.abs(R)))


@dataclass(frozen=True)
class DissipativeFit:
    k: float
    K: float
    ok: bool
    floor: float  # F(m0)|Omega|


def dissipative_check(log: TrajectoryLog, config, h_norm: float = 0.0, min_t: float = 50.0) -> DissipativeFit:
    """Fit E(t) <= E(0) exp(-k t) + F(m0)|Omega| + K.

    K is the smallest constant that bounds the second half of the run, k the
    largest rate for which the inequality then holds at every sample (inf if
    the inequality holds for every k).  ``h_norm`` is recorded only.
    """
    t = log.t
    if t.size < 3 or t[-1] - t[0] < min_t:
        raise TrajectoryTooShort(f"trajectory spans {t[-1] - t[0]:g} < {min_t:g}")
    E = log.series("total")
    m0 = log.mass[0]
    floor = float(config.potential.F(np.array(m0))) * config.grid.area
    late = t >= t[0] + 0.5 * (t[-1] - t[0])
    K = max(0.0, float(np.max(E[late] - floor)))
    C = floor + K
    E0 = E[0]
    k = math.inf
    for ti, Ei in zip(t[1:] - t[0], E[1:]):
        ex = Ei - C
        if ex <= 0:
            continue
        if E0 <= 0:
            k = -math.inf
            break
        k = min(k, -math.log(ex / E0) / float(ti))
    return DissipativeFit(float(k), K, bool(k > 0 and math.isfinite(K)), floor)


# --------------------------------------------------------------------------
# contraction metrics


@dataclass(frozen=True)
class ContractionMetrics:
    d_weak: float
    d_strong: float
    mean_gap: float
    beta_integrand: float
    du2: float = 0.0  # ||u2 - u1||^2
    dphi_l2: float = 0.0  # ||phi2 - phi1||^2
    dgrad_u: float = 0.0  # ||grad(u2 - u1)||^2


@lru_cache(maxsize=16)
def _grad_j_l1(kernel, grid):
    return kernel_constants(kernel, grid)["grad_J_L1"]


def contraction_metrics(stateA, stateB, config) -> ContractionMetrics:
    """Twin distances.  beta uses unit constants:
    ||grad J||_1^4 (||phi1||_4^4 + ||phi2||_4^4) + ||grad u2||^2 + 1 + ||phi1||_4^2 + ||u2||_4^4."""
    if stateA.phi.grid != stateB.phi.grid:
        raise GridMismatch("twin states live on different grids")
    du = stateB.u - stateA.u
    dphi = stateB.phi - stateA.phi
    du2 = inner(du, du)
    dphi2 = inner(dphi, dphi)
    v = elliptic.vdual_norm(dphi)
    gap = abs(dphi.mean())
    gJ = _grad_j_l1(config.kernel, config.grid)
    n_u2 = norms(stateB.u)
    beta = (gJ ** 4 * (lp_norm(stateA.phi, 4) ** 4 + lp_norm(stateB.phi, 4) ** 4) + n_u2.h1_semi ** 2
            + 1.0 + lp_norm(stateA.phi, 4) ** 2 + n_u2.l4 ** 4)
    dgu = norms(du).h1_semi ** 2
    return ContractionMetrics(du2 + v * v, du2 + dphi2, gap, float(beta), du2, dphi2, dgu)


# --------------------------------------------------------------------------
# Hoelder modulus


def _slope(r, d):
    r = np.asarray(r, float)
    d = np.asarray(d, float)
    keep = d > 0
    if keep.sum() < 2:
        return math.inf
    return float(np.polyfit(np.log(r[keep]), np.log(d[keep]), 1)[0])


def holder_modulus(snapshots, grid, shifts=(1, 2, 4)):
    """Empirical Hoelder exponents (alpha_x, alpha_t) of phi from >= 3 snapshots.

    alpha_x: log-log slope of max |phi(x + r) - phi(x)| against r (last
    snapshot, grid shifts along both axes).  alpha_t: slope of max_x |phi(t_i
    + s) - phi(t_i)| against the lag s.  A constant field returns +inf.
    """
    if len(snapshots) < 3:
        raise InsufficientSnapshots(f"{len(snapshots)} snapshots, need 3")
    phis = [np.asarray(s[1]) for s in snapshots]
    times = np.array([s[0] for s in snapshots])
    last = phis[-1]
    rs, ds = [], []
    for s in shifts:
        if grid.periodic:
            dx = np.abs(np.roll(last, -s, 0) - last).max()
            dy = np.abs(np.roll(last, -s, 1) - last).max()
        else:
            dx = np.abs(last[s:] - last[:-s]).max()
            dy = np.abs(last[:, s:] - last[:, :-s]).max()
        rs += [s * grid.hx, s * grid.hy]
        ds += [dx, dy]
    r = np.array(rs)
    d = np.array(ds)
    order = np.argsort(r)
    ax = _slope(r[order], d[order])
    lags, dts = [], []
    for lag in range(1, len(phis)):
        lags.append(times[lag] - times[0])
        dts.append(max(np.abs(phis[i + lag] - phis[i]).max() for i in range(len(phis) - lag)))
    at = _slope(lags, dts)
    return ax, at
