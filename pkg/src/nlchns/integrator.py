"""Lie-split time stepping: a Cahn-Hilliard step followed by a projection
Navier-Stokes step.

Three phase schemes are provided, selected from the constitutive choices:

``regular``     polynomial potential, constant mobility.  a phi and a linear
                stabilisation S phi are implicit, J*phi and F'(phi) - S phi
                explicit; one linear solve per step.
``log``         logarithmic potential, constant mobility.  Convex splitting:
                a phi + theta artanh(phi) implicit (Newton), -J*phi - thetac
                phi explicit.
``degenerate``  split potential, degenerate mobility.  The flux is written as
                grad Lambda(x, phi) - Gamma(phi) grad a + drift and the
                Lambda-diffusion is implicit (Newton).

Every scheme ends with a conservative update phi_new = phi + dt div(flux), so
the mean of phi is preserved to roundoff regardless of solver residuals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import elliptic
from .constitutive import (DegenerateLaw, KernelSpec, MobilitySpec, PotentialSpec, ViscositySpec,
                           build_a, chemical_potential, convolve, degenerate_flux_fields,
                           korteweg_force)
from .errors import (CFLViolation, ConfigError, NewtonDiverged, NoConvergence, PhaseOutOfRange,
                     StepRejected)
from .fields import (Grid, ScalarField, VectorField, divergence, face_values, gradient,
                     skew_advection)


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ForcingSpec:
    """Time-independent body force h.

    ``zero``; ``constant`` with ``vector``; ``fourier``: h = A (sin(2 pi k y / ly), 0)
    with ``k = wavenumber``, a Kolmogorov-type shear forcing.
    """

    family: str = "zero"
    vector: tuple = (0.0, 0.0)
    wavenumber: int = 1
    amplitude: float = 0.0

    def __post_init__(self):
        if self.family not in ("zero", "constant", "fourier"):
            raise ValueError(f"unknown forcing family {self.family!r}")


@dataclass(frozen=True)
class InitSpec:
    """Initial-data generators.

    u: ``zero``, ``taylor_green``, ``random_solenoidal``.
    phi: ``constant``, ``cosine_mix``, ``random_smooth``, ``noise``, ``mode``.
    """

    u: str = "zero"
    u_amp: float = 1.0
    u_kmax: int = 3
    phi: str = "constant"
    phi_mean: float = 0.0
    phi_amp: float = 0.1
    phi_bound: float = 0.9
    phi_kmax: int = 4
    mode: tuple = (1, 0)

    def __post_init__(self):
        if self.u not in ("zero", "taylor_green", "random_solenoidal"):
            raise ValueError(f"unknown velocity initialiser {self.u!r}")
        if self.phi not in ("constant", "cosine_mix", "random_smooth", "noise", "mode"):
            raise ValueError(f"unknown phase initialiser {self.phi!r}")


@dataclass(frozen=True)
class SchemeSpec:
    stab: float | None = None  # linear stabilisation S; None picks a safe default
    korteweg: str = "gauge"  # "gauge" (-phi grad mu), "A" or "B"
    cfl: float = 0.5
    dt_min: float = 1e-8
    newton_tol: float = 1e-12
    newton_maxit: int = 50
    ch: bool = True  # advance the phase equation
    ns: bool = True  # advance the momentum equation
    viscous: str = "auto"  # "auto", "cg", "direct", "spectral"
    poisson: str = "spectral"  # pressure Poisson solver: "spectral" or "cg"


@dataclass(frozen=True)
class SimConfig:
    grid: Grid = Grid(32, 32)
    kernel: KernelSpec = KernelSpec("gaussian", eps=0.05, mass=5.0)
    potential: PotentialSpec = PotentialSpec("doublewell")
    mobility: MobilitySpec = MobilitySpec("constant", m0=0.01)
    viscosity: ViscositySpec = ViscositySpec("constant", nu=0.1)
    dt: float = 1e-3
    t_end: float = 1.0
    forcing: ForcingSpec = ForcingSpec()
    init: InitSpec = InitSpec()
    scheme: SchemeSpec = SchemeSpec()
    tol: float = 1e-11
    seed: int = 0
    stride: int = 1

    @property
    def phase_scheme(self) -> str:
        if self.mobility.degenerate:
            return "degenerate"
        if self.potential.singular:
            return "log"
        return "regular"

    @property
    def regime(self) -> str:
        return f"{self.phase_scheme}-{'const' if self.viscosity.constant else 'variable'}-nu"

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def with_(self, **kw) -> "SimConfig":
        return replace(self, **kw)


def validate(config: SimConfig) -> dict:
    """Check the regime matrix and the structural assumptions numerically.

    Returns the derived constants; raises ConfigError naming the violated
    assumption otherwise.
    """
    pot, mob = config.potential, config.mobility
    if mob.degenerate and pot.family != "split":
        raise ConfigError("regime matrix: degenerate mobility requires a split singular potential (A1)")
    if pot.family == "split" and not mob.degenerate:
        raise ConfigError("regime matrix: the split potential is paired with degenerate mobility")
    init = config.init
    if pot.singular:
        if not abs(init.phi_mean) < 1:
            raise ConfigError(f"singular potential needs |phi_mean_0|<1, got {init.phi_mean}")
        if not init.phi_bound < 1:
            raise ConfigError(f"singular potential needs phi bound < 1, got {init.phi_bound}")
    if config.dt <= 0 or config.t_end < 0:
        raise ConfigError("time step must be positive and t_end non-negative")
    try:
        a = build_a(config.kernel, config.grid)
    except ValueError as exc:
        raise ConfigError(f"H1 kernel: {exc}") from exc
    coerc = pot.coercivity(a)
    c0 = pot.c0 if pot.c0 > 0 else 0.0
    tag = "A4" if pot.singular else "H3"
    if not coerc > c0:
        raise ConfigError(f"{tag} coercivity: min(F''+a) = {coerc:.6g} < c0 = {c0:g}")
    ok, lip = config.viscosity.check()
    if not ok:
        raise ConfigError("H2 viscosity: nu(s) leaves [nu1, nu2]")
    out = {"coercivity": coerc, "nu_lipschitz": lip, "a_min": float(a.data.min()),
           "a_max": float(a.data.max())}
    if mob.degenerate:
        law = DegenerateLaw(pot, mob)
        from .constitutive import kernel_constants

        kc = kernel_constants(config.kernel, config.grid)
        out.update(alpha0=law.alpha0(), rho=law.rho(a), a_star=kc["a_star"], a_lower=kc["a_lower"],
                   b_lower=float(pot.d2F2(np.linspace(-1, 1, 2001)).min()),
                   A2_margin=law.a2_margin(kc["a_star"], kc["a_lower"]))
    return out


# --------------------------------------------------------------------------
# state


@dataclass
class SimState:
    t: float
    u: VectorField
    phi: ScalarField
    a: ScalarField
    mu: ScalarField
    pi: ScalarField
    step: int = 0

    def copy(self) -> "SimState":
        return SimState(self.t, self.u.copy(), self.phi.copy(), self.a, self.mu.copy(), self.pi.copy(),
                        self.step)


@dataclass
class StepReport:
    dt: float
    newton_iterations: int = 0
    ns_iterations: int = 0
    max_phi: float = 0.0
    mass_change: float = 0.0
    div_residual: float = 0.0
    cfl: float = 0.0
    substeps: int = 1
    extra: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# cached model data


class _Model:
    def __init__(self, config: SimConfig):
        self.config = config
        g = config.grid
        self.grid = g
        self.a = build_a(config.kernel, g)
        self.a_const = bool(np.ptp(self.a.data) <= 1e-13 * max(1.0, abs(self.a.data).max()))
        pot = config.potential
        if config.scheme.stab is None:
            s = np.linspace(-1.2, 1.2, 2401)
            self.S = 0.5 * float(max(pot.d2F(s).max(), 0.0)) if not pot.singular else 0.0
        else:
            self.S = float(config.scheme.stab)
        self.law = DegenerateLaw(pot, config.mobility) if config.mobility.degenerate else None
        self.lap = elliptic.laplacian_matrix(g)
        self._lin = {}
        self.h = forcing_field(config.forcing, g)

    def linear_solver(self, dt):
        """Solver for (I - dt m Delta_h diag(a + S)) x = b."""
        key = dt
        if key not in self._lin:
            m = self.config.mobility.m0
            c = self.a.data + self.S
            g = self.grid
            if g.periodic and self.a_const:
                mult = 1.0 / (1.0 + dt * m * elliptic.symbol(g) * float(c.flat[0]))

                def solve(b, mult=mult):
                    return sfft.ifft2(sfft.fft2(b) * mult).real
            else:
                n = g.nx * g.ny
                A = (sp.identity(n, format="csc") - dt * m * self.lap @ sp.diags(c.ravel())).tocsc()
                lu = spla.splu(A)

                def solve(b, lu=lu, shape=g.shape):
                    return lu.solve(b.ravel()).reshape(shape)
            self._lin[key] = solve
        return self._lin[key]


@lru_cache(maxsize=8)
def _model(config: SimConfig) -> _Model:
    return _Model(config)


def forcing_field(spec: ForcingSpec, grid: Grid) -> VectorField:
    if spec.family == "zero":
        return VectorField.zeros(grid)
    if spec.family == "constant":
        hx, hy = spec.vector
        return VectorField.from_function(grid, lambda X, Y: np.full(X.shape, float(hx)),
                                         lambda X, Y: np.full(X.shape, float(hy)))
    k, A = spec.wavenumber, spec.amplitude
    if grid.periodic:
        fx = lambda X, Y: A * np.sin(2 * np.pi * k * Y / grid.ly)
    else:
        fx = lambda X, Y: A * np.sin(np.pi * X / grid.lx) ** 2 * np.sin(2 * np.pi * k * Y / grid.ly)
    return VectorField.from_function(grid, fx, lambda X, Y: np.zeros(X.shape))


# --------------------------------------------------------------------------
# initial data


def _smooth_random(grid: Grid, rng, kmax, decay=1.0):
    """Random smooth mean-zero field from low Fourier (periodic) or cosine (box) modes."""
    X, Y = grid.centers()
    out = np.zeros(grid.shape)
    for p in range(kmax + 1):
        for q in range(-kmax if grid.periodic else 0, kmax + 1):
            if p == 0 and q <= 0:
                continue
            amp = (p * p + q * q) ** (-decay / 2)
            if grid.periodic:
                ph = 2 * np.pi * (p * X / grid.lx + q * Y / grid.ly)
                out += amp * (rng.standard_normal() * np.cos(ph) + rng.standard_normal() * np.sin(ph))
            else:
                out += amp * rng.standard_normal() * np.cos(np.pi * p * X / grid.lx) * np.cos(np.pi * q * Y / grid.ly)
    return out - out.mean()


def _corner_stream(grid: Grid, psi_fn):
    """Velocity as the discrete curl of a corner stream function (exactly solenoidal)."""
    nx, ny = grid.shape
    xs = np.arange(nx + 1) * grid.hx
    ys = np.arange(ny + 1) * grid.hy
    Xc, Yc = np.meshgrid(xs, ys, indexing="ij")
    psi = psi_fn(Xc, Yc)
    if not grid.periodic:
        psi[0] = psi[-1] = 0.0
        psi[:, 0] = psi[:, -1] = 0.0
    ux = (psi[:, 1:] - psi[:, :-1]) / grid.hy
    uy = -(psi[1:] - psi[:-1]) / grid.hx
    if grid.periodic:
        ux[-1] = ux[0]
        uy[:, -1] = uy[:, 0]
    return VectorField(grid, ux, uy)


def make_initial(config: SimConfig):
    """Initial (u0, phi0) from the configured generators."""
    g = config.grid
    init = config.init
    rng = np.random.default_rng(config.seed)
    lx, ly = g.lx, g.ly
    # velocity
    if init.u == "zero":
        u0 = VectorField.zeros(g)
    elif init.u == "taylor_green":
        A = init.u_amp
        if g.periodic:
            psi = lambda X, Y: A * lx / (2 * np.pi) * np.sin(2 * np.pi * X / lx) * np.sin(2 * np.pi * Y / ly)
        else:
            psi = lambda X, Y: A * lx / np.pi * (np.sin(np.pi * X / lx) * np.sin(np.pi * Y / ly)) ** 2
        u0 = elliptic.leray_project(_corner_stream(g, psi))[0]
    else:
        coeffs = []
        for p in range(1, init.u_kmax + 1):
            for q in range(1, init.u_kmax + 1):
                coeffs.append((p, q, rng.standard_normal(4) / (p * p + q * q)))

        def psi(X, Y):
            out = np.zeros_like(X)
            for p, q, c in coeffs:
                if g.periodic:
                    sx, cx = np.sin(2 * np.pi * p * X / lx), np.cos(2 * np.pi * p * X / lx)
                    sy, cy = np.sin(2 * np.pi * q * Y / ly), np.cos(2 * np.pi * q * Y / ly)
                    out += c[0] * sx * sy + c[1] * sx * cy + c[2] * cx * sy + c[3] * cx * cy
                else:
                    out += c[0] * np.sin(np.pi * p * X / lx) * np.sin(np.pi * q * Y / ly)
            return out

        u0 = _corner_stream(g, psi)
        scale = u0.max_abs()
        u0 = elliptic.leray_project(u0 * (init.u_amp / scale if scale > 0 else 0.0))[0]
    # phase
    m0 = init.phi_mean
    if init.phi == "constant":
        fluct = np.zeros(g.shape)
    elif init.phi == "mode":
        X, Y = g.centers()
        kx, ky = init.mode
        if g.periodic:
            fluct = np.cos(2 * np.pi * (kx * X / lx + ky * Y / ly))
        else:
            fluct = np.cos(np.pi * kx * X / lx) * np.cos(np.pi * ky * Y / ly)
        fluct = fluct - fluct.mean()
    elif init.phi == "noise":
        fluct = rng.uniform(-1.0, 1.0, g.shape)
        fluct -= fluct.mean()
    else:
        decay = 1.0 if init.phi == "cosine_mix" else 2.0
        fluct = _smooth_random(g, rng, init.phi_kmax, decay)
    peak = np.abs(fluct).max()
    amp = init.phi_amp
    if config.potential.singular:
        if abs(m0) >= init.phi_bound:
            raise ConfigError(f"|phi_mean|={abs(m0)} must be below the bound {init.phi_bound}")
    if peak > 0:
        fluct = fluct * (amp / peak)
        if config.potential.singular or init.phi == "random_smooth":
            over = np.abs(m0 + fluct).max()
            if over > init.phi_bound:
                # shrink the fluctuation so that max|phi0| equals the bound
                lo, hi = 0.0, 1.0
                for _ in range(80):
                    mid = 0.5 * (lo + hi)
                    if np.abs(m0 + mid * fluct).max() <= init.phi_bound:
                        lo = mid
                    else:
                        hi = mid
                fluct = lo * fluct
    phi0 = ScalarField(g, m0 + fluct)
    return u0, phi0


def initial_state(config: SimConfig, u0=None, phi0=None) -> SimState:
    if u0 is None or phi0 is None:
        uu, pp = make_initial(config)
        u0 = uu if u0 is None else u0
        phi0 = pp if phi0 is None else phi0
    model = _model(config)
    mu = chemical_potential(phi0, model.a, config.kernel, config.potential)
    return SimState(0.0, u0, phi0, model.a, mu, ScalarField.constant(config.grid, 0.0), 0)


# --------------------------------------------------------------------------
# phase step


def _advective_flux(u: VectorField, phi: ScalarField):
    px, py = face_values(phi)
    return px * u.ux, py * u.uy


def _spectral_precond(grid, kdt, cbar):
    """Inverse of (I/cbar + kdt B_N) in the grid eigenbasis."""
    mult = 1.0 / (1.0 / cbar + kdt * elliptic.symbol(grid))
    if grid.periodic:
        half = np.ascontiguousarray(mult[:, : grid.ny // 2 + 1])
        return lambda r: sfft.irfft2(sfft.rfft2(r.reshape(grid.shape)) * half, s=grid.shape).ravel()
    return lambda r: sfft.idctn(sfft.dctn(r.reshape(grid.shape), type=2, norm="ortho") * mult,
                                type=2, norm="ortho").ravel()


def jacobian_solve(grid, kdt, c, r, rtol=1e-14):
    """Solve (I + kdt B_N diag(c)) x = r for c > 0.

    With y = c x this is the SPD system (diag(1/c) + kdt B_N) y = r, solved by
    CG preconditioned with the constant-coefficient spectral inverse; sparse LU
    is the fallback.
    """
    n = c.size
    B = -elliptic.laplacian_matrix(grid)
    inv_c = 1.0 / c
    A = spla.LinearOperator((n, n), matvec=lambda y: inv_c * y + kdt * (B @ y), dtype=float)
    M = spla.LinearOperator((n, n), matvec=_spectral_precond(grid, kdt, 1.0 / inv_c.mean()), dtype=float)
    y, info = spla.cg(A, r, rtol=rtol, atol=0.0, M=M, maxiter=500)
    if info != 0:
        K = (sp.diags(inv_c) + kdt * B).tocsc()
        y = spla.splu(K).solve(r)
    return y * inv_c


def _newton(G, dG, x0, rhs, grid, kdt, tol, maxit, barrier):
    """Damped Newton for x + kdt B_N g(x) = rhs (B_N = -Delta_h), g' > 0.

    With ``barrier`` the iterates are kept inside (-1, 1) by step halving.
    After the residual test passes one more full step is taken so the
    returned iterate sits at roundoff level.
    """
    B = -elliptic.laplacian_matrix(grid)
    x = x0.ravel().copy()
    b = rhs.ravel()

    def resid(z):
        return z + kdt * (B @ G(z)) - b

    r = resid(x)
    scale = max(1.0, np.abs(b).max())
    converged = False
    for it in range(1, maxit + 1):
        rn = np.abs(r).max()
        rtol = 1e-14 if converged else min(1e-4, max(1e-14, 1e-3 * rn / scale))
        dx = jacobian_solve(grid, kdt, dG(x), r, rtol)
        lam = 1.0
        while True:
            xn = x - lam * dx
            if not barrier or np.abs(xn).max() < 1.0:
                rnew = resid(xn)
                if np.abs(rnew).max() <= max(rn, tol * scale) or lam < 1e-3:
                    break
            lam *= 0.5
            if lam < 1e-12:
                raise NewtonDiverged(it, float(rn))
        x, r = xn, rnew
        if converged:
            return x.reshape(x0.shape), it
        if np.abs(r).max() <= tol * scale and lam == 1.0:
            converged = True
    raise NewtonDiverged(maxit, float(np.abs(r).max()))


def ch_step(state: SimState, config: SimConfig, dt: float | None = None):
    """One phase step.  Returns (phi_new, report); ``report.extra['mu']`` holds the
    chemical potential that drove the flux."""
    dt = config.dt if dt is None else dt
    model = _model(config)
    g = config.grid
    phi = state.phi
    u = state.u
    kernel, pot, mob = config.kernel, config.potential, config.mobility
    a = model.a.data
    rep = StepReport(dt)
    if not config.scheme.ch:
        rep.extra["mu"] = state.mu
        rep.max_phi = float(np.abs(phi.data).max())
        return phi, rep
    fx, fy = _advective_flux(u, phi)
    adv = divergence(VectorField(g, fx, fy)).data
    scheme = config.phase_scheme
    if scheme == "regular":
        m = mob.m0
        S = model.S
        expl = -convolve(kernel, phi).data + pot.dF(phi.data) - S * phi.data
        lap_expl = elliptic.laplacian_matrix(g) @ expl.ravel()
        rhs = phi.data - dt * adv + dt * m * lap_expl.reshape(g.shape)
        star = model.linear_solver(dt)(rhs)
        mu_t = ScalarField(g, (a + S) * star + expl)
        gm = gradient(mu_t)
        flux = VectorField(g, m * gm.ux - fx, m * gm.uy - fy) if g.periodic else None
        if flux is None:
            fxx, fyy = m * gm.ux - fx, m * gm.uy - fy
            fxx[0] = fxx[-1] = 0.0
            fyy[:, 0] = fyy[:, -1] = 0.0
            flux = VectorField(g, fxx, fyy)
        new = phi.data + dt * divergence(flux).data
    elif scheme == "log":
        m = mob.m0
        expl = -convolve(kernel, phi).data + pot.dF2(phi.data)
        L = elliptic.laplacian_matrix(g)
        rhs = phi.data - dt * adv + dt * m * (L @ expl.ravel()).reshape(g.shape)
        af = a.ravel()
        G = lambda z: af * z + pot.dF1(z)
        dG = lambda z: af + pot.d2F1(z)
        star, rep.newton_iterations = _newton(G, dG, phi.data, rhs, g, dt * m, config.scheme.newton_tol,
                                              config.scheme.newton_maxit, True)
        mu_t = ScalarField(g, G(star.ravel()).reshape(g.shape) + expl)
        gm = gradient(mu_t)
        fxx, fyy = m * gm.ux - fx, m * gm.uy - fy
        if not g.periodic:
            fxx[0] = fxx[-1] = 0.0
            fyy[:, 0] = fyy[:, -1] = 0.0
        new = phi.data + dt * divergence(VectorField(g, fxx, fyy)).data
    else:
        law = model.law
        parts = degenerate_flux_fields(phi, model.a, kernel, pot, mob)
        expl_flux = parts.drift - parts.gamma_term
        L = elliptic.laplacian_matrix(g)
        rhs = phi.data - dt * adv + dt * divergence(expl_flux).data
        af = a.ravel()
        G = lambda z: law.Lambda(z, af)
        dG = lambda z: law.dLambda(z, af)
        star, rep.newton_iterations = _newton(G, dG, phi.data, rhs, g, dt, config.scheme.newton_tol,
                                              config.scheme.newton_maxit, False)
        lg = gradient(ScalarField(g, law.Lambda(star, a)))
        fxx = lg.ux + expl_flux.ux - fx
        fyy = lg.uy + expl_flux.uy - fy
        if not g.periodic:
            fxx[0] = fxx[-1] = 0.0
            fyy[:, 0] = fyy[:, -1] = 0.0
        new = phi.data + dt * divergence(VectorField(g, fxx, fyy)).data
        mu_t = None
    if not np.all(np.isfinite(new)):
        raise StepRejected("non-finite phase field")
    if pot.singular:
        bad = np.abs(new) >= 1.0
        if bad.any():
            idx = np.unravel_index(int(np.argmax(np.abs(new))), new.shape)
            raise PhaseOutOfRange(idx, float(new[idx]))
    phi_new = ScalarField(g, new)
    if mu_t is None:
        mu_t = chemical_potential(phi_new, model.a, kernel, pot)
    rep.extra["mu"] = mu_t
    rep.max_phi = float(np.abs(new).max())
    rep.mass_change = float(new.mean() - phi.data.mean())
    return phi_new, rep


# --------------------------------------------------------------------------
# momentum step


def _viscous_method(config: SimConfig):
    m = config.scheme.viscous
    if m == "auto":
        return "spectral" if (config.grid.periodic and config.viscosity.constant) else "cg"
    return m


def viscous_solve(rhs: VectorField, phi: ScalarField, config: SimConfig, dt: float):
    nu = config.viscosity
    method = _viscous_method(config)
    if method == "spectral":
        if not nu.constant:
            raise ConfigError("spectral viscous solve needs constant viscosity")
        return elliptic.helmholtz_solve(rhs, nu.nu, dt), 0
    nu_field = ScalarField(config.grid, nu(phi.data))
    if method == "direct":
        x = elliptic.pack(rhs)
        A = sp.identity(x.size, format="csc") + dt * elliptic.viscous_matrix(config.grid, nu_field.data)
        return elliptic.unpack(config.grid, spla.splu(A.tocsc()).solve(x)), 0
    return elliptic.variable_viscosity_solve(rhs, nu_field, dt, nu_bounds=nu.bounds, tol=config.tol)


def korteweg(state: SimState, phi_new: ScalarField, mu: ScalarField, config: SimConfig) -> VectorField:
    form = config.scheme.korteweg
    model = _model(config)
    if form == "gauge":
        # -phi grad(mu) with the same phi that carried the advective flux
        return korteweg_force(state.phi, mu=mu, form="phi_grad_mu").force
    if form == "A":
        return korteweg_force(phi_new, mu=mu, form="A").force
    if form == "B":
        return korteweg_force(phi_new, a=model.a, kernel=config.kernel, form="B").force
    raise ConfigError(f"unknown Korteweg form {form!r}")


def ns_step(state: SimState, phi_new: ScalarField, config: SimConfig, dt: float | None = None,
            mu: ScalarField | None = None):
    """Projection step.  Returns (u_new, pi_new, report)."""
    dt = config.dt if dt is None else dt
    g = config.grid
    rep = StepReport(dt)
    u = state.u
    cfl = u.max_abs() * dt / min(g.hx, g.hy)
    rep.cfl = cfl
    if not config.scheme.ns:
        return u, state.pi, rep
    if cfl > config.scheme.cfl:
        raise CFLViolation(cfl, config.scheme.cfl)
    model = _model(config)
    if mu is None:
        mu = chemical_potential(phi_new, model.a, config.kernel, config.potential)
    K = korteweg(state, phi_new, mu, config)
    adv = skew_advection(u, u)
    rhs = VectorField(g, u.ux + dt * (K.ux - adv.ux + model.h.ux), u.uy + dt * (K.uy - adv.uy + model.h.uy))
    w, rep.ns_iterations = viscous_solve(rhs, state.phi, config, dt)
    u_new, p = elliptic.leray_project(w, method=config.scheme.poisson)
    rep.div_residual = float(np.abs(divergence(u_new).data).max())
    return u_new, p * (1.0 / dt), rep


# --------------------------------------------------------------------------
# driver

_RETRY = (StepRejected, CFLViolation, PhaseOutOfRange, NewtonDiverged, NoConvergence)


def single_step(state: SimState, config: SimConfig, dt: float):
    phi_new, r1 = ch_step(state, config, dt)
    mu_t = r1.extra.pop("mu")
    u_new, pi_new, r2 = ns_step(state, phi_new, config, dt, mu=mu_t)
    model = _model(config)
    if config.scheme.ch:
        mu_new = chemical_potential(phi_new, model.a, config.kernel, config.potential)
    else:
        mu_new = state.mu
    rep = StepReport(dt, r1.newton_iterations, r2.ns_iterations, r1.max_phi, r1.mass_change,
                     r2.div_residual, r2.cfl)
    new = SimState(state.t + dt, u_new, phi_new, state.a, mu_new, pi_new, state.step + 1)
    return new, rep


def _macro_step(state, config, dt):
    try:
        new, rep = single_step(state, config, dt)
        rep.substeps = 1
        return new, rep
    except _RETRY as exc:
        half = 0.5 * dt
        if half < config.scheme.dt_min:
            raise StepRejected(f"dt fell below dt_min={config.scheme.dt_min:g}: {exc}") from exc
        s1, r1 = _macro_step(state, config, half)
        s2, r2 = _macro_step(s1, config, half)
        s2.step = state.step + 1
        r2.newton_iterations += r1.newton_iterations
        r2.ns_iterations += r1.ns_iterations
        r2.mass_change += r1.mass_change
        r2.dt = dt
        r2.substeps = r1.substeps + r2.substeps
        return s2, r2


def advance(state: SimState, config: SimConfig, n_steps: int, hooks=(), checkpoint_every=None,
            checkpoint_fn=None):
    """Advance ``n_steps`` macro steps of size config.dt.

    Rejected steps are retried with halved sub-steps down to dt_min, so the
    macro time grid stays uniform.  ``hooks`` are called as hook(state, report)
    after every step; ``checkpoint_fn(state)`` every ``checkpoint_every`` steps.
    """
    reports = []
    for _ in range(n_steps):
        state, rep = _macro_step(state, config, config.dt)
        reports.append(rep)
        for h in hooks:
            h(state, rep)
        if checkpoint_every and checkpoint_fn is not None and state.step % checkpoint_every == 0:
            checkpoint_fn(state)
    return state, reports
