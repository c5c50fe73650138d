"""Constitutive choices: interaction kernels, potentials, mobilities, viscosities.

Convolutions are evaluated with FFTs.  On the torus they are circular with the
kernel sampled at minimal-image offsets; in a box the field is zero-extended
and linearly convolved, so that ``(J*f)(x) = sum_{y in Omega} J(x-y) f(y) h^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, NamedTuple

import numpy as np
import scipy.fft as sfft
from numpy.polynomial import polynomial as P
from scipy import special

from .errors import GridMismatch, NonsymmetricKernel, PhaseOutOfRange
from .fields import Grid, ScalarField, VectorField, gradient, face_values


# --------------------------------------------------------------------------
# kernels


@dataclass(frozen=True)
class KernelSpec:
    """Radial interaction kernel J(x) = profile(|x|).

    ``family`` is one of ``gaussian`` (eps, mass), ``tophat`` (delta, c),
    ``newtonian`` (rho0, radius) or ``bessel`` (kappa, rho0).  For the last two
    the logarithmic singularity at the origin is flattened inside ``rho0``
    (default: twice the larger grid spacing); ``radius`` shifts the Newtonian
    potential so that it stays non-negative on the domain (default: the domain
    diameter).
    """

    family: str = "gaussian"
    eps: float = 0.05
    mass: float = 1.0
    delta: float = 0.05
    c: float = 1.0
    rho0: float | None = None
    radius: float | None = None
    kappa: float = 10.0

    def __post_init__(self):
        if self.family not in ("gaussian", "tophat", "newtonian", "bessel", "zero"):
            raise ValueError(f"unknown kernel family {self.family!r}")

    @property
    def smooth(self) -> bool:
        """True when a pointwise gradient is available away from the origin."""
        return self.family in ("gaussian", "newtonian", "bessel", "zero")

    def _rho0(self, grid):
        return self.rho0 if self.rho0 is not None else 2.0 * max(grid.hx, grid.hy)

    def profile(self, r, grid):
        r = np.asarray(r, dtype=float)
        f = self.family
        if f == "zero":
            return np.zeros_like(r)
        if f == "gaussian":
            return self.mass / (2 * np.pi * self.eps ** 2) * np.exp(-0.5 * (r / self.eps) ** 2)
        if f == "tophat":
            return np.where(r < self.delta, self.c, 0.0)
        rr = np.maximum(r, self._rho0(grid))
        if f == "newtonian":
            R = self.radius if self.radius is not None else grid.diameter
            return np.log(R / rr) / (2 * np.pi)
        return special.k0(self.kappa * rr) / (2 * np.pi)

    def radial_derivative(self, r, grid):
        """d/dr of the profile (zero inside the flattened core)."""
        r = np.asarray(r, dtype=float)
        f = self.family
        if f == "zero":
            return np.zeros_like(r)
        if f == "gaussian":
            return -r / self.eps ** 2 * self.profile(r, grid)
        if f == "tophat":
            raise ValueError("top-hat kernel has no pointwise gradient")
        core = r <= self._rho0(grid)
        rs = np.where(core, 1.0, r)
        if f == "newtonian":
            d = -1.0 / (2 * np.pi * rs)
        else:
            d = -self.kappa * special.k1(self.kappa * rs) / (2 * np.pi)
        return np.where(core, 0.0, d)

    def __call__(self, x, y, grid):
        return self.profile(np.hypot(x, y), grid)

    def gradient_at(self, x, y, grid):
        r = np.hypot(x, y)
        d = self.radial_derivative(r, grid)
        rs = np.where(r > 0, r, 1.0)
        return np.where(r > 0, d * x / rs, 0.0), np.where(r > 0, d * y / rs, 0.0)

    def fourier_symbol(self, kx, ky):
        """Continuous transform (Gaussian only), J^(k) = mass exp(-eps^2 |k|^2 / 2)."""
        if self.family != "gaussian":
            raise NotImplementedError("closed-form symbol only for the Gaussian family")
        return self.mass * np.exp(-0.5 * self.eps ** 2 * (kx ** 2 + ky ** 2))

    def admissibility(self, grid, samples=2000):
        """Radial symmetry / monotone profile flags checked on a sampled profile."""
        r = np.linspace(0.0, grid.diameter, samples)
        prof = self.profile(r, grid)
        nonincreasing = bool(np.all(np.diff(prof) <= 1e-14 * max(1.0, np.abs(prof).max())))
        return {
            "radial": True,
            "nonincreasing": nonincreasing,
            "admissible_family": self.family in ("newtonian", "bessel"),
        }


def _offsets(n, h, periodic, shift=0.0):
    """Sampling offsets for a 1D convolution stencil.

    Periodic: length-n minimal-image offsets ``(m - shift) h``.  Box: a padded
    circular buffer of length ``2n + 2`` holding offsets for m in
    ``[-(n-1), n-1]`` (``[-(n-1), n]`` for face-shifted stencils); unused slots
    are flagged with NaN.
    """
    if periodic:
        m = np.arange(n)
        m = np.where(m - shift > n / 2, m - n, m)
        return (m - shift) * h
    L = 2 * n + 2
    m = np.arange(L)
    m = np.where(m > n, m - L, m)
    off = (m - shift) * h
    top = n if shift else n - 1
    off[(m < -(n - 1)) | (m > top)] = np.nan
    return off


@lru_cache(maxsize=64)
def _stencil(kernel: KernelSpec, grid: Grid, what: str):
    """FFT of the sampled kernel (what = 'J', 'dx', 'dy') as an rfft2 array."""
    per = grid.periodic
    sx = 0.5 if what == "dx" else 0.0
    sy = 0.5 if what == "dy" else 0.0
    ox = _offsets(grid.nx, grid.hx, per, sx)
    oy = _offsets(grid.ny, grid.hy, per, sy)
    X, Y = np.meshgrid(np.nan_to_num(ox), np.nan_to_num(oy), indexing="ij")
    if what == "J":
        K = kernel(X, Y, grid)
    else:
        gx, gy = kernel.gradient_at(X, Y, grid)
        K = gx if what == "dx" else gy
    mask = np.isnan(ox)[:, None] | np.isnan(oy)[None, :]
    K = np.where(mask, 0.0, K) * grid.cell_area
    return K, sfft.rfft2(K)


def kernel_samples(kernel: KernelSpec, grid: Grid, what="J"):
    """Sampled (and area-weighted) kernel buffer used by the FFT convolution."""
    return _stencil(kernel, grid, what)[0]


def _conv(kernel, grid, data, what, out_shape):
    K, Khat = _stencil(kernel, grid, what)
    if grid.periodic:
        r = sfft.irfft2(Khat * sfft.rfft2(data), s=K.shape)
    else:
        r = sfft.irfft2(Khat * sfft.rfft2(data, s=K.shape), s=K.shape)
    return r[: out_shape[0], : out_shape[1]]


def buffer_asymmetry(K) -> float:
    """max |K[m] - K[-m]| over a circular kernel buffer."""
    Kr = np.roll(K[::-1, ::-1], (1, 1), axis=(0, 1))
    return float(np.abs(K - Kr).max())


def check_symmetry(kernel: KernelSpec, grid: Grid, tol=1e-12) -> float:
    """Raise NonsymmetricKernel unless the sampled J satisfies J(x) = J(-x)."""
    K = kernel_samples(kernel, grid)
    err = buffer_asymmetry(K)
    if err > tol * max(1.0, float(np.abs(K).max())):
        raise NonsymmetricKernel(f"sampled kernel asymmetry {err:.3e}")
    return err


def convolve(kernel: KernelSpec, f: ScalarField) -> ScalarField:
    """(J*f)(x) = sum_y J(x-y) f(y) hx hy over y in Omega."""
    g = f.grid
    return ScalarField(g, _conv(kernel, g, f.data, "J", g.shape))


def build_a(kernel: KernelSpec, grid: Grid) -> ScalarField:
    """a(x) = integral over Omega of J(x-y) dy; raises if the sampled kernel is not even."""
    check_symmetry(kernel, grid)
    a = convolve(kernel, ScalarField.constant(grid, 1.0))
    if a.data.min() < -1e-12 * max(1.0, np.abs(a.data).max()):
        raise ValueError(f"a(x) negative: min {a.data.min():.3e}")
    return a


def grad_convolve(kernel: KernelSpec, f: ScalarField) -> VectorField:
    """(grad J)*f sampled on the faces.

    Non-smooth kernels (top-hat) fall back to the discrete gradient of J*f.
    """
    g = f.grid
    if not kernel.smooth:
        return gradient(convolve(kernel, f))
    if g.periodic:
        gx = _conv(kernel, g, f.data, "dx", g.shape)
        gy = _conv(kernel, g, f.data, "dy", g.shape)
        return VectorField(g, gx, gy)
    gx = _conv(kernel, g, f.data, "dx", (g.nx + 1, g.ny))
    gy = _conv(kernel, g, f.data, "dy", (g.nx, g.ny + 1))
    gx[0] = gx[-1] = 0.0
    gy[:, 0] = gy[:, -1] = 0.0
    return VectorField(g, gx, gy)


def grad_convolve_faces(kernel: KernelSpec, f: ScalarField):
    """Raw face arrays of (grad J)*f, box boundary faces included."""
    g = f.grid
    if not kernel.smooth or g.periodic:
        v = grad_convolve(kernel, f)
        return v.ux, v.uy
    return (_conv(kernel, g, f.data, "dx", (g.nx + 1, g.ny)),
            _conv(kernel, g, f.data, "dy", (g.nx, g.ny + 1)))


def grad_convolve_ratio(kernel: KernelSpec, f: ScalarField) -> float:
    """Empirical ||grad((grad J)*f)|| / ||f|| for admissible-kernel bookkeeping."""
    from .fields import h1_seminorm, lp_norm

    v = grad_convolve(kernel, f)
    n = lp_norm(f, 2)
    return h1_seminorm(v) / n if n > 0 else 0.0


def kernel_constants(kernel: KernelSpec, grid: Grid):
    """a* = sup int|J|, a_* = inf int J and the L1 norm of grad J (radial quadrature)."""
    a = build_a(kernel, grid)
    K, _ = _stencil(kernel, grid, "J")
    absK = np.abs(K)
    if grid.periodic:
        ones = sfft.irfft2(sfft.rfft2(absK) * sfft.rfft2(np.ones(grid.shape)), s=K.shape)
    else:
        ones = sfft.irfft2(sfft.rfft2(absK) * sfft.rfft2(np.ones(grid.shape), s=K.shape), s=K.shape)
    a_star = float(ones[: grid.nx, : grid.ny].max())
    grad_l1 = 0.0
    if kernel.smooth:
        n = 8 * max(grid.nx, grid.ny)
        h = grid.diameter / n
        r = (np.arange(n) + 0.5) * h
        grad_l1 = float(np.sum(np.abs(kernel.radial_derivative(r, grid)) * 2 * np.pi * r) * h)
    return {"a_star": a_star, "a_lower": float(a.data.min()), "grad_J_L1": grad_l1}


# --------------------------------------------------------------------------
# potentials


@dataclass(frozen=True)
class PotentialSpec:
    """Double-well potentials F.

    ``doublewell``: F(s) = (s^2 - 1)^2.
    ``polynomial``: F(s) = sum_k coeffs[k] s^k.
    ``log``: F(s) = -thetac/2 s^2 + theta/2 [(1+s)ln(1+s) + (1-s)ln(1-s)].
    ``split``: the same logarithmic F, split as F1 (entropy part) + F2 with F2
    = -thetac/2 s^2 + the optional polynomial ``coeffs``; used with degenerate
    mobility.
    """

    family: str = "doublewell"
    coeffs: tuple = ()
    theta: float = 1.0
    thetac: float = 2.0
    c0: float = 0.0

    def __post_init__(self):
        if self.family not in ("doublewell", "polynomial", "log", "split"):
            raise ValueError(f"unknown potential family {self.family!r}")
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if self.singular and not 0 < self.theta < self.thetac:
            raise ValueError("logarithmic potential needs 0 < theta < thetac")

    @property
    def singular(self) -> bool:
        return self.family in ("log", "split")

    def _poly(self):
        if self.family == "doublewell":
            return np.array([1.0, 0.0, -2.0, 0.0, 1.0])
        if self.family == "polynomial":
            return np.array(self.coeffs or (0.0,))
        c = np.zeros(max(3, len(self.coeffs)))
        c[: len(self.coeffs)] += self.coeffs
        c[2] -= 0.5 * self.thetac
        return c

    def _check(self, s):
        s = np.asarray(s, dtype=float)
        if self.singular:
            bad = np.abs(s) >= 1.0
            if bad.any():
                idx = np.unravel_index(int(np.argmax(np.abs(s) * bad)), s.shape) if s.ndim else ()
                raise PhaseOutOfRange(idx, s[idx] if s.ndim else s)
        return s

    # entropy part (singular families only)
    def F1(self, s):
        s = self._check(s)
        return 0.5 * self.theta * (special.xlogy(1 + s, 1 + s) + special.xlogy(1 - s, 1 - s))

    def dF1(self, s):
        return self.theta * np.arctanh(self._check(s))

    def d2F1(self, s):
        s = self._check(s)
        return self.theta / ((1 - s) * (1 + s))

    def F2(self, s):
        return P.polyval(np.asarray(s, dtype=float), self._poly())

    def dF2(self, s):
        return P.polyval(np.asarray(s, dtype=float), P.polyder(self._poly()))

    def d2F2(self, s):
        return P.polyval(np.asarray(s, dtype=float), P.polyder(self._poly(), 2))

    def F(self, s):
        if self.singular:
            return self.F1(s) + self.F2(s)
        return self.F2(s)

    def dF(self, s):
        if self.singular:
            return self.dF1(s) + self.dF2(s)
        return self.dF2(s)

    def d2F(self, s):
        if self.singular:
            return self.d2F1(s) + self.d2F2(s)
        return self.d2F2(s)

    def sample_range(self, bound=1.5, n=2001):
        """Sample points for the coercivity checks ((-1,1) for singular families)."""
        if self.singular:
            return np.linspace(-1, 1, n)[1:-1]
        return np.linspace(-bound, bound, n)

    def coercivity(self, a: ScalarField, bound=1.5) -> float:
        """min over sampled s and cells of F''(s) + a(x)."""
        s = self.sample_range(bound)
        return float(self.d2F(s).min() + a.data.min())


# --------------------------------------------------------------------------
# mobility and viscosity


@dataclass(frozen=True)
class MobilitySpec:
    """Constant mobility m0, or degenerate m(s) = k1 (1 - s^2)."""

    family: str = "constant"
    m0: float = 1.0
    k1: float = 1.0

    def __post_init__(self):
        if self.family not in ("constant", "degenerate"):
            raise ValueError(f"unknown mobility family {self.family!r}")

    @property
    def degenerate(self) -> bool:
        return self.family == "degenerate"

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.degenerate:
            return self.k1 * (1 - s) * (1 + s)
        return np.full_like(s, self.m0)

    def poly(self):
        if self.degenerate:
            return np.array([self.k1, 0.0, -self.k1])
        return np.array([self.m0])


@dataclass(frozen=True)
class ViscositySpec:
    """Constant nu, or a Lipschitz profile bounded by [nu1, nu2].

    The default Lipschitz profile interpolates linearly between nu1 at s = -1
    and nu2 at s = 1 and is clipped outside.  Any callable can be supplied.
    """

    family: str = "constant"
    nu: float = 0.1
    nu1: float = 0.05
    nu2: float = 0.2
    profile: Callable | None = field(default=None, compare=False, hash=False)

    def __post_init__(self):
        if self.family not in ("constant", "lipschitz"):
            raise ValueError(f"unknown viscosity family {self.family!r}")

    @property
    def constant(self) -> bool:
        return self.family == "constant"

    @property
    def bounds(self):
        return (self.nu, self.nu) if self.constant else (self.nu1, self.nu2)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.constant:
            return np.full_like(s, self.nu)
        if self.profile is not None:
            return np.asarray(self.profile(s), dtype=float)
        return self.nu1 + (self.nu2 - self.nu1) * np.clip(0.5 * (1 + s), 0.0, 1.0)

    def check(self, s=None, n=2001):
        """Verify nu1 <= nu(s) <= nu2 and estimate the Lipschitz constant on samples."""
        s = np.linspace(-2, 2, n) if s is None else np.asarray(s)
        v = self(s)
        lo, hi = self.bounds
        ok = bool(v.min() >= lo * (1 - 1e-14) and v.max() <= hi * (1 + 1e-14))
        lip = float(np.max(np.abs(np.diff(v) / np.diff(s)))) if s.size > 1 else 0.0
        return ok, lip


# --------------------------------------------------------------------------
# chemical potential and forces


def _check_grid(*fields_):
    g = fields_[0].grid
    for f in fields_[1:]:
        if f.grid != g:
            raise GridMismatch(f"{f.grid} != {g}")
    return g


def chemical_potential(phi: ScalarField, a: ScalarField, kernel: KernelSpec,
                       pot: PotentialSpec) -> ScalarField:
    """mu = a phi - J*phi + F'(phi)."""
    g = _check_grid(phi, a)
    return ScalarField(g, a.data * phi.data - convolve(kernel, phi).data + pot.dF(phi.data))


class KortewegForce(NamedTuple):
    force: VectorField
    gauge: str  # pressure shift implied by the form


def korteweg_force(phi: ScalarField, *, mu: ScalarField | None = None, a: ScalarField | None = None,
                   kernel: KernelSpec | None = None, form="A") -> KortewegForce:
    """Capillary force in one of three pressure gauges.

    ``A``: mu grad(phi), the physical form.
    ``B``: -(phi^2/2) grad(a) - (J*phi) grad(phi); differs from A by
    grad(F(phi) + a phi^2/2).
    ``phi_grad_mu``: -phi grad(mu); differs from A by grad(mu phi).  This is
    the form whose discrete pairing with the flux-form advection in the phase
    equation is exact.
    """
    g = phi.grid
    if form == "A":
        _check_grid(phi, mu)
        mx, my = face_values(mu)
        gr = gradient(phi)
        return KortewegForce(VectorField(g, mx * gr.ux, my * gr.uy), "pi")
    if form == "phi_grad_mu":
        _check_grid(phi, mu)
        px, py = face_values(phi)
        gr = gradient(mu)
        return KortewegForce(VectorField(g, -px * gr.ux, -py * gr.uy), "pi + mu*phi")
    if form == "B":
        _check_grid(phi, a)
        q = ScalarField(g, 0.5 * phi.data ** 2)
        qx, qy = face_values(q)
        cx, cy = face_values(convolve(kernel, phi))
        ga = gradient(a)
        gp = gradient(phi)
        return KortewegForce(
            VectorField(g, -qx * ga.ux - cx * gp.ux, -qy * ga.uy - cy * gp.uy),
            "pi - F(phi) - a*phi^2/2",
        )
    raise ValueError(f"unknown Korteweg form {form!r}")


# --------------------------------------------------------------------------
# degenerate mobility reformulation


class DegenerateLaw:
    """Lambda-tilde_1, Lambda-tilde_2, Gamma and Lambda(x, s) for a split potential
    paired with degenerate mobility.

    With m(s) = k1 (1 - s^2) and the logarithmic F1, m F1'' = k1 theta is
    constant, so every primitive is a polynomial and is integrated exactly.
    """

    def __init__(self, pot: PotentialSpec, mob: MobilitySpec):
        if not (pot.family == "split" and mob.degenerate):
            raise ValueError("degenerate law needs a split potential and degenerate mobility")
        self.pot = pot
        self.mob = mob
        m = mob.poly()
        self._mF1pp = np.array([mob.k1 * pot.theta])
        self._mF2pp = P.polymul(m, P.polyder(pot._poly(), 2))
        self._lam1 = P.polyint(self._mF1pp)
        self._lam2 = P.polyint(self._mF2pp)
        self._gam = P.polyint(m)

    def lam1(self, s):
        return P.polyval(s, self._lam1)

    def lam2(self, s):
        return P.polyval(s, self._lam2)

    def gamma(self, s):
        return P.polyval(s, self._gam)

    def m_d2F1(self, s):
        return P.polyval(np.asarray(s, dtype=float), self._mF1pp) * np.ones_like(np.asarray(s, float))

    def m_d2F(self, s):
        """m F'' extended continuously to [-1, 1]."""
        s = np.asarray(s, dtype=float)
        return self.m_d2F1(s) + P.polyval(s, self._mF2pp)

    def Lambda(self, s, a):
        return self.lam1(s) + self.lam2(s) + a * self.gamma(s)

    def dLambda(self, s, a):
        """d Lambda / ds = m(s) (F''(s) + a(x))."""
        return self.m_d2F(s) + a * self.mob(s)

    def alpha0(self, n=4001) -> float:
        s = np.linspace(-1, 1, n)
        return float(self.m_d2F1(s).min())

    def rho(self, a: ScalarField, n_rho=1001, n_s=2001) -> float:
        """Smallest rho in [0, 1) on a grid with rho F1'' + F2'' + a >= 0 on (-1, 1)."""
        s = np.linspace(-1, 1, n_s)[1:-1]
        f1 = self.pot.d2F1(s)
        f2 = self.pot.d2F2(s)
        amin = float(a.data.min())
        for r in np.linspace(0.0, 1.0, n_rho)[:-1]:
            if np.all(r * f1 + f2 + amin >= 0):
                return float(r)
        return math.nan

    def a2_margin(self, a_star, a_lower, eps0=0.1) -> float:
        """kappa - 4 (a* - a_* - b_*) with kappa = min F1'' on the eps0-collars."""
        s = np.concatenate([np.linspace(-1 + 1e-9, -1 + eps0, 200), np.linspace(1 - eps0, 1 - 1e-9, 200)])
        kappa = float(self.pot.d2F1(s).min())
        b_lower = float(self.pot.d2F2(np.linspace(-1, 1, 2001)).min())
        return kappa - 4 * (a_star - a_lower - b_lower)


class DegenerateFlux(NamedTuple):
    lam_grad: VectorField  # grad[Lambda(x, phi)] = m(F''+a) grad(phi) + Gamma(phi) grad(a)
    gamma_term: VectorField  # Gamma(phi) grad(a)
    drift: VectorField  # m(phi) (phi (grad J)*1 - (grad J)*phi)

    @property
    def flux(self) -> VectorField:
        """The full phase flux m(phi) grad(mu), assembled without mu."""
        return self.lam_grad - self.gamma_term + self.drift


def degenerate_flux_fields(phi: ScalarField, a: ScalarField, kernel: KernelSpec,
                           pot: PotentialSpec, mob: MobilitySpec) -> DegenerateFlux:
    g = _check_grid(phi, a)
    pot._check(phi.data)
    law = DegenerateLaw(pot, mob)
    lam = ScalarField(g, law.Lambda(phi.data, a.data))
    lam_grad = gradient(lam)
    gx, gy = face_values(ScalarField(g, law.gamma(phi.data)))
    ga = gradient(a)
    gamma_term = VectorField(g, gx * ga.ux, gy * ga.uy)
    px, py = face_values(phi)
    mx, my = face_values(ScalarField(g, mob(phi.data)))
    jx, jy = grad_convolve_faces(kernel, phi)
    # grad(a) in the drift is sampled as (grad J)*1 so the bracket vanishes
    # identically on constants, wall cells included
    ax, ay = grad_convolve_faces(kernel, ScalarField(g, np.ones(g.shape)))
    dx = mx * (px * ax - jx)
    dy = my * (py * ay - jy)
    if not g.periodic:
        dx[0] = dx[-1] = 0.0
        dy[:, 0] = dy[:, -1] = 0.0
    return DegenerateFlux(lam_grad, gamma_term, VectorField(g, dx, dy))


def entropy_density(mob: MobilitySpec, s):
    """M(s) with m M'' = 1, M(0) = M'(0) = 0, for m = k1 (1 - s^2)."""
    if not mob.degenerate:
        raise ValueError("entropy M is defined for degenerate mobility")
    s = np.asarray(s, dtype=float)
    bad = np.abs(s) >= 1
    if bad.any():
        idx = np.unravel_index(int(np.argmax(np.abs(s) * bad)), s.shape) if s.ndim else ()
        raise PhaseOutOfRange(idx, s[idx] if s.ndim else s)
    return (s * np.arctanh(s) + 0.5 * np.log1p(-s * s)) / mob.k1


def entropy_M(mob: MobilitySpec, phi: ScalarField) -> float:
    """Integral of M(phi) over the domain."""
    return float(entropy_density(mob, phi.data).sum() * phi.grid.cell_area)
