"""Neumann/periodic Laplacian, its zero-mean inverse, dual norms, the Leray
projector and the implicit viscous solve.

The cell-centred 5-point Laplacian with Neumann ghost reflection is
diagonalised by the type-II DCT, the periodic one by the FFT; both inverses
are therefore exact up to roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NoConvergence, NonzeroMean, ViscosityRangeViolation
from .fields import (Grid, ScalarField, VectorField, divergence, gradient, inner, laplacian,
                     velocity_gradients)

DEFAULT_TOL = 1e-11


@lru_cache(maxsize=32)
def symbol(grid: Grid):
    """Eigenvalues of -Delta_h on the grid's Fourier/cosine basis (0 at the constant mode)."""
    if grid.periodic:
        p = np.arange(grid.nx)
        q = np.arange(grid.ny)
        lx = (2 / grid.hx ** 2) * (1 - np.cos(2 * np.pi * p / grid.nx))
        ly = (2 / grid.hy ** 2) * (1 - np.cos(2 * np.pi * q / grid.ny))
    else:
        p = np.arange(grid.nx)
        q = np.arange(grid.ny)
        lx = (2 / grid.hx ** 2) * (1 - np.cos(np.pi * p / grid.nx))
        ly = (2 / grid.hy ** 2) * (1 - np.cos(np.pi * q / grid.ny))
    lam = lx[:, None] + ly[None, :]
    lam.setflags(write=False)
    return lam


def _forward(grid, data):
    if grid.periodic:
        return sfft.fft2(data)
    return sfft.dctn(data, type=2, norm="ortho")


def _backward(grid, coef):
    if grid.periodic:
        return sfft.ifft2(coef).real
    return sfft.idctn(coef, type=2, norm="ortho")


def spectral_multiply(f: ScalarField, mult) -> ScalarField:
    """Apply a diagonal multiplier in the grid's eigenbasis."""
    return ScalarField(f.grid, _backward(f.grid, _forward(f.grid, f.data) * mult))


def poincare_constant(grid: Grid) -> float:
    """Largest 1/sqrt(lambda) over non-constant modes."""
    lam = symbol(grid)
    return float(1.0 / np.sqrt(lam[lam > 0].min()))


@dataclass(frozen=True)
class NeumannSolver:
    """B_N and its inverse on mean-zero fields.

    ``method`` is ``"spectral"`` (FFT on the torus, DCT in the box) or ``"cg"``
    (conjugate gradients on the 5-point stencil, residual below ``tol``).
    """

    grid: Grid
    method: str = "spectral"
    tol: float = DEFAULT_TOL

    def apply(self, f: ScalarField) -> ScalarField:
        return bn_apply(f)

    def inverse(self, f: ScalarField, check_mean=True) -> ScalarField:
        return bn_inverse(f, method=self.method, tol=self.tol, check_mean=check_mean)


def bn_apply(f: ScalarField) -> ScalarField:
    """-Delta_h f with Neumann (box) or periodic boundary conditions."""
    return -laplacian(f)


def _mean_check(f, tol=1e-12):
    m = f.mean()
    rms = float(np.sqrt(np.mean(f.data ** 2)))
    if abs(m) > tol * rms + 1e-300:
        raise NonzeroMean(f"mean {m:.3e} is not negligible against rms {rms:.3e}")
    return m


def bn_inverse(f: ScalarField, method="spectral", tol=DEFAULT_TOL, check_mean=True) -> ScalarField:
    """Zero-mean g with B_N g = f, for mean-zero f."""
    m = _mean_check(f) if check_mean else f.mean()
    g = f.grid
    if method == "spectral":
        lam = symbol(g)
        inv = np.zeros_like(lam)
        inv[lam > 0] = 1.0 / lam[lam > 0]
        out = spectral_multiply(f, inv)
    elif method == "cg":
        n = g.nx * g.ny
        rhs = (f.data - m).ravel()

        def mv(x):
            y = bn_apply(ScalarField(g, x.reshape(g.shape))).data.ravel()
            return y + x.mean()  # lift the constant null space

        A = spla.LinearOperator((n, n), matvec=mv, dtype=float)
        x, info = spla.cg(A, rhs, rtol=tol, atol=0.0, maxiter=20 * n)
        res = float(np.linalg.norm(mv(x) - rhs) / max(np.linalg.norm(rhs), 1e-300))
        if info != 0 or res > 10 * tol:
            raise NoConvergence("Neumann CG did not converge", res)
        out = ScalarField(g, x.reshape(g.shape))
    else:
        raise ValueError(f"unknown method {method!r}")
    return out - out.mean()


def vdual_norm(f: ScalarField, method="spectral") -> float:
    """||grad B_N^{-1}(f - mean f)|| + |mean f|."""
    m = f.mean()
    g0 = f - m
    g1 = bn_inverse(g0, method=method, check_mean=False)
    return float(np.sqrt(max(inner(g0, g1), 0.0))) + abs(m)


def dbn_dual_norm(f: ScalarField) -> float:
    """||(B_N + I)^{-1} f||, a discrete D(B_N)' norm."""
    out = spectral_multiply(f, 1.0 / (symbol(f.grid) + 1.0))
    return float(np.sqrt(inner(out, out)))


# --------------------------------------------------------------------------
# projection


@dataclass(frozen=True)
class LerayProjector:
    grid: Grid
    tol: float = 1e-10
    method: str = "spectral"

    def __call__(self, v: VectorField):
        return leray_project(v, tol=self.tol, method=self.method)


def leray_project(v: VectorField, tol=1e-10, method="spectral"):
    """Split v = v_out + grad(pi) with div v_out = 0; returns (v_out, pi)."""
    d = divergence(v)
    pi = bn_inverse(-d, method=method, tol=min(tol, DEFAULT_TOL) * 1e-3, check_mean=False)
    gp = gradient(pi)
    out = VectorField(v.grid, v.ux - gp.ux, v.uy - gp.uy)
    res = float(np.abs(divergence(out).data).max())
    scale = max(v.max_abs() / min(v.grid.hx, v.grid.hy), 1.0)
    if res > tol * scale:
        raise NoConvergence("Leray projection left a divergence", res)
    return out, pi


# --------------------------------------------------------------------------
# viscous operator


def _unknown_index(grid):
    """Index arrays mapping face positions to unknown numbers (-1 = fixed zero)."""
    nx, ny = grid.shape
    if grid.periodic:
        ix = (np.arange(nx + 1)[:, None] % nx) * ny + np.arange(ny)[None, :]
        iy = nx * ny + np.arange(nx)[:, None] * ny + (np.arange(ny + 1)[None, :] % ny)
        return ix, iy, 2 * nx * ny
    ix = -np.ones((nx + 1, ny), dtype=int)
    ix[1:-1] = np.arange((nx - 1) * ny).reshape(nx - 1, ny)
    nux = (nx - 1) * ny
    iy = -np.ones((nx, ny + 1), dtype=int)
    iy[:, 1:-1] = nux + np.arange(nx * (ny - 1)).reshape(nx, ny - 1)
    return ix, iy, nux + nx * (ny - 1)


def _difference(plus_idx, plus_sgn, minus_idx, minus_sgn, h, ncols):
    """Sparse rows (sgn+ u[idx+] - sgn- u[idx-]) / h, skipping fixed unknowns."""
    nrows = plus_idx.size
    rows = np.arange(nrows)
    r = np.concatenate([rows, rows])
    c = np.concatenate([plus_idx.ravel(), minus_idx.ravel()])
    v = np.concatenate([plus_sgn.ravel() / h, -minus_sgn.ravel() / h])
    keep = c >= 0
    return sp.csr_matrix((v[keep], (r[keep], c[keep])), shape=(nrows, ncols))


@lru_cache(maxsize=16)
def strain_operators(grid: Grid):
    """Sparse maps from velocity unknowns to (dx ux, dy uy) at centres and
    (dy ux, dx uy) at corners, plus the corner weights."""
    ix, iy, n = _unknown_index(grid)
    one_x = np.ones(ix.shape)
    one_y = np.ones(iy.shape)
    Dxx = _difference(ix[1:], one_x[1:], ix[:-1], one_x[:-1], grid.hx, n)
    Dyy = _difference(iy[:, 1:], one_y[:, 1:], iy[:, :-1], one_y[:, :-1], grid.hy, n)
    if grid.periodic:
        base = ix[:-1]
        Dyx = _difference(base, np.ones(base.shape), np.roll(base, 1, axis=1), np.ones(base.shape), grid.hy, n)
        basey = iy[:, :-1]
        Dxy = _difference(basey, np.ones(basey.shape), np.roll(basey, 1, axis=0), np.ones(basey.shape),
                          grid.hx, n)
        wk = np.full(grid.shape, grid.cell_area)
    else:
        nx, ny = grid.shape
        px = np.concatenate([ix[:, :1], ix, ix[:, -1:]], axis=1)
        sx = np.ones(px.shape)
        sx[:, 0] = sx[:, -1] = -1.0  # no-slip ghost
        Dyx = _difference(px[:, 1:], sx[:, 1:], px[:, :-1], sx[:, :-1], grid.hy, n)
        py = np.concatenate([iy[:1], iy, iy[-1:]], axis=0)
        sy = np.ones(py.shape)
        sy[0] = sy[-1] = -1.0
        Dxy = _difference(py[1:], sy[1:], py[:-1], sy[:-1], grid.hx, n)
        wk = np.full((nx + 1, ny + 1), grid.cell_area)
        wk[0] *= 0.5
        wk[-1] *= 0.5
        wk[:, 0] *= 0.5
        wk[:, -1] *= 0.5
    return Dxx, Dyy, Dyx, Dxy, wk


def pack(v: VectorField):
    ix, iy, n = _unknown_index(v.grid)
    x = np.zeros(n)
    mx = ix >= 0
    my = iy >= 0
    x[ix[mx]] = v.ux[mx]
    x[iy[my]] = v.uy[my]
    return x


def unpack(grid: Grid, x) -> VectorField:
    ix, iy, _ = _unknown_index(grid)
    ux = np.where(ix >= 0, x[np.maximum(ix, 0)], 0.0)
    uy = np.where(iy >= 0, x[np.maximum(iy, 0)], 0.0)
    return VectorField(grid, ux, uy)


def corner_average(grid: Grid, c):
    """Average a cell-centred array to the cell corners (Neumann padding in a box)."""
    if grid.periodic:
        return 0.25 * (c + np.roll(c, 1, 0) + np.roll(c, 1, 1) + np.roll(c, (1, 1), (0, 1)))
    p = np.pad(c, 1, mode="edge")
    return 0.25 * (p[1:, 1:] + p[:-1, 1:] + p[1:, :-1] + p[:-1, :-1])


def viscous_matrix(grid: Grid, nu_cells):
    """Sparse L with <L u, v> = sum 2 nu D(u):D(v) (face-weighted), i.e. L = -2 div(nu D .)."""
    Dxx, Dyy, Dyx, Dxy, wk = strain_operators(grid)
    w = grid.cell_area
    nu_c = np.asarray(nu_cells, dtype=float).ravel()
    nu_k = corner_average(grid, np.asarray(nu_cells, dtype=float).reshape(grid.shape)).ravel()
    Exy = 0.5 * (Dyx + Dxy)
    L = (Dxx.T @ sp.diags(2 * nu_c) @ Dxx + Dyy.T @ sp.diags(2 * nu_c) @ Dyy
         + Exy.T @ sp.diags(4 * nu_k * wk.ravel() / w) @ Exy)
    return L.tocsr()


def viscous_dissipation(v: VectorField, nu_cells) -> float:
    """2 || sqrt(nu) D u ||^2 in the discrete quadrature; equals <L u, u>."""
    g = v.grid
    dxux, dyuy, dyux, dxuy, wk = velocity_gradients(v)
    nu_c = np.broadcast_to(np.asarray(nu_cells, dtype=float), g.shape)
    nu_k = corner_average(g, nu_c)
    exy = 0.5 * (dyux + dxuy)
    return float(g.cell_area * np.sum(2 * nu_c * (dxux ** 2 + dyuy ** 2)) + np.sum(4 * nu_k * wk * exy ** 2))


def variable_viscosity_solve(rhs: VectorField, nu_field: ScalarField, dt: float,
                             nu_bounds=None, tol=DEFAULT_TOL, x0: VectorField | None = None):
    """Solve (I - 2 dt div(nu D .)) w = rhs by Jacobi-preconditioned CG.

    Returns ``(w, iterations)``.
    """
    g = rhs.grid
    nu = nu_field.data
    if nu_bounds is not None:
        lo, hi = nu_bounds
        if nu.min() < lo * (1 - 1e-12) or nu.max() > hi * (1 + 1e-12):
            raise ViscosityRangeViolation(f"nu in [{nu.min():.4g}, {nu.max():.4g}] outside [{lo}, {hi}]")
    b = pack(rhs)
    if dt == 0:
        return unpack(g, b), 0
    A = (sp.identity(b.size, format="csr") + dt * viscous_matrix(g, nu)).tocsr()
    M = sp.diags(1.0 / A.diagonal())
    it = [0]

    def count(_):
        it[0] += 1

    x0v = pack(x0) if x0 is not None else b
    x, info = spla.cg(A, b, x0=x0v, rtol=tol, atol=0.0, M=M, maxiter=10 * b.size, callback=count)
    bn = max(np.linalg.norm(b), 1e-300)
    res = float(np.linalg.norm(A @ x - b) / bn)
    if info != 0 or res > 10 * tol:
        raise NoConvergence("viscous CG did not converge", res)
    return unpack(g, x), it[0]


def _second_difference(n, h, periodic):
    main = np.full(n, -2.0)
    off = np.ones(n - 1)
    D = sp.diags([off, main, off], [-1, 0, 1], shape=(n, n), format="lil")
    if periodic:
        D[0, n - 1] = 1.0
        D[n - 1, 0] = 1.0
    else:
        D[0, 0] = -1.0
        D[n - 1, n - 1] = -1.0
    return D.tocsr() / h ** 2


@lru_cache(maxsize=16)
def laplacian_matrix(grid: Grid):
    """Sparse Delta_h acting on row-major raveled cell data; equals ``laplacian``."""
    Dx = _second_difference(grid.nx, grid.hx, grid.periodic)
    Dy = _second_difference(grid.ny, grid.hy, grid.periodic)
    return (sp.kron(Dx, sp.identity(grid.ny)) + sp.kron(sp.identity(grid.nx), Dy)).tocsc()


def helmholtz_solve(rhs: VectorField, nu: float, dt: float) -> VectorField:
    """Componentwise (I - dt nu Delta_h)^{-1} on the periodic MAC grid by FFT.

    For constant nu the strain operator and nu Delta_h differ by a gradient of
    the divergence, so after Leray projection this agrees with
    :func:`variable_viscosity_solve`.
    """
    g = rhs.grid
    if not g.periodic:
        raise ValueError("spectral viscous solve needs periodic boundaries")
    mult = 1.0 / (1.0 + dt * nu * symbol(g))
    ux = sfft.ifft2(sfft.fft2(rhs.ux[:-1]) * mult).real
    uy = sfft.ifft2(sfft.fft2(rhs.uy[:, :-1]) * mult).real
    return VectorField(g, ux, uy)
