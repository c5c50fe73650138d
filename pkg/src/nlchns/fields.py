"""Uniform 2D grids, MAC-staggered fields and the discrete calculus on them.

Scalars live at cell centres, velocity components on the cell faces normal
to them (``ux`` on x-faces, ``uy`` on y-faces).  Two boundary modes are
supported: ``"periodic"`` (all fields wrap) and ``"box"`` (closed rectangle,
homogeneous Neumann reflection for scalars, no-slip velocity).

Arrays are indexed ``[i, j]`` with ``i`` running along x.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import GridMismatch

PERIODIC = "periodic"
BOX = "box"
_BC_ALIASES = {"periodic": PERIODIC, "p": PERIODIC, "box": BOX, "b": BOX}


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0
    bc: str = PERIODIC

    def __post_init__(self):
        bc = _BC_ALIASES.get(str(self.bc).lower())
        if bc is None:
            raise ValueError(f"unknown boundary mode {self.bc!r}")
        object.__setattr__(self, "bc", bc)
        for n in (self.nx, self.ny):
            if int(n) != n or n < 8 or n % 2:
                raise ValueError(f"cell counts must be even integers >= 8, got {n}")
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "ny", int(self.ny))
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError("side lengths must be positive")
        object.__setattr__(self, "lx", float(self.lx))
        object.__setattr__(self, "ly", float(self.ly))

    @property
    def periodic(self) -> bool:
        return self.bc == PERIODIC

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def area(self) -> float:
        return self.lx * self.ly

    @property
    def shape(self):
        return (self.nx, self.ny)

    @property
    def diameter(self) -> float:
        return float(np.hypot(self.lx, self.ly))

    @cached_property
    def xc(self):
        return (np.arange(self.nx) + 0.5) * self.hx

    @cached_property
    def yc(self):
        return (np.arange(self.ny) + 0.5) * self.hy

    def centers(self):
        """Meshgrid (X, Y) of cell centres, ``indexing='ij'``."""
        return np.meshgrid(self.xc, self.yc, indexing="ij")

    def xfaces(self):
        x = np.arange(self.nx + 1) * self.hx
        return np.meshgrid(x, self.yc, indexing="ij")

    def yfaces(self):
        y = np.arange(self.ny + 1) * self.hy
        return np.meshgrid(self.xc, y, indexing="ij")

    def refine(self, factor=2) -> "Grid":
        return Grid(self.nx * factor, self.ny * factor, self.lx, self.ly, self.bc)


def _check_same(*grids):
    g0 = grids[0]
    for g in grids[1:]:
        if g != g0:
            raise GridMismatch(f"{g} != {g0}")
    return g0


class ScalarField:
    """Cell-centred samples on a grid."""

    __slots__ = ("grid", "data")

    def __init__(self, grid: Grid, data):
        data = np.asarray(data, dtype=float)
        if data.shape != grid.shape:
            data = np.broadcast_to(data, grid.shape).copy()
        assert np.all(np.isfinite(data)), "non-finite scalar field"
        self.grid = grid
        self.data = data

    @classmethod
    def constant(cls, grid, value):
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid, fn):
        X, Y = grid.centers()
        return cls(grid, fn(X, Y))

    def copy(self):
        return ScalarField(self.grid, self.data.copy())

    def mean(self) -> float:
        return float(self.data.mean())

    def integral(self) -> float:
        return float(self.data.sum() * self.grid.cell_area)

    def _other(self, other):
        if isinstance(other, ScalarField):
            _check_same(self.grid, other.grid)
            return other.data
        return other

    def __add__(self, other):
        return ScalarField(self.grid, self.data + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return ScalarField(self.grid, self.data - self._other(other))

    def __rsub__(self, other):
        return ScalarField(self.grid, self._other(other) - self.data)

    def __mul__(self, other):
        return ScalarField(self.grid, self.data * self._other(other))

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.data)

    def __repr__(self):
        return f"ScalarField({self.grid}, mean={self.mean():.6g})"


class VectorField:
    """MAC-staggered vector samples.

    ``ux`` has shape (nx+1, ny) and ``uy`` shape (nx, ny+1).  In periodic mode
    the last face row duplicates the first one; in box mode the boundary-normal
    components must vanish.
    """

    __slots__ = ("grid", "ux", "uy")

    def __init__(self, grid: Grid, ux, uy):
        ux = np.array(ux, dtype=float)
        uy = np.array(uy, dtype=float)
        nx, ny = grid.shape
        if grid.periodic:
            if ux.shape == (nx, ny):
                ux = np.concatenate([ux, ux[:1]], axis=0)
            if uy.shape == (nx, ny):
                uy = np.concatenate([uy, uy[:, :1]], axis=1)
        if ux.shape != (nx + 1, ny) or uy.shape != (nx, ny + 1):
            raise ValueError(f"bad face array shapes {ux.shape}, {uy.shape} for {grid}")
        if grid.periodic:
            ux[-1] = ux[0]
            uy[:, -1] = uy[:, 0]
        elif (ux[0].any() or ux[-1].any() or uy[:, 0].any() or uy[:, -1].any()):
            raise ValueError("box mode requires zero normal velocity on the boundary")
        assert np.all(np.isfinite(ux)) and np.all(np.isfinite(uy)), "non-finite vector field"
        self.grid = grid
        self.ux = ux
        self.uy = uy

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((grid.nx + 1, grid.ny)), np.zeros((grid.nx, grid.ny + 1)))

    @classmethod
    def from_function(cls, grid, fx, fy):
        """Sample component functions at the face midpoints (boundary normals zeroed in box mode)."""
        ux = fx(*grid.xfaces())
        uy = fy(*grid.yfaces())
        if not grid.periodic:
            ux[0] = ux[-1] = 0.0
            uy[:, 0] = uy[:, -1] = 0.0
        return cls(grid, ux, uy)

    def copy(self):
        return VectorField(self.grid, self.ux.copy(), self.uy.copy())

    def _other(self, other):
        if isinstance(other, VectorField):
            _check_same(self.grid, other.grid)
            return other.ux, other.uy
        return other, other

    def __add__(self, other):
        ox, oy = self._other(other)
        return VectorField(self.grid, self.ux + ox, self.uy + oy)

    __radd__ = __add__

    def __sub__(self, other):
        ox, oy = self._other(other)
        return VectorField(self.grid, self.ux - ox, self.uy - oy)

    def __mul__(self, c):
        return VectorField(self.grid, self.ux * c, self.uy * c)

    __rmul__ = __mul__

    def __neg__(self):
        return VectorField(self.grid, -self.ux, -self.uy)

    def max_abs(self) -> float:
        return float(max(np.abs(self.ux).max(), np.abs(self.uy).max()))

    def __repr__(self):
        return f"VectorField({self.grid}, max|u|={self.max_abs():.6g})"


# --------------------------------------------------------------------------
# quadrature


def _xface_weights(grid):
    w = np.full((grid.nx + 1, grid.ny), grid.cell_area)
    if grid.periodic:
        w[-1] = 0.0
    else:
        w[0] *= 0.5
        w[-1] *= 0.5
    return w


def _yface_weights(grid):
    w = np.full((grid.nx, grid.ny + 1), grid.cell_area)
    if grid.periodic:
        w[:, -1] = 0.0
    else:
        w[:, 0] *= 0.5
        w[:, -1] *= 0.5
    return w


def inner(a, b) -> float:
    """Quadrature inner product of two scalar or two vector fields."""
    g = _check_same(a.grid, b.grid)
    if isinstance(a, ScalarField):
        return float(np.sum(a.data * b.data) * g.cell_area)
    return float(np.sum(_xface_weights(g) * a.ux * b.ux) + np.sum(_yface_weights(g) * a.uy * b.uy))


def speed_squared(v: VectorField):
    """|u|^2 at cell centres as the average of squared face values."""
    return 0.5 * (v.ux[1:] ** 2 + v.ux[:-1] ** 2) + 0.5 * (v.uy[:, 1:] ** 2 + v.uy[:, :-1] ** 2)


# --------------------------------------------------------------------------
# discrete calculus


def gradient(f: ScalarField) -> VectorField:
    """Compact centred differences from cell centres to faces."""
    g = f.grid
    d = f.data
    if g.periodic:
        gx = (d - np.roll(d, 1, axis=0)) / g.hx
        gy = (d - np.roll(d, 1, axis=1)) / g.hy
        return VectorField(g, gx, gy)
    gx = np.zeros((g.nx + 1, g.ny))
    gy = np.zeros((g.nx, g.ny + 1))
    gx[1:-1] = (d[1:] - d[:-1]) / g.hx
    gy[:, 1:-1] = (d[:, 1:] - d[:, :-1]) / g.hy
    return VectorField(g, gx, gy)


def divergence(v: VectorField) -> ScalarField:
    g = v.grid
    return ScalarField(g, (v.ux[1:] - v.ux[:-1]) / g.hx + (v.uy[:, 1:] - v.uy[:, :-1]) / g.hy)


def laplacian(f: ScalarField) -> ScalarField:
    return divergence(gradient(f))


def face_average(f: ScalarField) -> VectorField:
    """Arithmetic mean of the two neighbouring cells on every face.

    Box-mode boundary faces carry the Neumann-reflected cell value, but since
    box boundary normals must vanish they are returned as zero; use
    :func:`face_values` when the raw interpolant is needed.
    """
    fx, fy = face_values(f)
    if not f.grid.periodic:
        fx[0] = fx[-1] = 0.0
        fy[:, 0] = fy[:, -1] = 0.0
    return VectorField(f.grid, fx, fy)


def face_values(f: ScalarField):
    """Face interpolants (fx, fy) as raw arrays, boundary faces included."""
    g = f.grid
    d = f.data
    if g.periodic:
        fx = 0.5 * (d + np.roll(d, 1, axis=0))
        fy = 0.5 * (d + np.roll(d, 1, axis=1))
        return np.concatenate([fx, fx[:1]], axis=0), np.concatenate([fy, fy[:, :1]], axis=1)
    fx = np.empty((g.nx + 1, g.ny))
    fy = np.empty((g.nx, g.ny + 1))
    fx[1:-1] = 0.5 * (d[1:] + d[:-1])
    fx[0], fx[-1] = d[0], d[-1]
    fy[:, 1:-1] = 0.5 * (d[:, 1:] + d[:, :-1])
    fy[:, 0], fy[:, -1] = d[:, 0], d[:, -1]
    return fx, fy


def face_product(fx, fy, v: VectorField) -> VectorField:
    """Multiply face arrays (e.g. from :func:`face_values`) into a vector field."""
    return VectorField(v.grid, fx * v.ux, fy * v.uy)


def center_average(v: VectorField):
    """Velocity components interpolated to cell centres."""
    return 0.5 * (v.ux[1:] + v.ux[:-1]), 0.5 * (v.uy[:, 1:] + v.uy[:, :-1])


def velocity_gradients(v: VectorField):
    """The four MAC velocity derivatives with their quadrature weights.

    Returns ``(dxux, dyuy)`` at cell centres and ``(dyux, dxuy, wk)`` at cell
    corners, ``wk`` being the corner weights (half on walls, quarter at the
    domain corners in box mode).  Box walls use the no-slip ghost value
    (ghost = -interior) for tangential components.
    """
    g = v.grid
    dxux = (v.ux[1:] - v.ux[:-1]) / g.hx
    dyuy = (v.uy[:, 1:] - v.uy[:, :-1]) / g.hy
    if g.periodic:
        ux = v.ux[:-1]
        uy = v.uy[:, :-1]
        # corner (i, j) sits at (i hx, j hy)
        dyux = (ux - np.roll(ux, 1, axis=1)) / g.hy
        dxuy = (uy - np.roll(uy, 1, axis=0)) / g.hx
        wk = np.full(g.shape, g.cell_area)
        return dxux, dyuy, dyux, dxuy, wk
    nx, ny = g.shape
    uxp = np.zeros((nx + 1, ny + 2))
    uxp[:, 1:-1] = v.ux
    uxp[:, 0] = -v.ux[:, 0]
    uxp[:, -1] = -v.ux[:, -1]
    dyux = (uxp[:, 1:] - uxp[:, :-1]) / g.hy
    uyp = np.zeros((nx + 2, ny + 1))
    uyp[1:-1] = v.uy
    uyp[0] = -v.uy[0]
    uyp[-1] = -v.uy[-1]
    dxuy = (uyp[1:] - uyp[:-1]) / g.hx
    wk = np.full((nx + 1, ny + 1), g.cell_area)
    wk[0] *= 0.5
    wk[-1] *= 0.5
    wk[:, 0] *= 0.5
    wk[:, -1] *= 0.5
    return dxux, dyuy, dyux, dxuy, wk


# --------------------------------------------------------------------------
# norms


@dataclass(frozen=True)
class NormSuite:
    l2: float
    l4: float
    linf: float
    h1_semi: float

    def holder_ok(self, area, rtol=1e-12) -> bool:
        return self.l2 <= area ** 0.25 * self.l4 * (1 + rtol) + 1e-300


def h1_seminorm(f) -> float:
    if isinstance(f, ScalarField):
        gr = gradient(f)
        return float(np.sqrt(inner(gr, gr)))
    dxux, dyuy, dyux, dxuy, wk = velocity_gradients(f)
    w = f.grid.cell_area
    s = w * np.sum(dxux ** 2 + dyuy ** 2) + np.sum(wk * (dyux ** 2 + dxuy ** 2))
    return float(np.sqrt(s))


def lp_norm(f, p) -> float:
    w = f.grid.cell_area
    if isinstance(f, ScalarField):
        a = np.abs(f.data)
        if p == np.inf:
            return float(a.max())
        return float((np.sum(a ** p) * w) ** (1.0 / p))
    s = speed_squared(f)
    if p == np.inf:
        return float(np.sqrt(s.max()))
    return float((np.sum(s ** (p / 2)) * w) ** (1.0 / p))


def norms(f) -> NormSuite:
    """L2, L4, Linf and H1-seminorm of a scalar or vector field (midpoint quadrature)."""
    return NormSuite(lp_norm(f, 2), lp_norm(f, 4), lp_norm(f, np.inf), h1_seminorm(f))


# --------------------------------------------------------------------------
# convective term


def skew_advection(u: VectorField, v: VectorField) -> VectorField:
    """Skew-symmetric MAC discretisation of ``(u . grad) v``.

    Each component of ``v`` is transported on its own staggered lattice with
    centred fluxes, ``(S q)_n = sum_dir [F_{n+} q_{n+} - F_{n-} q_{n-}] / (2h)``.
    The operator matrix is exactly antisymmetric for every ``u``, hence
    ``<S(u) v, v> = 0`` to roundoff.
    """
    g = _check_same(u.grid, v.grid)
    hx, hy = g.hx, g.hy
    if g.periodic:
        ux, uy = u.ux[:-1], u.uy[:, :-1]
        vx, vy = v.ux[:-1], v.uy[:, :-1]
        r = np.roll
        # x-component nodes at (i hx, (j+1/2) hy)
        U = 0.5 * (ux + r(ux, -1, 0))  # centre between node i and i+1
        V = 0.5 * (uy + r(uy, 1, 0))  # corner (i hx, j hy) below node (i, j)
        sx = (U * r(vx, -1, 0) - r(U, 1, 0) * r(vx, 1, 0)) / (2 * hx) + (
            r(V, -1, 1) * r(vx, -1, 1) - V * r(vx, 1, 1)
        ) / (2 * hy)
        # y-component nodes at ((i+1/2) hx, j hy)
        Vc = 0.5 * (uy + r(uy, -1, 1))
        Uk = 0.5 * (ux + r(ux, 1, 1))  # corner (i hx, j hy), left of node (i, j)
        sy = (Vc * r(vy, -1, 1) - r(Vc, 1, 1) * r(vy, 1, 1)) / (2 * hy) + (
            r(Uk, -1, 0) * r(vy, -1, 0) - Uk * r(vy, 1, 0)
        ) / (2 * hx)
        return VectorField(g, sx, sy)

    nx, ny = g.shape
    sx = np.zeros((nx + 1, ny))
    sy = np.zeros((nx, ny + 1))
    vx, vy = v.ux, v.uy
    # x-nodes: interior i = 1..nx-1
    U = 0.5 * (u.ux[1:] + u.ux[:-1])  # (nx, ny) centres; U[i] between nodes i, i+1
    Vk = np.zeros((nx + 1, ny + 1))  # corner velocities uy at x = i hx
    Vk[1:-1] = 0.5 * (u.uy[1:] + u.uy[:-1])
    vxp = np.zeros((nx + 1, ny + 2))
    vxp[:, 1:-1] = vx  # wall-corner flux is zero, ghost values never used
    sx[1:-1] = (U[1:] * vx[2:] - U[:-1] * vx[:-2]) / (2 * hx) + (
        Vk[1:-1, 1:] * vxp[1:-1, 2:] - Vk[1:-1, :-1] * vxp[1:-1, :-2]
    ) / (2 * hy)
    # y-nodes: interior j = 1..ny-1
    Vc = 0.5 * (u.uy[:, 1:] + u.uy[:, :-1])  # (nx, ny)
    Uk = np.zeros((nx + 1, ny + 1))
    Uk[:, 1:-1] = 0.5 * (u.ux[:, 1:] + u.ux[:, :-1])
    vyp = np.zeros((nx + 2, ny + 1))
    vyp[1:-1] = vy
    sy[:, 1:-1] = (Vc[:, 1:] * vy[:, 2:] - Vc[:, :-1] * vy[:, :-2]) / (2 * hy) + (
        Uk[1:, 1:-1] * vyp[2:, 1:-1] - Uk[:-1, 1:-1] * vyp[:-2, 1:-1]
    ) / (2 * hx)
    return VectorField(g, sx, sy)


def trilinear_b(u: VectorField, v: VectorField, w: VectorField) -> float:
    """Discrete b(u, v, w) = <(u . grad) v, w>."""
    _check_same(u.grid, v.grid, w.grid)
    return inner(skew_advection(u, v), w)
