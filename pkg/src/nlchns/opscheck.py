"""Small-grid oracle suite: every fast operator against a direct evaluation.

Each check draws random cases on 12x12 grids (both boundary modes) and
returns the largest absolute deviation.  Operators can be swapped through
``ops`` to exercise the suite itself (fault injection).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import elliptic, fields
from .constitutive import KernelSpec, build_a, convolve
from .diagnostics import interaction_energy
from .fields import Grid, ScalarField, VectorField, inner

TOLERANCES = {
    "convolution": 1e-12,
    "bn_roundtrip": 1e-10,
    "bn_symmetry": 1e-12,
    "adjointness": 1e-12,
    "trilinear": 1e-12,
    "energy_two_form": 1e-10,
}

KERNEL = KernelSpec("gaussian", eps=0.15, mass=2.0)


def _grids(n=12):
    return [Grid(n, n, 1.0, 1.0, "periodic"), Grid(n, n, 1.0, 1.0, "box")]


def _random_scalar(grid, rng):
    return ScalarField(grid, rng.standard_normal(grid.shape))


def _random_vector(grid, rng):
    ux = rng.standard_normal((grid.nx + 1, grid.ny))
    uy = rng.standard_normal((grid.nx, grid.ny + 1))
    if not grid.periodic:
        ux[0] = ux[-1] = 0.0
        uy[:, 0] = uy[:, -1] = 0.0
    return VectorField(grid, ux, uy)


def _pair_offsets(n, h, periodic):
    """(i - j) h for all index pairs, minimal image on the torus."""
    d = np.subtract.outer(np.arange(n), np.arange(n))
    if periodic:
        d = np.mod(d, n)
        d = np.where(d > n / 2, d - n, d)
    return d * h


def kernel_matrix(kernel: KernelSpec, grid: Grid):
    """Dense J(x_i - x_j) over all cell pairs, indexed [i, j, k, l]."""
    dx = _pair_offsets(grid.nx, grid.hx, grid.periodic)
    dy = _pair_offsets(grid.ny, grid.hy, grid.periodic)
    return kernel(dx[:, None, :, None], dy[None, :, None, :], grid)


def direct_convolution(kernel: KernelSpec, f: ScalarField) -> np.ndarray:
    """sum_j J(x_i - x_j) f_j h^2 by explicit double sum."""
    g = f.grid
    return np.einsum("ijkl,kl->ij", kernel_matrix(kernel, g), f.data) * g.cell_area


def direct_interaction(kernel: KernelSpec, f: ScalarField) -> float:
    """1/4 sum_i sum_j J(x_i - x_j) (f_i - f_j)^2 h^4."""
    g = f.grid
    K = kernel_matrix(kernel, g)
    d = f.data[:, :, None, None] - f.data[None, None, :, :]
    return 0.25 * float(np.sum(K * d * d)) * g.cell_area ** 2


@dataclass(frozen=True)
class CheckResult:
    name: str
    deviation: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.deviation <= self.tol)

    def line(self) -> str:
        return f"{self.name:<16s} max_dev={self.deviation:.3e} tol={self.tol:.0e} {'PASS' if self.passed else 'FAIL'}"


def check_convolution(rng, cases, ops):
    dev = 0.0
    for g in _grids():
        for _ in range(cases):
            f = _random_scalar(g, rng)
            dev = max(dev, float(np.abs(ops["convolve"](KERNEL, f).data - direct_convolution(KERNEL, f)).max()))
    return dev


def check_bn_roundtrip(rng, cases, ops):
    dev = 0.0
    for g in _grids():
        for _ in range(cases):
            f = _random_scalar(g, rng)
            f = f - f.mean()
            back = ops["bn_inverse"](ops["bn_apply"](f))
            dev = max(dev, float(np.abs(back.data - f.data).max()))
    return dev


def check_bn_symmetry(rng, cases, ops):
    dev = 0.0
    for g in _grids():
        for _ in range(cases):
            f = _random_scalar(g, rng)
            h = _random_scalar(g, rng)
            f, h = f - f.mean(), h - h.mean()
            dev = max(dev, abs(inner(f, ops["bn_inverse"](h)) - inner(h, ops["bn_inverse"](f))))
    return dev


def check_adjointness(rng, cases, ops):
    """<grad f, v> + <f, div v> = 0."""
    dev = 0.0
    for g in _grids():
        for _ in range(cases):
            f = _random_scalar(g, rng)
            v = _random_vector(g, rng)
            dev = max(dev, abs(inner(ops["gradient"](f), v) + inner(f, ops["divergence"](v))))
    return dev


def check_trilinear(rng, cases, ops):
    """b(u, v, w) = -b(u, w, v) for divergence-free u."""
    dev = 0.0
    for g in _grids():
        for _ in range(cases):
            u = elliptic.leray_project(_random_vector(g, rng))[0]
            v = _random_vector(g, rng)
            w = _random_vector(g, rng)
            dev = max(dev, abs(ops["trilinear"](u, v, w) + ops["trilinear"](u, w, v)))
    return dev


def check_energy_two_form(rng, cases, ops):
    dev = 0.0
    for g in _grids():
        a = build_a(KERNEL, g)
        for _ in range(cases):
            f = _random_scalar(g, rng)
            dev = max(dev, abs(ops["interaction"](f, a, KERNEL) - direct_interaction(KERNEL, f)))
    return dev


CHECKS = {
    "convolution": check_convolution,
    "bn_roundtrip": check_bn_roundtrip,
    "bn_symmetry": check_bn_symmetry,
    "adjointness": check_adjointness,
    "trilinear": check_trilinear,
    "energy_two_form": check_energy_two_form,
}


def default_ops():
    return {
        "convolve": convolve,
        "bn_apply": elliptic.bn_apply,
        "bn_inverse": lambda f: elliptic.bn_inverse(f, check_mean=False),
        "gradient": fields.gradient,
        "divergence": fields.divergence,
        "trilinear": fields.trilinear_b,
        "interaction": interaction_energy,
    }


def broken_gradient(f: ScalarField) -> VectorField:
    """Gradient with a one-sided error in the x stencil (fault injection)."""
    v = fields.gradient(f)
    return VectorField(v.grid, v.ux * (1 + 1e-6), v.uy)


def run_opscheck(cases=10, seed=0, ops=None, checks=None):
    """Run the oracle checks; returns a list of CheckResult in a fixed order."""
    table = default_ops()
    table.update(ops or {})
    out = []
    for k, name in enumerate(checks or CHECKS):
        rng = np.random.default_rng([seed, k])
        out.append(CheckResult(name, float(CHECKS[name](rng, cases, table)), TOLERANCES[name]))
    return out
