import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nlchns.fields import Grid, ScalarField, VectorField

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_scalar(grid, rng, mean_zero=False):
    f = ScalarField(grid, rng.standard_normal(grid.shape))
    return f - f.mean() if mean_zero else f


def random_vector(grid, rng):
    ux = rng.standard_normal((grid.nx + 1, grid.ny))
    uy = rng.standard_normal((grid.nx, grid.ny + 1))
    if not grid.periodic:
        ux[0] = ux[-1] = 0.0
        uy[:, 0] = uy[:, -1] = 0.0
    return VectorField(grid, ux, uy)


def observed_order(errors, ratio=2.0):
    e = np.asarray(errors, float)
    return np.log(e[:-1] / e[1:]) / np.log(ratio)


@pytest.fixture(params=["periodic", "box"])
def bc(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
