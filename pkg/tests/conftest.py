import numpy as np
import pytest

from cpmdd.band import build_band_tube
from cpmdd.geometry import Circle, Sphere
from cpmdd.models import RunConfig, SolverConfig
from cpmdd.operators import GlobalOperators
from cpmdd.partition import build_graph
from cpmdd.pipeline import discretize


@pytest.fixture(scope="session")
def circle():
    return Circle(1.0)


@pytest.fixture(scope="session")
def circle_grid(circle):
    return build_band_tube(circle, 0.1, 2)


@pytest.fixture(scope="session")
def circle_ops(circle_grid):
    return GlobalOperators.build(circle_grid, 1.0)


@pytest.fixture(scope="session")
def circle_graph(circle_grid):
    return build_graph(circle_grid)


@pytest.fixture(scope="session")
def sphere_grid():
    return build_band_tube(Sphere(1.0), 0.1, 2)


@pytest.fixture(scope="session")
def circle_config():
    return RunConfig(
        surface={"kind": "circle"},
        h=0.05,
        rhs="circle-mode",
        solver=SolverConfig(n_sub=2, n_overlap=4),
    )


@pytest.fixture(scope="session")
def circle_disc(circle_config):
    return discretize(circle_config)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def octahedron():
    """Unit octahedron with outward-oriented faces."""
    V = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=float)
    faces = []
    for sx, ix in ((1, 0), (-1, 1)):
        for sy, iy in ((1, 2), (-1, 3)):
            for sz, iz in ((1, 4), (-1, 5)):
                faces.append([ix, iy, iz] if sx * sy * sz > 0 else [ix, iz, iy])
    return V, np.array(faces)
