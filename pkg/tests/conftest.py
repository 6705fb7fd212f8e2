import numpy as np
import pytest

from hvacfem.adjoint import ClimateModel
from hvacfem.geometry import FanRegion, RegionSpec, build_mesh, rect


@pytest.fixture(scope="session")
def unit_square_mesh():
    return build_mesh(rect(0, 0, 1, 1), RegionSpec(), 0.25)


@pytest.fixture(scope="session")
def two_door_regions():
    """3x2 m flat with two doorways in interior wall strips, one fan, two
    sensors and a target area on the right."""
    return RegionSpec(
        door_regions=[rect(0.9, 0.8, 1.1, 1.4), rect(1.9, 0.4, 2.1, 1.0)],
        wall_regions=[
            rect(0.9, 0.0, 1.1, 0.8),
            rect(0.9, 1.4, 1.1, 2.0),
            rect(1.9, 0.0, 2.1, 0.4),
            rect(1.9, 1.0, 2.1, 2.0),
        ],
        fan_regions=[FanRegion(rect(0.2, 0.2, 0.7, 0.45), (1.0, 0.0))],
        sensor_points=[[0.5, 1.5], [2.5, 1.0]],
        sensor_radius=0.4,
        target_region=rect(2.2, 0.2, 2.8, 1.8),
    )


@pytest.fixture(scope="session")
def two_door_mesh(two_door_regions):
    return build_mesh(rect(0, 0, 3, 2), two_door_regions, 0.4)


def make_model(mesh, regions, n_steps=5, horizon=50.0, t_ambient=5.0):
    return ClimateModel(
        mesh=mesh,
        regions=regions,
        reynolds=100.0,
        kappa0=1e-2,
        kappa_wall=1e-4,
        alpha_wall=1e3,
        t_ambient=t_ambient,
        times=np.linspace(0.0, horizon, n_steps + 1),
    )


@pytest.fixture()
def two_door_model(two_door_mesh, two_door_regions):
    return make_model(two_door_mesh, two_door_regions)
