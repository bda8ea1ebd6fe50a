import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from restir_ir.envmap import EnvMap
from restir_ir.mesh import grid_plane, icosphere
from restir_ir.render import Camera, Scene

settings.register_profile(
    "repo", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running statistical or recovery test")
    config.addinivalue_line("markers", "acceptance: one test per acceptance criterion")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def sphere_scene():
    mesh = icosphere(3, 1.0)
    mesh.vertex_materials[:, :3] = 0.18
    mesh.vertex_materials[:, 3] = 0.5
    return Scene(mesh, EnvMap.constant(1.0, 32, 64), specular=0.0)


@pytest.fixture
def front_camera():
    return Camera.look_at((0.0, -4.0, 0.0), (0.0, 0.0, 0.0), fov_x=math.radians(30), resolution=(24, 24))


def sphere_on_plane(albedo=0.5, roughness=0.5, sub=2):
    mesh = icosphere(sub, 0.6).concat(grid_plane(6, 6, (4.0, 4.0), (0.0, 0.0, -0.6)))
    mesh.vertex_materials[:, :3] = albedo
    mesh.vertex_materials[:, 3] = roughness
    return mesh


def sun_env(value=0.2, hot=30.0, height=32, width=64, rows=(4, 8), cols=(10, 16)):
    env = EnvMap.constant(value, height, width)
    env.radiance[rows[0] : rows[1], cols[0] : cols[1]] = hot
    from restir_ir.envmap import build_sampling_table

    return build_sampling_table(env)
