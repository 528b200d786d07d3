import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")

from bidomain_dd.mesh import ConductivityTensors, MeshConfig, build_mesh  # noqa: E402
from bidomain_dd.stepper import BidomainProblem, Stimulus, SystemParams  # noqa: E402
from bidomain_dd.topology import partition_box  # noqa: E402

CRITERIA: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    CRITERIA[number] = (passed, detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        passed, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'} | {detail}")


def small_problem(shape=(4, 4, 4), extent=(1.0, 1.0, 0.5), stimulus=False, cond=None, dt=0.05):
    mesh = build_mesh(MeshConfig(nx=shape[0], ny=shape[1], nz=shape[2], slab_extent=extent))
    stim = Stimulus(region="corner-sphere", radius=0.3) if stimulus else Stimulus(region="none")
    return BidomainProblem(mesh, cond or ConductivityTensors(), SystemParams(dt=dt, stimulus=stim))


def random_state(problem, rng, v_scale=60.0):
    n = problem.n_nodes
    u = np.empty(2 * n)
    u[1::2] = rng.normal(0.0, 5.0, n)
    u[0::2] = u[1::2] + rng.uniform(-80.0, 110.0, n) * v_scale / 100.0
    w = rng.uniform(0.0, 1.0, n)
    return u, w


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def problem444():
    return small_problem()


@pytest.fixture(scope="session")
def decomp_factory():
    def make(problem, grid):
        return partition_box(problem.mesh, grid)
    return make
