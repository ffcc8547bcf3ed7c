import numpy as np
import pytest

from tumourid.forward import Params, SolverConfig, initial_fields, simulate
from tumourid.mesh import build_uniform
from tumourid.model import ModelConfig
from tumourid.objective import DesiredStates

SQUARE = (-5.0, 5.0, -5.0, 5.0)


@pytest.fixture(scope="session")
def desk_model():
    return ModelConfig(eps=0.1, s=1e3)


@pytest.fixture(scope="session")
def small_problem(desk_model):
    """16x16 mesh, five steps, observations generated at (7, 6, 2)."""
    mesh = build_uniform(SQUARE, 16)
    phi0, sigma0 = initial_fields(mesh, desk_model)
    solver = SolverConfig(tau=0.1, K=5)
    truth = simulate(phi0, sigma0, Params(7, 6, 2), solver, desk_model)
    data = DesiredStates([s.field("phi") for s in truth.states[1:]], phi0=phi0, sigma0=sigma0)
    return dict(mesh=mesh, phi0=phi0, sigma0=sigma0, solver=solver, truth=truth,
                data=data, model=desk_model)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
