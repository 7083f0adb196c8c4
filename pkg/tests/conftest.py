"""
Shared fixtures: small grids, Gaussian data and an isolated configuration.
"""

import math

import pytest

from nls_decay_lab.config import reset_config
from nls_decay_lab.grid import make_grid
from nls_decay_lab.propagators import EquationSpec, SolverConfig, evolve
from nls_decay_lab.transforms import GaussianDatum


@pytest.fixture(autouse=True)
def isolated_config(monkeypatch, tmp_path):
    """Fresh global configuration per test, with runs written under tmp_path."""
    monkeypatch.setenv("RUNNER_OUTPUT_ROOT", str(tmp_path / "runs"))
    monkeypatch.delenv("LOG_FILE", raising=False)
    monkeypatch.delenv("SOLVER_DT", raising=False)
    reset_config()
    yield
    reset_config()


@pytest.fixture
def grid_1d():
    return make_grid(1, 32.0, 256)


@pytest.fixture
def grid_2d():
    return make_grid(2, 16.0, 64)


@pytest.fixture
def grid_3d():
    return make_grid(3, 16.0, 16)


@pytest.fixture
def gaussian_1d(grid_1d):
    return GaussianDatum(1.0).sample(grid_1d)


@pytest.fixture(scope="session")
def quintic_1d_history():
    """Short defocusing 1d quintic run used by the Duhamel tests."""
    grid = make_grid(1, 16.0, 64)
    eq = EquationSpec(1, 5)
    u0 = GaussianDatum(2.0, 0.8).sample(grid)
    return evolve(u0, eq, SolverConfig(1e-3, 1.0, 20))


@pytest.fixture
def pi_lengths():
    return {"32pi": 32.0 * math.pi, "pi": math.pi, "2*pi": 2.0 * math.pi, "0.5 pi": 0.5 * math.pi}
