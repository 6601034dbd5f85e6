import numpy as np
import pytest

from chemolab.grid import Field, Grid
from chemolab.solver import ProblemSpec


@pytest.fixture
def unit_grid() -> Grid:
    return Grid(nx=16, ny=16, Lx=1.0, Ly=1.0)


@pytest.fixture
def rect_grid() -> Grid:
    return Grid(nx=8, ny=12, Lx=2.0, Ly=3.0)


def constant_problem(
    grid: Grid,
    *,
    kappa: float = 0.0,
    mu: float = 0.0,
    u0: float | np.ndarray = 0.0,
    v0: float | np.ndarray = 0.0,
    T: float = 1.0,
    tau: float = 0.5,
) -> ProblemSpec:
    def field(value: float | np.ndarray) -> Field:
        if np.isscalar(value):
            return Field.constant(grid, float(value))
        return Field(grid, value)

    return ProblemSpec(
        grid=grid,
        kappa=field(kappa),
        mu=field(mu),
        u0=field(u0),
        v0=field(v0),
        T=T,
        tau=tau,
    )


@pytest.fixture
def make_problem():
    return constant_problem


TINY_TOML = """\
name = "tiny"
seed = 3

[domain]
Lx = 1.0
Ly = 1.0
nx = 8
ny = 8

[coefficients]
kappa_expr = "1"
mu_expr = "1"
u0_expr = "1 + 0.5*cos(pi*x)"
v0_expr = "0"

[time]
T = 0.05
tau = 0.02
dt_max = 1e-3

[diagnostics]
times = [0.025, 0.05]
v_norms = [2]

[outputs]
snapshot_times = [0.025]
heatmaps = true

[[functionals]]
p = 1.5
eps = 0.01
k_hat = 1.0
cutoff = { x0 = [0.5, 0.5], rA = 0.1, rV = 0.3 }

[[balls]]
center = [0.5, 0.5]
radius = 0.25
grad_v_exponents = [2]
"""


@pytest.fixture
def tiny_toml(tmp_path):
    path = tmp_path / 'tiny.toml'
    path.write_text(TINY_TOML)
    return path
