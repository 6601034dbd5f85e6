import math

import numpy as np
import pytest

from chemolab.errors import ConfigError, HypothesisError
from chemolab.grid import Field, Grid, integrate
from chemolab.solver import (
    State,
    StepperConfig,
    StopReason,
    compute_stable_dt,
    euler_update,
    run,
    stability_limits,
    step,
    taxis_divergence,
)


def random_state(grid: Grid, seed: int = 0) -> State:
    rng = np.random.default_rng(seed)
    u = Field(grid, rng.uniform(0.0, 2.0, grid.shape))
    v = Field(grid, rng.uniform(0.0, 5.0, grid.shape))
    return State(u, v, 0.0)


def test_problem_rejects_negative_mu(unit_grid, make_problem):
    mu = np.ones(unit_grid.shape)
    mu[2, 3] = -0.1
    with pytest.raises(HypothesisError) as excinfo:
        make_problem(unit_grid, mu=mu)
    assert excinfo.value.key == 'mu'
    assert excinfo.value.cell == (2, 3)
    assert excinfo.value.point == unit_grid.center(2, 3)


def test_problem_needs_tau_inside_horizon(unit_grid, make_problem):
    with pytest.raises(ConfigError, match='tau'):
        make_problem(unit_grid, T=1.0, tau=1.0)


def test_stepper_config_dt_order():
    with pytest.raises(ValueError, match='dt_min < dt_max'):
        StepperConfig(dt_min=1e-3, dt_max=1e-4)


def test_stable_dt_only_diffusion_active(unit_grid, make_problem):
    problem = make_problem(unit_grid)
    state = State(problem.u0, problem.v0, 0.0)
    cfg = StepperConfig()
    h = unit_grid.hx
    expected = cfg.cfl_safety * min(h**2 / 4, cfg.dt_max)
    assert compute_stable_dt(state, problem, cfg) == pytest.approx(expected)


def test_taxis_limit_from_steep_ramp(make_problem):
    grid = Grid(nx=100, ny=4, Lx=1.0, Ly=0.04)
    x, _ = grid.mesh()
    problem = make_problem(grid, v0=10.0 * x)
    state = State(problem.u0, problem.v0, 0.0)
    limits = stability_limits(state, problem)
    assert limits.taxis == pytest.approx(0.001)
    assert limits.combined() == limits.diffusion


def test_stable_dt_is_clamped(unit_grid, make_problem):
    problem = make_problem(unit_grid)
    state = State(problem.u0, problem.v0, 0.0)
    cfg = StepperConfig(dt_max=1e-5, dt_min=1e-12)
    assert compute_stable_dt(state, problem, cfg) == 1e-5


def test_taxis_divergence_has_zero_total_flux(rect_grid):
    state = random_state(rect_grid)
    div = taxis_divergence(
        state.u.values, state.v.values, rect_grid.hx, rect_grid.hy
    )
    assert abs(div.sum()) <= 1e-9 * np.abs(div).sum()


def test_taxis_divergence_vanishes_for_flat_v(rect_grid):
    u = np.random.default_rng(3).random(rect_grid.shape)
    v = np.full(rect_grid.shape, 2.0)
    div = taxis_divergence(u, v, rect_grid.hx, rect_grid.hy)
    assert np.all(div == 0.0)


def test_mass_is_conserved_without_reactions(unit_grid, make_problem):
    state = random_state(unit_grid)
    problem = make_problem(unit_grid, u0=state.u.values, v0=state.v.values)
    cfg = StepperConfig(dt_max=1.0, dt_min=1e-14, u_cap=1e12)
    mass0 = integrate(state.u)
    for _ in range(50):
        dt = compute_stable_dt(state, problem, cfg)
        state, outcome = step(state, problem, dt, cfg)
        assert outcome.accepted
        assert state.u.min() >= 0 and state.v.min() >= 0
    assert integrate(state.u) == pytest.approx(mass0, rel=1e-12)


def test_v_update_maximum_principle(unit_grid, make_problem):
    state = random_state(unit_grid, seed=4)
    problem = make_problem(unit_grid, u0=state.u.values, v0=state.v.values)
    dt = 0.9 * stability_limits(state, problem).diffusion
    bound = max(state.v.max(), state.u.max())
    new = euler_update(state, problem, dt)
    assert new.v.max() <= bound * (1 + 1e-14)


def test_step_halves_on_negative_values(unit_grid, make_problem):
    problem = make_problem(unit_grid)
    values = np.zeros(unit_grid.shape)
    values[8, 8] = 1.0
    state = State(Field(unit_grid, values), problem.v0, 0.0)
    cfg = StepperConfig(dt_max=1.0, dt_min=1e-9)
    # 0.9 * h^2 / 4 keeps the center nonnegative; 1e-3 does not
    new, outcome = step(state, problem, 4e-3, cfg)
    assert outcome.accepted
    assert outcome.rejections >= 1
    assert outcome.dt_used < 4e-3
    assert new.u.min() >= 0
    assert new.t == pytest.approx(outcome.dt_used)


def test_step_underflow_returns_input_state(unit_grid, make_problem):
    problem = make_problem(unit_grid)
    values = np.zeros(unit_grid.shape)
    values[8, 8] = 1.0
    state = State(Field(unit_grid, values), problem.v0, 0.0)
    cfg = StepperConfig(dt_max=1.0, dt_min=0.1)
    new, outcome = step(state, problem, 1.0, cfg)
    assert new is state
    assert not outcome.accepted
    assert outcome.stop_reason is StopReason.DT_UNDERFLOW
    assert outcome.stop_reason.is_blow_up
    assert outcome.rejections == 4


def test_short_step_halves_below_dt_min_with_lower_floor(
    unit_grid, make_problem
):
    problem = make_problem(unit_grid, mu=1e14, u0=1.0)
    state = State(problem.u0, problem.v0, 0.0)
    cfg = StepperConfig(dt_max=1e-3)
    _, outcome = step(state, problem, 1e-13, cfg)
    assert outcome.stop_reason is StopReason.DT_UNDERFLOW
    new, outcome = step(state, problem, 1e-13, cfg, dt_floor=1e-20)
    assert outcome.accepted
    assert outcome.rejections == 4
    assert outcome.dt_used == pytest.approx(6.25e-15)
    assert new.u.min() >= 0


def test_run_never_leaves_a_sliver_before_a_target(make_problem):
    grid = Grid(nx=4, ny=4, Lx=1.0, Ly=1.0)
    problem = make_problem(grid, u0=1.0, v0=1.0, T=0.01, tau=0.005)
    cfg = StepperConfig(dt_max=1e-3, dt_min=1e-6)
    observer = RecordingObserver()
    result = run(problem, cfg, [0.0030005, 0.01], observer)
    assert result.stop_reason is StopReason.T_REACHED
    assert result.records == [0.0030005, 0.01]
    assert min(observer.dts) >= cfg.dt_min
    assert sum(observer.dts) == pytest.approx(0.01)


def test_run_without_diagnostics_reaches_T(make_problem):
    grid = Grid(nx=4, ny=4, Lx=1.0, Ly=1.0)
    problem = make_problem(grid, u0=1.0, v0=1.0, T=0.1, tau=0.05)
    result = run(problem, StepperConfig())
    assert result.records == []
    assert result.stop_reason is StopReason.T_REACHED
    assert result.t_stop == 0.1


def test_run_rejects_times_outside_horizon(make_problem):
    grid = Grid(nx=4, ny=4, Lx=1.0, Ly=1.0)
    problem = make_problem(grid, u0=1.0, T=0.1, tau=0.05)
    with pytest.raises(ConfigError):
        run(problem, StepperConfig(), [0.2])


def test_run_rejects_cap_below_initial_data(make_problem):
    grid = Grid(nx=4, ny=4, Lx=1.0, Ly=1.0)
    problem = make_problem(grid, u0=5.0, T=0.1, tau=0.05)
    with pytest.raises(ConfigError, match='u_cap'):
        run(problem, StepperConfig(u_cap=2.0))


class RecordingObserver:
    def __init__(self):
        self.dts = []
        self.times = []

    def accumulate(self, state, dt):
        self.dts.append(dt)

    def record(self, state, dt):
        self.times.append(state.t)
        return state.t


def test_run_lands_exactly_on_requested_times(make_problem):
    grid = Grid(nx=4, ny=4, Lx=1.0, Ly=1.0)
    problem = make_problem(grid, u0=1.0, v0=1.0, T=0.01, tau=0.005)
    snapshots = []
    observer = RecordingObserver()
    result = run(
        problem,
        StepperConfig(dt_max=3e-4),
        [0.0025, 0.01],
        observer,
        snapshot_times=[0.005],
        on_snapshot=snapshots.append,
    )
    assert result.records == [0.0025, 0.01]
    assert [s.t for s in snapshots] == [0.005]
    assert result.snapshots == snapshots
    assert sum(observer.dts) == pytest.approx(0.01)
    assert result.steps == len(observer.dts)


def test_run_stops_at_u_cap(make_problem):
    grid = Grid(nx=4, ny=4, Lx=1.0, Ly=1.0)
    problem = make_problem(grid, kappa=5.0, u0=1.0, T=2.0, tau=1.0)
    result = run(problem, StepperConfig(dt_max=1e-3, u_cap=2.0))
    assert result.stop_reason is StopReason.U_CAP
    assert result.final_state.u.max() > 2.0
    assert result.t_stop == pytest.approx(math.log(2) / 5, abs=2e-3)


def test_logistic_oracle(make_problem):
    grid = Grid(nx=4, ny=4, Lx=1.0, Ly=1.0)
    problem = make_problem(
        grid, kappa=1.0, mu=1.0, u0=0.5, v0=0.5, T=2.0, tau=1.0
    )
    result = run(problem, StepperConfig(dt_max=1e-4, u_cap=10.0))
    expected = 0.5 * math.e**2 / (1 + 0.5 * (math.e**2 - 1))
    assert expected == pytest.approx(0.8808, abs=1e-4)
    assert result.final_state.u.values == pytest.approx(expected, rel=1e-3)


def test_relaxation_oracle(make_problem):
    grid = Grid(nx=4, ny=4, Lx=1.0, Ly=1.0)
    problem = make_problem(grid, u0=1.0, v0=2.0, T=1.0, tau=0.5)
    result = run(problem, StepperConfig(dt_max=1e-4, u_cap=10.0))
    assert np.all(result.final_state.u.values == 1.0)
    expected = 1 + math.exp(-1)
    assert result.final_state.v.values == pytest.approx(expected, rel=1e-3)


def test_logistic_temporal_order(make_problem):
    grid = Grid(nx=4, ny=4, Lx=1.0, Ly=1.0)
    problem = make_problem(
        grid, kappa=1.0, mu=1.0, u0=0.5, v0=0.5, T=1.0, tau=0.5
    )
    expected = 0.5 * math.e / (1 + 0.5 * (math.e - 1))
    errors = []
    for dt in (4e-3, 2e-3, 1e-3):
        cfg = StepperConfig(dt_max=dt, u_cap=10.0)
        u = run(problem, cfg).final_state.u.max()
        errors.append(abs(u - expected))
    orders = [math.log2(a / b) for a, b in zip(errors, errors[1:])]
    assert min(orders) >= 0.9


def test_mass_identity_with_linear_growth(make_problem):
    grid = Grid(nx=8, ny=8, Lx=1.0, Ly=1.0)
    state = random_state(grid, seed=7)
    problem = make_problem(
        grid,
        kappa=1.0,
        u0=state.u.values,
        v0=state.v.values,
        T=0.1,
        tau=0.05,
    )
    result = run(problem, StepperConfig(dt_max=1e-5, u_cap=1e9))
    expected = math.exp(0.1) * integrate(problem.u0)
    assert integrate(result.final_state.u) == pytest.approx(
        expected, rel=1e-6
    )
