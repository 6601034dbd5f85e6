import math

import numpy as np
import pytest

from chemolab.cutoff import CutoffSpec, build_cutoff
from chemolab.errors import CheckFailure, ConfigError, ProbeError
from chemolab.grid import Field, Grid
from chemolab.maxreg import (
    RAYLEIGH_TOL,
    HeatSolveSpec,
    LocalizedRegularityReport,
    apply_adjoint,
    apply_operator,
    dense_norm,
    estimate_K,
    h2_norm_sq,
    heat_cfl_limit,
    interpolation_check,
    k_tilde,
    localized_regularity_check,
    operator_matrix,
    regularity_ratio,
    solve_heat,
)

SMALL = Grid(nx=4, ny=4, Lx=1.0, Ly=1.0)
PROBE = Grid(nx=8, ny=8, Lx=1.0, Ly=1.0)


def probe_dt(grid: Grid) -> float:
    return 0.9 * heat_cfl_limit(grid)


def test_heat_cfl_limit():
    assert heat_cfl_limit(SMALL) == pytest.approx(1 / 65)


def test_k_tilde_at_two():
    assert k_tilde(2.0, 1.7) == pytest.approx(32 * 1.7**2 + 24)


def test_zero_forcing_stays_zero():
    spec = HeatSolveSpec(SMALL, 1e-3, 0.1, np.zeros((100, 4, 4)))
    traj = solve_heat(spec)
    assert traj.steps == 100
    assert traj.T == pytest.approx(0.1)
    assert np.all(traj.w == 0.0)


def test_constant_forcing_matches_ode():
    dt, T, c = 1e-4, 1.0, 2.5
    spec = HeatSolveSpec.separable(
        SMALL, dt, T, np.ones(SMALL.shape), lambda t: np.full_like(t, c)
    )
    w = solve_heat(spec).w[-1]
    expected = c * (1 - math.exp(-T))
    assert w == pytest.approx(expected, rel=1e-3)


def test_separable_cosine_mode():
    grid = Grid(nx=8, ny=4, Lx=1.0, Ly=1.0)
    dt, T = 1e-4, 0.5
    x, _ = grid.mesh()
    mode = np.cos(np.pi * x)
    spec = HeatSolveSpec.separable(grid, dt, T, mode, lambda t: np.exp(-t))
    lam = (2 / grid.hx**2) * (1 - math.cos(math.pi * grid.hx))
    amplitude = (math.exp(-T) - math.exp(-(lam + 1) * T)) / lam
    w = solve_heat(spec).w[-1]
    assert w[0, 0] / mode[0, 0] == pytest.approx(amplitude, rel=1e-2)
    assert w / mode == pytest.approx(w[0, 0] / mode[0, 0], rel=1e-9)


def test_heat_spec_validation():
    with pytest.raises(ConfigError, match='stability'):
        HeatSolveSpec(SMALL, 0.1, 0.2, np.zeros((2, 4, 4)))
    with pytest.raises(ConfigError, match='integer'):
        HeatSolveSpec(SMALL, 3e-3, 0.01, np.zeros((3, 4, 4)))
    with pytest.raises(ConfigError, match='shape'):
        HeatSolveSpec(SMALL, 1e-3, 0.01, np.zeros((9, 4, 4)))


def random_forcing(grid: Grid, steps: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((steps, *grid.shape))


def test_regularity_ratio_needs_nonzero_forcing():
    traj = solve_heat(HeatSolveSpec(SMALL, 1e-3, 4e-3, np.zeros((4, 4, 4))))
    with pytest.raises(ProbeError):
        regularity_ratio(traj, 2.0, 2.0)


@pytest.mark.parametrize('p, q', [(2.0, 2.0), (3.0, 1.5), (1.2, 4.0)])
def test_regularity_ratio_is_homogeneous(p, q):
    dt = probe_dt(SMALL)
    f = random_forcing(SMALL, 6, seed=1)
    one = regularity_ratio(
        solve_heat(HeatSolveSpec(SMALL, dt, 6 * dt, f)), p, q
    )
    two = regularity_ratio(
        solve_heat(HeatSolveSpec(SMALL, dt, 6 * dt, 2 * f)), p, q
    )
    assert two == pytest.approx(one, rel=1e-12)


def test_adjoint_is_transpose():
    dt = probe_dt(SMALL)
    f = random_forcing(SMALL, 5, seed=2)
    g = np.random.default_rng(3).standard_normal((3, 5, *SMALL.shape))
    lhs = np.vdot(apply_operator(SMALL, dt, f), g)
    rhs = np.vdot(f, apply_adjoint(SMALL, dt, g))
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_operator_matrix_columns():
    dt = probe_dt(SMALL)
    f = random_forcing(SMALL, 3, seed=4)
    matrix = operator_matrix(SMALL, dt, 3)
    assert matrix.shape == (3 * 48, 48)
    assert matrix @ f.ravel() == pytest.approx(
        apply_operator(SMALL, dt, f).ravel(), abs=1e-10
    )


def test_power_iteration_matches_dense_svd():
    dt = probe_dt(SMALL)
    result = estimate_K(2.0, 2.0, seed=0, grid=SMALL, dt=dt, steps=4)
    dense = dense_norm(SMALL, dt, 4)
    assert result.method == 'power_iteration'
    assert result.converged
    assert result.K_hat == pytest.approx(dense, rel=1e-5)
    assert result.K_hat <= dense * (1 + 1e-12)
    assert result.history == sorted(result.history)


def test_power_iteration_stops_within_rayleigh_tolerance():
    dt = probe_dt(SMALL)
    result = estimate_K(2.0, 2.0, seed=0, grid=SMALL, dt=dt, steps=4)
    last, before = result.history[-1] ** 2, result.history[-2] ** 2
    assert result.iterations == len(result.history) >= 2
    assert last - before <= 2 * RAYLEIGH_TOL * last


def test_any_forcing_ratio_is_below_the_norm():
    dt = probe_dt(SMALL)
    dense = dense_norm(SMALL, dt, 4)
    for seed in range(5):
        f = random_forcing(SMALL, 4, seed)
        traj = solve_heat(HeatSolveSpec(SMALL, dt, 4 * dt, f))
        assert regularity_ratio(traj, 2.0, 2.0) <= dense * (1 + 1e-12)


def test_ascent_is_deterministic_and_monotone():
    dt = probe_dt(SMALL)
    kwargs = dict(budget=30, seed=5, grid=SMALL, dt=dt, steps=4)
    first = estimate_K(3.0, 2.5, **kwargs)
    second = estimate_K(3.0, 2.5, **kwargs)
    assert first.method == 'ascent'
    assert first.K_hat == second.K_hat
    assert first.K_hat > 0
    assert first.iterations == 30
    assert first.history == sorted(first.history)
    assert 'forcing' not in first.model_dump()


def test_estimate_K_validation():
    with pytest.raises(ConfigError):
        estimate_K(1.0, 2.0, grid=SMALL, steps=2)
    with pytest.raises(ProbeError):
        estimate_K(3.0, 3.0, budget=0, grid=SMALL, steps=2)


ESTIMATES = {(2.0, 2.0): 1.5, (4.0, 4.0): 2.0, (8 / 3, 8 / 3): 1.6}


def test_interpolation_degenerate_theta():
    report = interpolation_check(2.0, 2.0, 4.0, 4.0, 0.0, ESTIMATES)
    assert report.passed
    assert not report.advisory
    assert report.lhs == report.rhs == 1.5
    report.raise_for_failure()


def test_interpolation_same_point_equality():
    estimates = {(2.0, 2.0): 1.234567}
    report = interpolation_check(2.0, 2.0, 2.0, 2.0, 0.5, estimates)
    assert report.lhs == pytest.approx(report.rhs, rel=1e-6)
    assert report.passed and not report.advisory


def test_interpolation_midpoint_is_advisory():
    report = interpolation_check(
        2.0, 2.0, 4.0, 4.0, 0.5, ESTIMATES, tol_interp=0.0
    )
    assert report.p_theta == pytest.approx(8 / 3)
    assert report.rhs == pytest.approx(math.sqrt(1.5 * 2.0))
    assert report.passed
    failing = interpolation_check(
        2.0, 2.0, 4.0, 4.0, 0.5, {**ESTIMATES, (8 / 3, 8 / 3): 5.0}
    )
    assert not failing.passed
    assert failing.advisory
    failing.raise_for_failure()


def test_interpolation_errors():
    with pytest.raises(ConfigError, match='theta'):
        interpolation_check(2.0, 2.0, 4.0, 4.0, 1.5, ESTIMATES)
    with pytest.raises(ConfigError, match='no K_hat'):
        interpolation_check(2.0, 2.0, 6.0, 6.0, 0.5, ESTIMATES)


def test_h2_norm_of_constant():
    assert h2_norm_sq(Field.constant(SMALL, 3.0)) == pytest.approx(9.0)


def localized_case(seed: int, steps: int = 8):
    dt = probe_dt(PROBE)
    rng = np.random.default_rng(seed)
    x, y = PROBE.mesh()
    w0 = rng.normal() * np.cos(np.pi * x) * np.cos(np.pi * y)
    f = rng.standard_normal((steps, *PROBE.shape))
    traj = solve_heat(HeatSolveSpec(PROBE, dt, steps * dt, f, w0))
    return dt, traj


@pytest.mark.parametrize('seed', range(3))
def test_localized_bound_holds_with_exact_constant(seed):
    dt, traj = localized_case(seed)
    K = dense_norm(PROBE, dt, traj.steps)
    cutoff = build_cutoff(
        CutoffSpec(x0=(0.5, 0.5), rA=0.12, rV=0.32, eta=0.2), PROBE
    )
    report = localized_regularity_check(cutoff, traj, K, forcing=f'{seed}')
    assert report.passed
    assert report.margin > 0
    assert report.k_tilde == pytest.approx(32 * K**2 + 24)
    report.raise_for_failure()


def test_localized_check_rejects_other_exponents_and_grids():
    _, traj = localized_case(0, steps=2)
    phi = Field.constant(PROBE, 1.0)
    with pytest.raises(ConfigError, match='p = 2'):
        localized_regularity_check(phi, traj, 1.0, p=3.0)
    with pytest.raises(ConfigError, match='grids'):
        localized_regularity_check(Field.constant(SMALL, 1.0), traj, 1.0)


def test_localized_report_failure_raises():
    report = LocalizedRegularityReport(
        lhs=2.0, rhs=1.0, K=1.0, k_tilde=56.0, margin=-1.0, passed=False
    )
    with pytest.raises(CheckFailure):
        report.raise_for_failure()
