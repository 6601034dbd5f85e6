import numpy as np
import pytest

from chemolab import VERSION
from chemolab.config import load_config, read_toml
from chemolab.cutoff import CutoffSpec, build_cutoff
from chemolab.diagnostics import HEADER, BlowUpReport
from chemolab.grid import Grid
from chemolab.maxreg import heat_cfl_limit
from chemolab.runner import (
    cmd_cutoff_check,
    cmd_maxreg,
    cmd_sweep,
    execute,
    sweep_configs,
)
from chemolab.storage import read_meta, read_text_grid


@pytest.fixture
def tiny_run(tiny_toml, tmp_path):
    summary = execute(load_config(tiny_toml), tmp_path / 'runs')
    return summary, tmp_path / 'runs' / 'tiny'


def test_execute_writes_all_outputs(tiny_run):
    summary, run_dir = tiny_run
    assert summary.stop_reason == 't_reached_T'
    assert summary.t_stop == 0.05
    assert summary.n_records == 2
    assert summary.mass_bound is not None and summary.mass_bound.passed
    assert not summary.blow_up.triggered
    names = {p.name for p in run_dir.iterdir()}
    assert names == {
        'diagnostics.csv',
        'blow_up.json',
        'run.meta',
        'u_t0p025.txt',
        'v_t0p025.txt',
        'u_t0p025.pgm',
        'v_t0p025.pgm',
    }
    assert read_text_grid(run_dir / 'u_t0p025.txt').grid.nx == 8


def test_diagnostics_csv_layout(tiny_run):
    _, run_dir = tiny_run
    lines = (run_dir / 'diagnostics.csv').read_text().splitlines()
    comments = [line for line in lines if line.startswith('#')]
    body = [line for line in lines if not line.startswith('#')]
    assert comments[0] == f'# chemolab {VERSION}'
    assert comments[2].startswith('# config {')
    columns = body[0].split(',')
    assert tuple(columns[: len(HEADER)]) == HEADER
    assert columns[-1] == 'F0_growth'
    rows = [[float(v) for v in line.split(',')] for line in body[1:]]
    assert [row[0] for row in rows] == [0.025, 0.05]
    assert all(np.isfinite(row).all() for row in rows)


def test_run_meta_sidecar(tiny_run):
    _, run_dir = tiny_run
    meta = read_meta(run_dir / 'run.meta')
    assert meta['version'] == VERSION
    assert meta['source'].endswith('tiny.toml')
    assert meta['config.name'] == 'tiny'
    assert float(meta['config.time.T']) == 0.05
    assert meta['functional.0.admissible'] == 'False'
    assert meta['result.stop_reason'] == 't_reached_T'
    assert 'settings.tol_quad' in meta


def test_sweep_configs_names_and_values(tiny_toml):
    data = read_toml(tiny_toml)
    configs = sweep_configs(data, 'time.T', ['0.04', '0.05'])
    assert [c['time']['T'] for c in configs] == [0.04, 0.05]
    assert [c['name'] for c in configs] == [
        'tiny_time.T=0.04',
        'tiny_time.T=0.05',
    ]
    exprs = sweep_configs(
        data, 'coefficients.mu_expr', ['1', '2'], template='{value}*x'
    )
    assert [c['coefficients']['mu_expr'] for c in exprs] == ['1*x', '2*x']
    assert data['time']['T'] == 0.05


def test_sweep_runs_each_variant(tiny_toml, tmp_path):
    summaries = cmd_sweep(
        tiny_toml,
        'time.dt_max',
        ['5e-4', '1e-3'],
        out_dir=tmp_path,
        workers=1,
    )
    assert [s.name for s in summaries] == [
        'tiny_time.dt_max=5e-4',
        'tiny_time.dt_max=1e-3',
    ]
    assert [s.t_stop for s in summaries] == [0.05, 0.05]
    assert summaries[0].steps > summaries[1].steps
    for summary in summaries:
        run_dir = tmp_path / summary.name
        assert (run_dir / 'diagnostics.csv').exists()
        report = BlowUpReport.model_validate_json(
            (run_dir / 'blow_up.json').read_text()
        )
        assert report == summary.blow_up
        assert read_meta(run_dir / 'run.meta')['source'] == str(tiny_toml)


def test_same_config_gives_identical_csv(tiny_toml, tmp_path):
    loaded = load_config(tiny_toml)
    first = execute(loaded, tmp_path / 'a')
    second = execute(load_config(tiny_toml), tmp_path / 'b')
    csv_a = (tmp_path / 'a' / 'tiny' / 'diagnostics.csv').read_bytes()
    csv_b = (tmp_path / 'b' / 'tiny' / 'diagnostics.csv').read_bytes()
    assert csv_a == csv_b
    assert first.steps == second.steps


def test_cutoff_check_writes_fields(tmp_path):
    grid = Grid(nx=32, ny=32, Lx=1.0, Ly=1.0)
    spec = CutoffSpec(x0=(0.5, 0.5), rA=0.1, rV=0.3, eta=0.2)
    summary = cmd_cutoff_check(spec, grid, tmp_path)
    assert summary.mode == 'radial'
    assert summary.m == 10
    assert 0 < summary.plateau_cells < summary.support_cells
    assert summary.max_grad_ratio <= summary.C_phi
    assert summary.max_lap_ratio <= summary.C_phi
    phi = read_text_grid(tmp_path / 'cutoff' / 'phi.txt')
    assert np.array_equal(phi.values, build_cutoff(spec, grid).phi.values)
    meta = read_meta(tmp_path / 'cutoff' / 'cutoff.meta')
    assert meta['mode'] == 'radial'
    assert meta['grid.nx'] == '32'


def test_maxreg_report_with_dense_oracle(tmp_path):
    grid = Grid(nx=4, ny=4, Lx=1.0, Ly=1.0)
    T = 4 * 0.9 * heat_cfl_limit(grid)
    summary = cmd_maxreg(4, 4, T, None, [(2.0, 2.0)], out_dir=tmp_path)
    assert summary.steps == 4
    assert summary.dense_K is not None
    [sample] = summary.samples
    assert sample.K_hat == pytest.approx(summary.dense_K, rel=1e-5)
    lines = (tmp_path / 'maxreg' / 'probe.csv').read_text().splitlines()
    assert lines[1] == 'p,q,K_hat,seed,iterations'
    meta = read_meta(tmp_path / 'maxreg' / 'probe.meta')
    assert meta['steps'] == '4'
    assert 'sample.0.history' not in meta
