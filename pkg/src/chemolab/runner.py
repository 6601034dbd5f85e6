"""Run orchestration and output files

Every run writes into its own directory: `diagnostics.csv`, text-grid
snapshots, optional PGM heatmaps, `blow_up.json` and the `run.meta`
sidecar holding the effective configuration, the process settings and the
outcome.
"""

import json
import math
import multiprocessing
import re
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel

from . import VERSION
from .config import LoadedRun, coerce_value, load_data, read_toml, set_dotted
from .cutoff import CutoffSpec, build_cutoff, fractional_ratios
from .diagnostics import (
    HEADER,
    BlowUpReport,
    MassBoundReport,
    blow_up_report,
    check_mass_bound,
)
from .errors import ConfigError
from .grid import Grid
from .loggers import get_logger
from .maxreg import (
    ProbeResult,
    dense_norm,
    estimate_K,
    heat_cfl_limit,
)
from .settings import settings
from .solver import State, run
from .storage import (
    create_run_dir,
    write_csv,
    write_meta,
    write_pgm,
    write_text_grid,
)

logger = get_logger(__name__)


class RunSummary(BaseModel):
    """What `chemolab run` reports"""

    name: str
    run_dir: str
    stop_reason: str
    t_stop: float
    steps: int
    rejections: int
    n_records: int
    mass_bound: MassBoundReport | None
    blow_up: BlowUpReport


def _time_tag(t: float) -> str:
    return f'{t:.6g}'.replace('.', 'p')


def _config_comment(loaded: LoadedRun) -> str:
    return 'config ' + json.dumps(
        loaded.config.model_dump(mode='json'), sort_keys=True
    )


def execute(loaded: LoadedRun, out_dir: Path) -> RunSummary:
    """Run one loaded configuration and write all of its outputs"""
    config = loaded.config
    run_dir = create_run_dir(out_dir, config.name)
    monitor = loaded.monitor()

    def write_snapshot(state: State) -> None:
        tag = _time_tag(state.t)
        for name in config.outputs.snapshot_fields:
            field = getattr(state, name)
            write_text_grid(run_dir / f'{name}_t{tag}.txt', field)
            if config.outputs.heatmaps:
                write_pgm(run_dir / f'{name}_t{tag}.pgm', field)

    logger.info(f'running {config.name} into {run_dir}')
    result = run(
        loaded.problem,
        loaded.stepper,
        config.diagnostics.times,
        monitor,
        config.outputs.snapshot_times,
        write_snapshot,
    )

    columns = [*HEADER, *monitor.columns]
    write_csv(
        run_dir / config.outputs.csv,
        columns,
        (rec.row() for rec in result.records),
        comments=[
            f'chemolab {VERSION}',
            'columns ' + ' '.join(columns),
            _config_comment(loaded),
        ],
    )

    diag = config.diagnostics
    mass_bound = (
        check_mass_bound(result.records, diag.tol_quad)
        if result.records
        else None
    )
    report = blow_up_report(
        result,
        loaded.problem,
        theta_b=diag.theta_b,
        mu_tol=diag.mu_tol,
        zero_point=diag.zero_point,
        r_in=diag.r_in,
        r_out=diag.r_out,
    )
    (run_dir / 'blow_up.json').write_text(report.model_dump_json(indent=2))

    summary = RunSummary(
        name=config.name,
        run_dir=str(run_dir),
        stop_reason=result.stop_reason.value,
        t_stop=result.t_stop,
        steps=result.steps,
        rejections=result.rejections,
        n_records=len(result.records),
        mass_bound=mass_bound,
        blow_up=report,
    )
    functionals = [
        {
            'p': f.p,
            'eps': f.eps,
            'k_hat': f.k_hat,
            'margin': f.margin,
            'admissible': f.admissible,
            'mode': f.cutoff.mode,
            'm': f.cutoff.m,
            'C_phi': f.cutoff.C_phi,
            'placement': f.cutoff.spec.model_dump(mode='json'),
        }
        for f in loaded.functionals
    ]
    write_meta(
        run_dir / 'run.meta',
        {
            'version': VERSION,
            'source': str(loaded.source) if loaded.source else 'builtin',
            'config': config.model_dump(mode='json'),
            'settings': settings.model_dump(mode='json'),
            'functional': functionals,
            'result': summary.model_dump(mode='json', exclude={'blow_up'}),
            'blow_up': report.model_dump(mode='json'),
        },
    )
    return summary


def cmd_run(loaded: LoadedRun, out_dir: Path | None = None) -> RunSummary:
    """Run a loaded configuration under `out_dir` or the settings default"""
    return execute(loaded, out_dir or settings.output_dir)


def _sweep_one(job: tuple[dict[str, Any], str, str]) -> dict[str, Any]:
    data, out_dir, source = job
    loaded = load_data(data, Path(source))
    return execute(loaded, Path(out_dir)).model_dump(mode='json')


def _slug(text: str) -> str:
    return re.sub(r'[^A-Za-z0-9_.=+-]+', '_', text).strip('_')


def sweep_configs(
    data: dict[str, Any],
    key: str,
    values: Sequence[str],
    template: str | None = None,
) -> list[dict[str, Any]]:
    """One raw config per value, each with its own run name"""
    base = data.get('name', 'run')
    configs = []
    for text in values:
        if template is None:
            value = coerce_value(text)
        else:
            try:
                value = template.format(value=text)
            except (IndexError, KeyError, ValueError) as e:
                raise ConfigError(
                    f'template {template!r} accepts only a {{value}} '
                    f'placeholder: {e!r}',
                    key,
                ) from e
        variant = set_dotted(data, key, value)
        variant['name'] = _slug(f'{base}_{key}={text}')
        configs.append(variant)
    return configs


def cmd_sweep(
    path: Path,
    key: str,
    values: Sequence[str],
    template: str | None = None,
    out_dir: Path | None = None,
    workers: int | None = None,
) -> list[RunSummary]:
    """Vary one dotted config key; runs execute in parallel processes"""
    out_dir = out_dir or settings.output_dir
    configs = sweep_configs(read_toml(path), key, values, template)
    # validate every variant before any process starts
    for data in configs:
        load_data(data, path)
    workers = min(workers or settings.max_workers, len(configs))
    jobs = [(data, str(out_dir), str(path)) for data in configs]
    if workers <= 1:
        results = [_sweep_one(job) for job in jobs]
    else:
        with multiprocessing.Pool(processes=workers) as pool:
            results = pool.map(_sweep_one, jobs)
    return [RunSummary.model_validate(r) for r in results]


class MaxregSummary(BaseModel):
    """What `chemolab maxreg` reports"""

    nx: int
    ny: int
    dt: float
    steps: int
    samples: list[ProbeResult]
    dense_K: float | None = None
    """Spectral norm from a dense SVD, for small p = q = 2 probes"""
    out_dir: str


def cmd_maxreg(
    nx: int,
    ny: int,
    T: float,
    dt: float | None,
    exponents: Sequence[tuple[float, float]],
    seeds: int = 1,
    budget: int | None = None,
    out_dir: Path | None = None,
    dense_limit: int = 2048,
) -> MaxregSummary:
    """Sample K_hat over (p, q) pairs and seeds, writing a report and CSV"""
    grid = Grid(nx=nx, ny=ny, Lx=1.0, Ly=1.0)
    dt = 0.9 * heat_cfl_limit(grid) if dt is None else dt
    steps = max(1, math.ceil(T / dt - 1e-9))
    dt = T / steps
    samples = [
        estimate_K(p, q, budget, seed, grid, dt, steps)
        for p, q in exponents
        for seed in range(seeds)
    ]
    dense_K = None
    if (2.0, 2.0) in exponents and steps * nx * ny <= dense_limit:
        dense_K = dense_norm(grid, dt, steps)
    run_dir = create_run_dir(out_dir or settings.output_dir, 'maxreg')
    write_csv(
        run_dir / 'probe.csv',
        ['p', 'q', 'K_hat', 'seed', 'iterations'],
        ([s.p, s.q, s.K_hat, s.seed, s.iterations] for s in samples),
        comments=[f'nx={nx} ny={ny} dt={dt!r} steps={steps}'],
    )
    summary = MaxregSummary(
        nx=nx,
        ny=ny,
        dt=dt,
        steps=steps,
        samples=samples,
        dense_K=dense_K,
        out_dir=str(run_dir),
    )
    write_meta(
        run_dir / 'probe.meta',
        {
            'nx': nx,
            'ny': ny,
            'T': T,
            'dt': dt,
            'steps': steps,
            'budget': budget or settings.probe_budget,
            'dense_K': dense_K if dense_K is not None else 'none',
            'sample': [
                s.model_dump(mode='json', exclude={'history'}) for s in samples
            ],
        },
    )
    return summary


class CutoffSummary(BaseModel):
    """What `chemolab cutoff-check` reports"""

    mode: str
    m: int
    C_phi: float
    max_grad_ratio: float
    max_lap_ratio: float
    plateau_cells: int
    support_cells: int
    out_dir: str


def cmd_cutoff_check(
    spec: CutoffSpec, grid: Grid, out_dir: Path | None = None
) -> CutoffSummary:
    """Build a cutoff, report C_phi and write phi, |grad phi|, lap phi"""
    cutoff = build_cutoff(spec, grid)
    grad_ratio, lap_ratio = fractional_ratios(cutoff)
    run_dir = create_run_dir(out_dir or settings.output_dir, 'cutoff')
    write_text_grid(run_dir / 'phi.txt', cutoff.phi)
    write_text_grid(run_dir / 'grad_phi.txt', cutoff.grad_norm)
    write_text_grid(run_dir / 'lap_phi.txt', cutoff.lap)
    phi = cutoff.phi.values
    summary = CutoffSummary(
        mode=cutoff.mode,
        m=cutoff.m,
        C_phi=cutoff.C_phi,
        max_grad_ratio=float(grad_ratio.max()),
        max_lap_ratio=float(lap_ratio.max()),
        plateau_cells=int(np.sum(phi == 1.0)),
        support_cells=int(np.sum(phi > 0)),
        out_dir=str(run_dir),
    )
    write_meta(
        run_dir / 'cutoff.meta',
        {
            'spec': spec.model_dump(mode='json'),
            'grid': grid.model_dump(mode='json'),
            **summary.model_dump(mode='json'),
        },
    )
    return summary
