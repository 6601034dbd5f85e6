"""File formats: text grids, PGM heatmaps, CSV and key=value sidecars"""

import csv
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image

from .errors import ConfigError
from .grid import Field, Grid
from .loggers import get_logger

logger = get_logger(__name__)


def _num(value: float) -> str:
    return format(float(value), '.17g')


def write_text_grid(path: Path, field: Field) -> Path:
    """Header `FIELD nx ny Lx Ly`, then ny rows of nx values, bottom first"""
    grid = field.grid
    lines = [f'FIELD {grid.nx} {grid.ny} {_num(grid.Lx)} {_num(grid.Ly)}']
    for j in range(grid.ny):
        lines.append(' '.join(_num(v) for v in field.values[:, j]))
    path.write_text('\n'.join(lines) + '\n')
    return path


def read_text_grid(path: Path) -> Field:
    """Inverse of `write_text_grid`"""
    lines = path.read_text().splitlines()
    head = lines[0].split()
    if len(head) != 5 or head[0] != 'FIELD':
        raise ConfigError(f'{path}: not a text grid', line=1)
    nx, ny = int(head[1]), int(head[2])
    grid = Grid(nx=nx, ny=ny, Lx=float(head[3]), Ly=float(head[4]))
    rows = [[float(v) for v in line.split()] for line in lines[1 : ny + 1]]
    values = np.array(rows, dtype=np.float64)
    if values.shape != (ny, nx):
        raise ConfigError(f'{path}: expected {ny} rows of {nx} values')
    return Field(grid, values.T)


def heatmap_pixels(field: Field) -> np.ndarray:
    """Linear min-max scaling to 0..255, shape (ny, nx), top row first"""
    values = field.values
    lo, hi = float(values.min()), float(values.max())
    if hi > lo:
        scaled = np.rint((values - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.zeros_like(values)
    return scaled.astype(np.uint8).T[::-1]


def write_pgm(path: Path, field: Field) -> Path:
    """Binary PGM (P5), width nx, height ny, maxval 255"""
    # a 2-d uint8 array becomes a grayscale ('L') image, saved as P5
    image = Image.fromarray(np.ascontiguousarray(heatmap_pixels(field)))
    image.save(path, format='PPM')
    return path


def write_csv(
    path: Path,
    columns: Sequence[str],
    rows: Iterable[Sequence[float]],
    comments: Iterable[str] = (),
) -> Path:
    """CSV with leading `#` comment lines and full-precision numbers"""
    with path.open('w', newline='') as handle:
        for comment in comments:
            handle.write(f'# {comment}\n')
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(columns)
        for row in rows:
            writer.writerow(
                [_num(v) if isinstance(v, float | int) else v for v in row]
            )
    return path


def flatten(items: Mapping[str, Any], prefix: str = '') -> dict[str, str]:
    """Dotted keys for nested mappings; lists of mappings get an index"""
    flat: dict[str, str] = {}
    for key, value in items.items():
        name = f'{prefix}{key}'
        if isinstance(value, Mapping):
            flat.update(flatten(value, f'{name}.'))
        elif (
            isinstance(value, list)
            and value
            and all(isinstance(v, Mapping) for v in value)
        ):
            for k, entry in enumerate(value):
                flat.update(flatten(entry, f'{name}.{k}.'))
        elif isinstance(value, float):
            flat[name] = _num(value)
        else:
            flat[name] = str(value)
    return flat


def write_meta(path: Path, items: Mapping[str, Any]) -> Path:
    """Plain `key=value` lines in insertion order"""
    flat = flatten(items)
    path.write_text(''.join(f'{k}={v}\n' for k, v in flat.items()))
    return path


def read_meta(path: Path) -> dict[str, str]:
    """Read a sidecar back as strings"""
    meta = {}
    for line in path.read_text().splitlines():
        if line and not line.startswith('#'):
            key, _, value = line.partition('=')
            meta[key] = value
    return meta


def create_run_dir(base: Path, name: str) -> Path:
    """Create `base/name`, reusing it if present"""
    run_dir = base / name
    run_dir.mkdir(parents=True, exist_ok=True)
    logger.debug(f'writing outputs to {run_dir}')
    return run_dir
