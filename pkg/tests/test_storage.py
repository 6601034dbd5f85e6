import numpy as np
import pytest
from PIL import Image

from chemolab.errors import ConfigError
from chemolab.grid import Field, Grid
from chemolab.storage import (
    flatten,
    heatmap_pixels,
    read_meta,
    read_text_grid,
    write_csv,
    write_meta,
    write_pgm,
    write_text_grid,
)


def test_text_grid_layout_and_read_back(tmp_path, rect_grid):
    values = np.random.default_rng(0).standard_normal(rect_grid.shape)
    path = write_text_grid(tmp_path / 'u.txt', Field(rect_grid, values))
    lines = path.read_text().splitlines()
    assert lines[0] == 'FIELD 8 12 2 3'
    assert len(lines) == 1 + rect_grid.ny
    # row j holds the cells of the j-th y layer, bottom first
    assert float(lines[1].split()[3]) == values[3, 0]
    back = read_text_grid(path)
    assert back.grid == rect_grid
    assert np.array_equal(back.values, values)


def test_read_text_grid_rejects_other_files(tmp_path):
    path = tmp_path / 'junk.txt'
    path.write_text('P5 8 8 255\n')
    with pytest.raises(ConfigError) as excinfo:
        read_text_grid(path)
    assert excinfo.value.line == 1


def test_heatmap_pixels_orientation():
    grid = Grid(nx=6, ny=4, Lx=1.0, Ly=1.0)
    _, y = grid.mesh()
    pixels = heatmap_pixels(Field(grid, y))
    assert pixels.shape == (4, 6)
    assert pixels.dtype == np.uint8
    # top image row is the largest y
    assert np.all(pixels[0] == 255)
    assert np.all(pixels[-1] == 0)


def test_heatmap_of_constant_is_black():
    grid = Grid(nx=4, ny=4, Lx=1.0, Ly=1.0)
    assert np.all(heatmap_pixels(Field.constant(grid, 7.0)) == 0)


def test_pgm_is_binary_graymap(tmp_path):
    grid = Grid(nx=8, ny=5, Lx=1.0, Ly=1.0)
    x, _ = grid.mesh()
    path = write_pgm(tmp_path / 'u.pgm', Field(grid, x))
    assert path.read_bytes().startswith(b'P5')
    with Image.open(path) as image:
        assert image.size == (8, 5)
        assert image.mode == 'L'
        assert np.array_equal(np.asarray(image), heatmap_pixels(Field(grid, x)))


def test_csv_comments_and_precision(tmp_path):
    path = write_csv(
        tmp_path / 'd.csv',
        ['t', 'mass'],
        [(0.1, 1 / 3), (0.2, 2.0)],
        comments=['chemolab test', 'columns t mass'],
    )
    lines = path.read_text().splitlines()
    assert lines[:3] == ['# chemolab test', '# columns t mass', 't,mass']
    t, mass = lines[3].split(',')
    assert float(t) == 0.1
    assert float(mass) == 1 / 3


def test_flatten_nested_sections():
    flat = flatten(
        {
            'config': {'time': {'T': 0.5}, 'name': 'a'},
            'functional': [{'p': 1.5}, {'p': 1.25}],
            'ok': True,
        }
    )
    assert flat == {
        'config.time.T': '0.5',
        'config.name': 'a',
        'functional.0.p': '1.5',
        'functional.1.p': '1.25',
        'ok': 'True',
    }


def test_meta_keeps_insertion_order(tmp_path):
    path = write_meta(tmp_path / 'run.meta', {'b': 1, 'a': {'x': 'y=z'}})
    assert path.read_text() == 'b=1\na.x=y=z\n'
    assert read_meta(path) == {'b': '1', 'a.x': 'y=z'}
