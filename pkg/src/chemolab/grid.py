"""Cell-centered rectangular grids, Neumann stencils, quadrature and norms

Fields store values as arrays of shape `(nx, ny)` indexed `[i, j]` with
`i` along x. Ghost cells mirror the adjacent interior cell (even
reflection), which realizes homogeneous Neumann conditions.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Self

import numpy as np
from pydantic import BaseModel, ConfigDict, Field as PydanticField

from .loggers import get_logger

logger = get_logger(__name__)


class Grid(BaseModel):
    """Uniform cell-centered grid on the rectangle [0, Lx] x [0, Ly]"""

    model_config = ConfigDict(frozen=True)

    nx: int = PydanticField(ge=4)
    ny: int = PydanticField(ge=4)
    Lx: float = PydanticField(gt=0)
    Ly: float = PydanticField(gt=0)

    @property
    def hx(self) -> float:
        """Cell width"""
        return self.Lx / self.nx

    @property
    def hy(self) -> float:
        """Cell height"""
        return self.Ly / self.ny

    @property
    def cell_area(self) -> float:
        """hx * hy"""
        return self.hx * self.hy

    @property
    def shape(self) -> tuple[int, int]:
        """Array shape `(nx, ny)`"""
        return (self.nx, self.ny)

    @property
    def diagonal(self) -> float:
        """Length of the domain diagonal"""
        return float(np.hypot(self.Lx, self.Ly))

    @property
    def xc(self) -> np.ndarray:
        """Cell-center x coordinates"""
        return (np.arange(self.nx) + 0.5) * self.hx

    @property
    def yc(self) -> np.ndarray:
        """Cell-center y coordinates"""
        return (np.arange(self.ny) + 0.5) * self.hy

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-center coordinate arrays of shape `(nx, ny)`"""
        return np.meshgrid(self.xc, self.yc, indexing='ij')

    def center(self, i: int, j: int) -> tuple[float, float]:
        """Center of cell (i, j)"""
        return ((i + 0.5) * self.hx, (j + 0.5) * self.hy)


@dataclass(frozen=True, eq=False)
class Field:
    """Cell-centered scalar field; the value array is read-only"""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        """Copy the values as float64, check the shape and freeze them"""
        values = np.array(self.values, dtype=np.float64)
        if values.shape != self.grid.shape:
            raise ValueError(
                f'field shape {values.shape} does not match grid '
                f'{self.grid.shape}'
            )
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @classmethod
    def constant(cls, grid: Grid, value: float) -> Self:
        """Field equal to `value` everywhere"""
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def zeros(cls, grid: Grid) -> Self:
        """Field equal to zero everywhere"""
        return cls.constant(grid, 0.0)

    def with_values(self, values: np.ndarray) -> 'Field':
        """Field on the same grid"""
        return Field(self.grid, values)

    def min(self) -> float:
        """Smallest cell value"""
        return float(self.values.min())

    def max(self) -> float:
        """Largest cell value"""
        return float(self.values.max())

    def sup_norm(self) -> float:
        """Largest absolute cell value"""
        return float(np.abs(self.values).max())

    def argmax(self) -> tuple[int, int]:
        """Index of the first cell attaining the maximum"""
        flat = int(np.argmax(self.values))
        i, j = np.unravel_index(flat, self.grid.shape)
        return int(i), int(j)


def _padded(values: np.ndarray) -> np.ndarray:
    # mirror ghosts: the ghost equals the adjacent interior cell
    return np.pad(values, 1, mode='edge')


def laplacian_values(values: np.ndarray, hx: float, hy: float) -> np.ndarray:
    """Five-point Laplacian of a raw array with mirror ghosts"""
    g = _padded(values)
    center = g[1:-1, 1:-1]
    d2x = (g[2:, 1:-1] - 2.0 * center + g[:-2, 1:-1]) / hx**2
    d2y = (g[1:-1, 2:] - 2.0 * center + g[1:-1, :-2]) / hy**2
    return d2x + d2y


def laplacian(f: Field) -> Field:
    """Discrete Neumann Laplacian (five-point stencil, mirror ghosts)"""
    return f.with_values(laplacian_values(f.values, f.grid.hx, f.grid.hy))


def gradient_values(
    values: np.ndarray, hx: float, hy: float
) -> tuple[np.ndarray, np.ndarray]:
    """Central differences with mirror ghosts on a raw array"""
    g = _padded(values)
    dx = (g[2:, 1:-1] - g[:-2, 1:-1]) / (2.0 * hx)
    dy = (g[1:-1, 2:] - g[1:-1, :-2]) / (2.0 * hy)
    return dx, dy


def gradient_centers(f: Field) -> tuple[Field, Field]:
    """Central-difference gradient at cell centers with mirror ghosts.

    In boundary cells the mirrored ghost halves the one-sided difference,
    e.g. `(f[1] - f[0]) / (2 hx)` in the first column.
    """
    dx, dy = gradient_values(f.values, f.grid.hx, f.grid.hy)
    return f.with_values(dx), f.with_values(dy)


def gradient_magnitude(f: Field) -> Field:
    """Cell-wise |grad f| from `gradient_centers`"""
    dx, dy = gradient_centers(f)
    return f.with_values(np.hypot(dx.values, dy.values))


def integrate(f: Field) -> float:
    """Midpoint quadrature `hx*hy*sum(values)` (numpy pairwise summation)"""
    return f.grid.cell_area * float(np.sum(f.values))


def lp_norm(f: Field, p: float, mask: np.ndarray | None = None) -> float:
    """L^p norm over the domain, or over the cells selected by `mask`"""
    if p < 1:
        raise ValueError(f'lp_norm needs p >= 1, got {p}')
    values = np.abs(f.values)
    if mask is not None:
        values = values[mask]
    return (f.grid.cell_area * float(np.sum(values**p))) ** (1.0 / p)


def ball_mask(
    grid: Grid, center: tuple[float, float], radius: float
) -> np.ndarray:
    """Cells whose center lies in the closed ball B_radius(center)"""
    x, y = grid.mesh()
    return (x - center[0]) ** 2 + (y - center[1]) ** 2 <= radius**2


class MaskedIntegral(NamedTuple):
    """Result of integrating over a ball intersected with the domain"""

    value: float
    n_cells: int

    @property
    def empty(self) -> bool:
        """No cell center lies in the ball"""
        return self.n_cells == 0

    @property
    def degenerate(self) -> bool:
        """At most one cell resolves the ball"""
        return self.n_cells <= 1


def masked_integrate(
    f: Field, center: tuple[float, float], radius: float, p: float = 1.0
) -> MaskedIntegral:
    """hx*hy times the sum of |f|^p over cells with center in the ball"""
    if radius <= 0:
        raise ValueError(f'radius must be positive, got {radius}')
    mask = ball_mask(f.grid, center, radius)
    n_cells = int(mask.sum())
    if n_cells <= 1:
        logger.warning(
            f'ball at {center} with radius {radius} covers {n_cells} cell(s)'
        )
    if n_cells == 0:
        return MaskedIntegral(0.0, 0)
    value = f.grid.cell_area * float(np.sum(np.abs(f.values[mask]) ** p))
    return MaskedIntegral(value, n_cells)


class Ball(BaseModel):
    """A ball intersected with the grid, with its mask cached"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    grid: Grid
    center: tuple[float, float]
    radius: float = PydanticField(gt=0)

    @cached_property
    def mask(self) -> np.ndarray:
        """Cells whose center lies in the ball"""
        return ball_mask(self.grid, self.center, self.radius)

    @property
    def n_cells(self) -> int:
        """Number of cells in the mask"""
        return int(self.mask.sum())

    def sup(self, f: Field) -> float:
        """Largest |f| over the ball, 0 for an empty ball"""
        if not self.n_cells:
            return 0.0
        return float(np.abs(f.values[self.mask]).max())
