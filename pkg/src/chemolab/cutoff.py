"""Cutoff functions with vanishing normal derivative and fractional bounds

A cutoff is `phi = chi**m` where `chi` is built from the descending C^2
quintic smoothstep profile and `m = ceil(2/eta)`. Then `phi**eta` is C^2
and, by the chain rule,

    |grad phi| <= C phi**(1 - eta),   |lap phi| <= C phi**(1 - 2 eta).

Gradient and Laplacian are evaluated analytically at cell centers.
"""

import math
from dataclasses import dataclass, replace
from typing import Literal, Self

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field as PydanticField,
    model_validator,
)

from .errors import CutoffError
from .grid import Field, Grid
from .loggers import get_logger

logger = get_logger(__name__)

CutoffMode = Literal['radial', 'tensor']

# relative slack applied to the verified constant so that the bounds hold
# cell-wise after the final multiplication is rounded
_ROUNDING_SLACK = 8 * np.finfo(float).eps


class CutoffSpec(BaseModel):
    """Placement of a cutoff: phi = 1 on B_rA(x0), phi = 0 off B_rV(x0)"""

    model_config = ConfigDict(frozen=True, extra='forbid')

    x0: tuple[float, float]
    rA: float = PydanticField(gt=0)
    rV: float = PydanticField(gt=0)
    eta: float = PydanticField(gt=0, lt=0.5)
    mode: CutoffMode | None = None
    """None picks radial when B_rV(x0) stays inside the domain, else tensor"""

    @model_validator(mode='after')
    def check_radii(self) -> Self:
        """Require nested radii"""
        if not self.rA < self.rV:
            raise ValueError(f'need rA < rV, got rA={self.rA}, rV={self.rV}')
        return self

    @property
    def m(self) -> int:
        """Integer power making phi**eta twice differentiable"""
        return power_for_eta(self.eta)


def power_for_eta(eta: float) -> int:
    """Smallest integer m with m * eta >= 2"""
    # the rounding guard keeps e.g. eta = 1/6 at m = 12
    return math.ceil(round(2.0 / eta, 9))


@dataclass(frozen=True, eq=False)
class CutoffField:
    """A cutoff sampled on a grid with analytic derivatives"""

    spec: CutoffSpec
    mode: CutoffMode
    m: int
    phi: Field
    grad_x: Field
    grad_y: Field
    lap: Field
    chi: Field
    chi_grad_x: Field
    chi_grad_y: Field
    chi_lap: Field
    C_phi: float

    @property
    def eta(self) -> float:
        """Fractional exponent of the spec"""
        return self.spec.eta

    @property
    def grad_norm(self) -> Field:
        """Cell-wise |grad phi|"""
        return self.phi.with_values(
            np.hypot(self.grad_x.values, self.grad_y.values)
        )


def smoothstep_profile(
    s: np.ndarray, r_inner: float, r_outer: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Descending profile 1 - S((s - r_inner)/(r_outer - r_inner)).

    S is the quintic smoothstep 6t^5 - 15t^4 + 10t^3. Returns the profile
    and its first and second derivatives with respect to `s`.
    """
    width = r_outer - r_inner
    t = np.clip((np.asarray(s, dtype=float) - r_inner) / width, 0.0, 1.0)
    value = 1.0 - t**3 * (10.0 - 15.0 * t + 6.0 * t**2)
    first = -30.0 * t**2 * (1.0 - t) ** 2 / width
    second = -60.0 * t * (1.0 - t) * (1.0 - 2.0 * t) / width**2
    return value, first, second


def resolve_mode(spec: CutoffSpec, grid: Grid) -> CutoffMode:
    """The explicit mode, else radial when B_rV(x0) fits in the domain"""
    if spec.mode is not None:
        return spec.mode
    return 'radial' if _ball_inside(spec, grid) else 'tensor'


def _ball_inside(spec: CutoffSpec, grid: Grid) -> bool:
    x0, y0 = spec.x0
    return (
        x0 - spec.rV > 0
        and x0 + spec.rV < grid.Lx
        and y0 - spec.rV > 0
        and y0 + spec.rV < grid.Ly
    )


def _check_placement(spec: CutoffSpec, grid: Grid, mode: CutoffMode) -> None:
    x0, y0 = spec.x0
    if not (0 <= x0 <= grid.Lx and 0 <= y0 <= grid.Ly):
        raise CutoffError(f'cutoff center {spec.x0} lies outside the domain')
    if mode == 'radial':
        if not _ball_inside(spec, grid):
            raise CutoffError(
                f'radial cutoff at {spec.x0} with rV={spec.rV} leaves the '
                "domain; use mode = 'tensor' for boundary-touching cutoffs"
            )
        return
    r_outer = spec.rV / math.sqrt(2.0)
    if not spec.rA < r_outer:
        raise CutoffError(
            f'tensor cutoff needs rA < rV/sqrt(2) so that the plateau square '
            f'covers B_rA and the support square stays in B_rV; got '
            f'rA={spec.rA}, rV={spec.rV}'
        )
    for axis, (c0, length) in enumerate(((x0, grid.Lx), (y0, grid.Ly))):
        for face in (0.0, length):
            dist = abs(face - c0)
            if dist == 0 or dist <= spec.rA or dist >= r_outer:
                continue
            raise CutoffError(
                f'tensor cutoff transition crosses the face '
                f'{"xy"[axis]} = {face}; the normal derivative would not '
                f'vanish there'
            )


def _radial_chi(
    spec: CutoffSpec, x: np.ndarray, y: np.ndarray
) -> tuple[np.ndarray, ...]:
    dx, dy = x - spec.x0[0], y - spec.x0[1]
    r = np.hypot(dx, dy)
    chi, d1, d2 = smoothstep_profile(r, spec.rA, spec.rV)
    # d1 vanishes on the plateau, so r = 0 never meets a nonzero d1
    inv_r = np.divide(1.0, r, out=np.zeros_like(r), where=r > 0)
    gx, gy = d1 * dx * inv_r, d1 * dy * inv_r
    lap = d2 + d1 * inv_r
    return chi, gx, gy, lap


def _tensor_chi(
    spec: CutoffSpec, x: np.ndarray, y: np.ndarray
) -> tuple[np.ndarray, ...]:
    r_outer = spec.rV / math.sqrt(2.0)
    dx, dy = x - spec.x0[0], y - spec.x0[1]
    a, da, d2a = smoothstep_profile(np.abs(dx), spec.rA, r_outer)
    b, db, d2b = smoothstep_profile(np.abs(dy), spec.rA, r_outer)
    da, db = da * np.sign(dx), db * np.sign(dy)
    return a * b, da * b, a * db, d2a * b + a * d2b


def build_cutoff(spec: CutoffSpec, grid: Grid) -> CutoffField:
    """Sample phi = chi**m and its analytic derivatives on the grid.

    Radial mode uses chi(x) = chi1(|x - x0|) and needs B_rV(x0) inside the
    open rectangle. Tensor mode uses a product of one-dimensional profiles
    with outer radius rV/sqrt(2); the plateau square contains B_rA and the
    support square lies in B_rV. Each factor is even around x0 or constant
    near a face, so the normal derivative vanishes on the rectangle faces.

    Raises:
        CutoffError: When the placement is not realizable in the chosen mode.
    """
    mode = resolve_mode(spec, grid)
    _check_placement(spec, grid, mode)
    m = spec.m

    x, y = grid.mesh()
    build = _radial_chi if mode == 'radial' else _tensor_chi
    chi, cgx, cgy, clap = build(spec, x, y)

    phi = chi**m
    outer = m * chi ** (m - 1)
    grad_x = outer * cgx
    grad_y = outer * cgy
    lap = outer * clap + m * (m - 1) * chi ** (m - 2) * (cgx**2 + cgy**2)
    # cells where chi**m underflows are outside the support
    outside = phi == 0
    for arr in (grad_x, grad_y, lap):
        arr[outside] = 0.0

    field = CutoffField(
        spec=spec,
        mode=mode,
        m=m,
        phi=Field(grid, phi),
        grad_x=Field(grid, grad_x),
        grad_y=Field(grid, grad_y),
        lap=Field(grid, lap),
        chi=Field(grid, chi),
        chi_grad_x=Field(grid, cgx),
        chi_grad_y=Field(grid, cgy),
        chi_lap=Field(grid, clap),
        C_phi=math.nan,
    )
    c_phi = verify_fractional_bounds(field)
    logger.debug(
        f'cutoff {mode} at {spec.x0} rA={spec.rA} rV={spec.rV} m={m}: '
        f'C_phi={c_phi:.6g}'
    )
    return replace(field, C_phi=c_phi)


def fractional_ratios(c: CutoffField) -> tuple[np.ndarray, np.ndarray]:
    """Cell-wise |grad phi|/phi^(1-eta) and |lap phi|/phi^(1-2 eta).

    Cells with phi = 0 get ratio 0.
    """
    phi = c.phi.values
    inside = phi > 0
    grad_ratio = np.zeros_like(phi)
    lap_ratio = np.zeros_like(phi)
    grad_ratio[inside] = np.hypot(
        c.grad_x.values[inside], c.grad_y.values[inside]
    ) / phi[inside] ** (1.0 - c.eta)
    lap_ratio[inside] = np.abs(c.lap.values[inside]) / phi[inside] ** (
        1.0 - 2.0 * c.eta
    )
    return grad_ratio, lap_ratio


def verify_fractional_bounds(c: CutoffField) -> float:
    """Smallest constant C with both fractional bounds at every cell.

    Returns:
        C_phi, slightly enlarged so that `|grad phi| <= C phi**(1-eta)` and
        `|lap phi| <= C phi**(1-2 eta)` hold cell-wise in floating point.

    Raises:
        CutoffError: If a cell with phi = 0 has a nonzero derivative.
    """
    zero = c.phi.values == 0
    leaking = zero & (
        (c.grad_x.values != 0) | (c.grad_y.values != 0) | (c.lap.values != 0)
    )
    if np.any(leaking):
        i, j = np.argwhere(leaking)[0]
        raise CutoffError(
            f'construction bug: phi = 0 but nonzero derivative at cell '
            f'({i}, {j})'
        )
    grad_ratio, lap_ratio = fractional_ratios(c)
    worst = float(max(grad_ratio.max(), lap_ratio.max()))
    if not math.isfinite(worst):
        raise CutoffError('fractional bound ratio is not finite')
    return worst * (1.0 + _ROUNDING_SLACK)


def root_laplacian(c: CutoffField) -> Field:
    """Analytic Laplacian of phi**eta = chi**(m eta); bounded as m eta >= 2"""
    k = c.m * c.eta
    chi = c.chi.values
    grad_sq = c.chi_grad_x.values**2 + c.chi_grad_y.values**2
    values = np.zeros_like(chi)
    inside = chi > 0
    values[inside] = (
        k * chi[inside] ** (k - 1) * c.chi_lap.values[inside]
        + k * (k - 1) * chi[inside] ** (k - 2) * grad_sq[inside]
    )
    return c.phi.with_values(values)
