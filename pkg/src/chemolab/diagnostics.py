"""Monitored functionals, bound checks and the numerical blow-up set

A `Monitor` observes a run: after every accepted step it adds the
left-endpoint contributions to the accumulated dissipation
`A(t) = int_0^t int mu u^2` and to the localized space-time integrals on the
configured balls (from `tau` on). At diagnostic times it produces a
`DiagnosticsRecord` with the global quantities plus one named column per
configured norm and functional.
"""

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from typing import Annotated, NamedTuple, Self

import numpy as np
from pydantic import BaseModel, ConfigDict, Field as PydanticField
from pydantic import model_validator
from scipy.spatial import cKDTree

from .cutoff import CutoffField, CutoffSpec, build_cutoff
from .errors import CheckFailure, ConfigError
from .grid import (
    Ball,
    Field,
    gradient_magnitude,
    integrate,
    laplacian,
    lp_norm,
)
from .loggers import get_logger
from .maxreg import k_tilde
from .settings import settings
from .solver import ProblemSpec, RunResult, State, StopReason

logger = get_logger(__name__)

HEADER = ('t', 'dt', 'mass', 'sup_u', 'argmax_x', 'argmax_y', 'A', 'z_bound')

NormExponent = Annotated[float, PydanticField(ge=1)]
TimeExponent = Annotated[float, PydanticField(gt=0)]


def _tag(value: float) -> str:
    return f'{value:g}'


class FunctionalSpec(BaseModel):
    """A localized functional F_p = int phi u^p and its energy terms"""

    model_config = ConfigDict(frozen=True, extra='forbid')

    p: float = PydanticField(gt=1, lt=2)
    eps: float = PydanticField(gt=0)
    cutoff: CutoffSpec
    k_hat: float | None = PydanticField(default=None, gt=0)
    """Estimate of K(p+1, p+1); probed when omitted"""

    @model_validator(mode='before')
    @classmethod
    def default_cutoff_eta(cls, data: dict) -> dict:
        """Fill the cutoff exponent with 1/(2(p+1)) when it is omitted"""
        if not isinstance(data, dict):
            return data
        cutoff = data.get('cutoff')
        p = data.get('p')
        if isinstance(cutoff, dict) and 'eta' not in cutoff and p is not None:
            data = {**data, 'cutoff': {**cutoff, 'eta': 1.0 / (2.0 * (p + 1))}}
        return data


class BallSpec(BaseModel):
    """A monitoring ball and the exponents tracked on it"""

    model_config = ConfigDict(frozen=True, extra='forbid')

    center: tuple[float, float]
    radius: float = PydanticField(gt=0)
    grad_v_exponents: list[NormExponent] = []
    """q: instantaneous norm of grad v on the ball"""
    lap_v_exponents: list[TimeExponent] = []
    """r: accumulated int_tau^t int_B |lap v|^r"""
    grad_v_time_exponents: list[TimeExponent] = []
    """alpha: accumulated int_tau^t int_B |grad v|^alpha"""


def admissibility_margin(
    spec: FunctionalSpec, mu_x0: float, kappa0: float, T: float, K: float
) -> float:
    """mu(x0)/2 - 4 eps - (p-1) e^(p kappa0 T) K~(p+1) / (p eps^p)"""
    p, eps = spec.p, spec.eps
    with np.errstate(over='ignore'):
        growth = float(np.exp(p * kappa0 * T))
    penalty = (p - 1.0) * growth * k_tilde(p + 1.0, K) / (p * eps**p)
    return mu_x0 / 2.0 - 4.0 * eps - penalty


@dataclass(frozen=True, eq=False)
class Functional:
    """A functional spec resolved against a problem"""

    spec: FunctionalSpec
    cutoff: CutoffField
    mu_x0: float
    k_hat: float
    margin: float

    @property
    def p(self) -> float:
        """Exponent of the functional"""
        return self.spec.p

    @property
    def eps(self) -> float:
        """Young splitting parameter"""
        return self.spec.eps

    @property
    def admissible(self) -> bool:
        """Whether the advisory margin is nonnegative"""
        return self.margin >= 0


def prepare_functional(
    spec: FunctionalSpec,
    problem: ProblemSpec,
    mu_x0: float,
    k_hat: float,
) -> Functional:
    """Build the cutoff and evaluate admissibility.

    Raises:
        ConfigError: If eps >= mu(x0)/8, or the cutoff vanishes on every
            cell of the grid.
    """
    if not spec.eps < mu_x0 / 8.0:
        raise ConfigError(
            f'eps={spec.eps} must be below mu(x0)/8 = {mu_x0 / 8.0:.6g}',
            'functionals.eps',
        )
    cutoff = build_cutoff(spec.cutoff, problem.grid)
    if not np.any(cutoff.phi.values > 0):
        raise ConfigError(
            f'cutoff at {spec.cutoff.x0} has no support on the grid',
            'functionals.cutoff',
        )
    margin = admissibility_margin(
        spec, mu_x0, problem.kappa0, problem.T, k_hat
    )
    if margin < 0:
        logger.warning(
            f'functional p={spec.p} eps={spec.eps} at {spec.cutoff.x0}: '
            f'admissibility margin {margin:.4g} < 0 '
            f'(advisory, K_hat={k_hat:.6g})'
        )
    return Functional(spec, cutoff, mu_x0, k_hat, margin)


class LocalizedTerms(NamedTuple):
    """Computable integrals on the right of the localized differential
    inequality
    """

    dissipation: float
    regularity: float
    growth: float


def functional_value(state: State, functional: Functional) -> float:
    """F_p = int phi u^p"""
    phi = functional.cutoff.phi.values
    return integrate(state.u.with_values(phi * state.u.values**functional.p))


def localized_terms(
    state: State, problem: ProblemSpec, functional: Functional
) -> LocalizedTerms:
    """Dissipation, regularity and growth terms for one functional.

    The terms are `int (mu - 4 eps) phi u^(p+1)`,
    `(p-1)/(p eps^p) int phi |lap_h v|^(p+1)` and `kappa0 int phi u^p`.
    """
    p, eps = functional.p, functional.eps
    phi = functional.cutoff.phi.values
    u = state.u.values
    lap_v = laplacian(state.v).values
    dissipation = integrate(
        state.u.with_values(
            (problem.mu.values - 4.0 * eps) * phi * u ** (p + 1)
        )
    )
    regularity = (
        (p - 1.0)
        / (p * eps**p)
        * integrate(state.u.with_values(phi * np.abs(lap_v) ** (p + 1)))
    )
    growth = problem.kappa0 * functional_value(state, functional)
    return LocalizedTerms(dissipation, regularity, growth)


class DiagnosticsRecord(BaseModel):
    """One row of diagnostics.csv"""

    t: float
    dt: float
    mass: float
    sup_u: float
    argmax_x: float
    argmax_y: float
    A: float
    z_bound: float
    extra: dict[str, float] = {}
    """Configured norms and functionals in config order"""

    def row(self) -> list[float]:
        """Values in CSV column order"""
        return [getattr(self, name) for name in HEADER] + list(
            self.extra.values()
        )

    @property
    def finite(self) -> bool:
        """Whether every value in the row is finite"""
        return all(math.isfinite(value) for value in self.row())


class Monitor:
    """Accumulates space-time integrals along a run and produces records"""

    def __init__(
        self,
        problem: ProblemSpec,
        functionals: Sequence[Functional] = (),
        balls: Sequence[BallSpec] = (),
        v_norms: Sequence[float] = (),
        grad_v_norms: Sequence[float] = (),
    ):
        """Resolve ball masks and zero the accumulators"""
        self.problem = problem
        self.functionals = list(functionals)
        self.ball_specs = list(balls)
        self.balls = [
            Ball(grid=problem.grid, center=b.center, radius=b.radius)
            for b in self.ball_specs
        ]
        for k, ball in enumerate(self.balls):
            if ball.n_cells <= 1:
                logger.warning(
                    f'ball{k} at {ball.center} radius {ball.radius} covers '
                    f'{ball.n_cells} cell(s)'
                )
        self.v_norms = list(v_norms)
        self.grad_v_norms = list(grad_v_norms)
        self.u0_l1 = integrate(problem.u0)
        self.A = 0.0
        self.lap_v_accumulated = [
            [0.0] * len(b.lap_v_exponents) for b in self.ball_specs
        ]
        self.grad_v_accumulated = [
            [0.0] * len(b.grad_v_time_exponents) for b in self.ball_specs
        ]

    @property
    def columns(self) -> list[str]:
        """Extra column names in config order"""
        names = [f'v_L{_tag(s)}' for s in self.v_norms]
        names += [f'gradv_L{_tag(q)}' for q in self.grad_v_norms]
        for k, b in enumerate(self.ball_specs):
            names += [f'ball{k}_gradv_L{_tag(q)}' for q in b.grad_v_exponents]
            names += [f'ball{k}_lapv_int_r{_tag(r)}' for r in b.lap_v_exponents]
            names += [
                f'ball{k}_gradv_int_a{_tag(a)}' for a in b.grad_v_time_exponents
            ]
            names.append(f'ball{k}_sup_u')
        for k, f in enumerate(self.functionals):
            names += [
                f'F{k}_p{_tag(f.p)}',
                f'F{k}_dissipation',
                f'F{k}_regularity',
                f'F{k}_growth',
            ]
        return names

    def z_bound(self, t: float) -> float:
        """||u0||_1 e^(kappa0 t)"""
        return self.u0_l1 * math.exp(self.problem.kappa0 * t)

    def accumulate(self, state: State, dt: float) -> None:
        """Left-endpoint contribution of [t, t + dt]"""
        problem = self.problem
        u = state.u.values
        self.A += dt * integrate(state.u.with_values(problem.mu.values * u**2))
        if not self.ball_specs:
            return
        # only the part of the step after tau counts
        weight = min(dt, state.t + dt - problem.tau)
        if weight <= 0:
            return
        area = problem.grid.cell_area
        lap_v = np.abs(laplacian(state.v).values)
        grad_v = gradient_magnitude(state.v).values
        for k, (spec, ball) in enumerate(zip(self.ball_specs, self.balls)):
            mask = ball.mask
            for n, r in enumerate(spec.lap_v_exponents):
                self.lap_v_accumulated[k][n] += (
                    weight * area * float(np.sum(lap_v[mask] ** r))
                )
            for n, a in enumerate(spec.grad_v_time_exponents):
                self.grad_v_accumulated[k][n] += (
                    weight * area * float(np.sum(grad_v[mask] ** a))
                )

    def record(self, state: State, dt: float) -> DiagnosticsRecord:
        """Evaluate every column at `state` with the integrals so far"""
        grid = self.problem.grid
        u, v = state.u, state.v
        i, j = u.argmax()
        x, y = grid.center(i, j)
        extra: dict[str, float] = {}
        columns = iter(self.columns)
        for s in self.v_norms:
            extra[next(columns)] = lp_norm(v, s)
        grad_v = gradient_magnitude(v)
        for q in self.grad_v_norms:
            extra[next(columns)] = lp_norm(grad_v, q)
        for k, (spec, ball) in enumerate(zip(self.ball_specs, self.balls)):
            for q in spec.grad_v_exponents:
                extra[next(columns)] = lp_norm(grad_v, q, ball.mask)
            for value in self.lap_v_accumulated[k]:
                extra[next(columns)] = value
            for value in self.grad_v_accumulated[k]:
                extra[next(columns)] = value
            extra[next(columns)] = ball.sup(u)
        for functional in self.functionals:
            terms = localized_terms(state, self.problem, functional)
            extra[next(columns)] = functional_value(state, functional)
            extra[next(columns)] = terms.dissipation
            extra[next(columns)] = terms.regularity
            extra[next(columns)] = terms.growth
        rec = DiagnosticsRecord(
            t=state.t,
            dt=dt,
            mass=integrate(u),
            sup_u=u.max(),
            argmax_x=x,
            argmax_y=y,
            A=self.A,
            z_bound=self.z_bound(state.t),
            extra=extra,
        )
        logger.info(
            f't={rec.t:.6g} mass={rec.mass:.6g} sup u={rec.sup_u:.6g} '
            f'at ({x:.4g}, {y:.4g}) A={rec.A:.6g}'
        )
        if not rec.finite:
            logger.warning(f'non-finite diagnostics at t={rec.t:.6g}')
        return rec


def record(
    state: State,
    problem: ProblemSpec,
    functionals: Sequence[Functional] = (),
    balls: Sequence[BallSpec] = (),
) -> DiagnosticsRecord:
    """Record of a single state with no accumulated history (A = 0)"""
    return Monitor(problem, functionals, balls).record(state, 0.0)


class MassBoundReport(BaseModel):
    """Outcome of the mass-dissipation bound check"""

    passed: bool
    tol_quad: float
    worst_margin: float
    """min over records of 1 + tol_quad - (M + A)/z_bound"""
    worst_t: float
    lhs: float
    """M + A at the worst record"""
    rhs: float
    """z_bound (1 + tol_quad) at the worst record"""

    def raise_for_failure(self) -> Self:
        """Raise `CheckFailure` when some record exceeds the bound"""
        if not self.passed:
            raise CheckFailure(
                'mass + dissipation exceeds the exponential bound',
                t=self.worst_t,
                lhs=self.lhs,
                rhs=self.rhs,
            )
        return self


def check_mass_bound(
    records: Sequence[DiagnosticsRecord], tol_quad: float | None = None
) -> MassBoundReport:
    """Check M(t) + A(t) <= ||u0||_1 e^(kappa0 t) (1 + tol_quad) everywhere"""
    if not records:
        raise ValueError('check_mass_bound needs at least one record')
    tol = settings.tol_quad if tol_quad is None else tol_quad
    worst: tuple[float, DiagnosticsRecord] | None = None
    for rec in records:
        lhs = rec.mass + rec.A
        if rec.z_bound > 0:
            margin = 1.0 + tol - lhs / rec.z_bound
        else:
            margin = tol if lhs == 0 else -math.inf
        if worst is None or margin < worst[0]:
            worst = (margin, rec)
    assert worst is not None
    margin, rec = worst
    report = MassBoundReport(
        passed=margin >= 0,
        tol_quad=tol,
        worst_margin=margin,
        worst_t=rec.t,
        lhs=rec.mass + rec.A,
        rhs=rec.z_bound * (1.0 + tol),
    )
    if not report.passed:
        logger.warning(
            f'mass bound violated at t={rec.t:.6g}: '
            f'{report.lhs:.6g} > {report.rhs:.6g}'
        )
    return report


def check_finite_records(records: Iterable[DiagnosticsRecord]) -> None:
    """Raise if any monitored quantity is NaN or infinite"""
    for rec in records:
        if not rec.finite:
            bad = [
                name
                for name, value in zip(HEADER + tuple(rec.extra), rec.row())
                if not math.isfinite(value)
            ]
            raise CheckFailure('non-finite diagnostics', t=rec.t, columns=bad)


def concentration_ratio(
    u: Field, center: tuple[float, float], r_in: float, r_out: float
) -> float:
    """sup of u on B_r_in(center) over sup of u off B_r_out(center).

    Returns inf when u vanishes away from the ball.
    """
    if not 0 < r_in <= r_out:
        raise ValueError(f'need 0 < r_in <= r_out, got {r_in}, {r_out}')
    inner = Ball(grid=u.grid, center=center, radius=r_in)
    outer = Ball(grid=u.grid, center=center, radius=r_out)
    away = ~outer.mask
    sup_away = float(u.values[away].max()) if np.any(away) else 0.0
    sup_in = inner.sup(u)
    if sup_away == 0:
        return math.inf if sup_in > 0 else math.nan
    return sup_in / sup_away


class BlowUpReport(BaseModel):
    """Numerical blow-up set against the zero set of mu"""

    triggered: bool
    stop_reason: StopReason
    t_stop: float
    sup_u: float
    argmax: tuple[float, float]
    theta_b: float
    mu_tol: float
    n_blow_up_cells: int
    n_zero_cells: int
    zero_set_fallback: bool
    """True when no cell has mu <= mu_tol and the grid minimum was used"""
    distance: float | None
    """max over blow-up cells of the distance to the zero set"""
    zero_point: tuple[float, float] | None = None
    concentration: float | None = None

    blow_up_cells: list[tuple[int, int]] = PydanticField(
        default=[], exclude=True, repr=False
    )


def zero_set(mu: Field, mu_tol: float) -> tuple[np.ndarray, bool]:
    """Cells with mu <= mu_tol, or the cells at the grid minimum of mu"""
    mask = mu.values <= mu_tol
    if np.any(mask):
        return mask, False
    logger.warning(
        f'no cell has mu <= {mu_tol:g}; using the cells at the grid minimum '
        f'{mu.min():.6g}'
    )
    return mu.values == mu.min(), True


def hausdorff_distance(
    grid_points: np.ndarray, from_mask: np.ndarray, to_mask: np.ndarray
) -> float:
    """Largest distance from a `from_mask` cell to the nearest `to_mask` cell"""
    targets = grid_points[to_mask.ravel()]
    sources = grid_points[from_mask.ravel()]
    if len(targets) == 0:
        return math.inf
    if len(sources) == 0:
        return 0.0
    distances, _ = cKDTree(targets).query(sources)
    return float(np.max(distances))


def blow_up_report(
    result: RunResult,
    problem: ProblemSpec,
    theta_b: float | None = None,
    mu_tol: float | None = None,
    zero_point: tuple[float, float] | None = None,
    r_in: float = 0.15,
    r_out: float = 0.3,
) -> BlowUpReport:
    """Compare the set where u is large at stop time with mu^-1(0)"""
    theta_b = settings.theta_b if theta_b is None else theta_b
    mu_tol = settings.mu_tol if mu_tol is None else mu_tol
    grid = problem.grid
    u = result.final_state.u
    triggered = result.stop_reason.is_blow_up
    zeros, fallback = zero_set(problem.mu, mu_tol)

    sup_u = u.max()
    if triggered:
        blow_up = u.values >= theta_b * sup_u
    else:
        blow_up = np.zeros(grid.shape, dtype=bool)
    x, y = grid.mesh()
    points = np.column_stack([x.ravel(), y.ravel()])
    distance = (
        hausdorff_distance(points, blow_up, zeros) if triggered else None
    )
    concentration = (
        concentration_ratio(u, zero_point, r_in, r_out)
        if zero_point is not None
        else None
    )
    report = BlowUpReport(
        triggered=triggered,
        stop_reason=result.stop_reason,
        t_stop=result.t_stop,
        sup_u=sup_u,
        argmax=grid.center(*u.argmax()),
        theta_b=theta_b,
        mu_tol=mu_tol,
        n_blow_up_cells=int(blow_up.sum()),
        n_zero_cells=int(zeros.sum()),
        zero_set_fallback=fallback,
        distance=distance,
        zero_point=zero_point,
        concentration=concentration,
        blow_up_cells=[tuple(int(k) for k in c) for c in np.argwhere(blow_up)],
    )
    logger.info(
        f'blow-up report: triggered={triggered} ({result.stop_reason.value}) '
        f't_stop={report.t_stop:.6g} distance={distance}'
    )
    return report
