"""Explicit finite-volume time stepping of the chemotaxis-growth system

    u_t = lap u - div(u grad v) + kappa u - mu u^2
    v_t = lap v - v + u

with no-flux boundaries. The taxis flux is upwinded by the sign of the face
velocity, steps are chosen from diffusion, taxis and reaction limits, and a
step producing a negative value is rejected and retried with half the step.
Step collapse and exceeding the sup-norm cap are the numerical blow-up
signals.
"""

import math
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field, replace
from enum import StrEnum
from typing import Any, Literal, NamedTuple, Protocol, Self

import numpy as np
from pydantic import BaseModel, ConfigDict, Field as PydanticField
from pydantic import model_validator

from .errors import ConfigError, HypothesisError
from .grid import Field, Grid, laplacian_values
from .loggers import get_logger
from .settings import settings

logger = get_logger(__name__)


class StopReason(StrEnum):
    """Why a run halted"""

    NONE = 'none'
    T_REACHED = 't_reached_T'
    U_CAP = 'u_exceeded_cap'
    DT_UNDERFLOW = 'dt_underflow'

    @property
    def is_blow_up(self) -> bool:
        """Whether the reason counts as the blow-up sensor firing"""
        return self in (StopReason.U_CAP, StopReason.DT_UNDERFLOW)


def _first_negative(name: str, f: Field) -> None:
    negative = f.values < 0
    if np.any(negative):
        i, j = (int(k) for k in np.argwhere(negative)[0])
        raise HypothesisError(
            f'{name} must be nonnegative',
            name,
            (i, j),
            f.grid.center(i, j),
            float(f.values[i, j]),
        )


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Sampled data of one initial-boundary value problem"""

    grid: Grid
    kappa: Field
    mu: Field
    u0: Field
    v0: Field
    T: float
    tau: float

    def __post_init__(self):
        """Check mu, u0 and v0 for negative values and tau < T"""
        _first_negative('mu', self.mu)
        _first_negative('u0', self.u0)
        _first_negative('v0', self.v0)
        if not 0 < self.tau < self.T:
            raise ConfigError(
                f'need 0 < tau < T, got tau={self.tau}, T={self.T}', 'time.tau'
            )

    @property
    def kappa0(self) -> float:
        """Sup norm of kappa"""
        return self.kappa.sup_norm()


class StepperConfig(BaseModel):
    """Step-size control and blow-up thresholds"""

    model_config = ConfigDict(frozen=True, extra='forbid')

    cfl_safety: float = PydanticField(default=0.9, gt=0, le=1)
    dt_max: float = PydanticField(default=1e-3, gt=0)
    dt_min: float = PydanticField(default=1e-12, gt=0)
    u_cap: float = PydanticField(default=1e6, gt=0)
    positivity: Literal['reject_and_halve'] = 'reject_and_halve'

    @model_validator(mode='after')
    def check_dt_range(self) -> Self:
        """Require dt_min < dt_max"""
        if not self.dt_min < self.dt_max:
            raise ValueError(
                f'need dt_min < dt_max, got {self.dt_min} >= {self.dt_max}'
            )
        return self


@dataclass(frozen=True, eq=False)
class State:
    """Solution at time t"""

    u: Field
    v: Field
    t: float


class StepOutcome(BaseModel):
    """Result of one attempted step, or of a whole run"""

    accepted: bool
    dt_used: float
    rejections: int = 0
    stop_reason: StopReason = StopReason.NONE


class StabilityLimits(NamedTuple):
    """Step-size limits before the safety factor is applied"""

    diffusion: float
    taxis: float
    reaction: float

    def combined(self) -> float:
        """The binding limit"""
        return min(self)


def face_velocities(
    v: np.ndarray, hx: float, hy: float
) -> tuple[np.ndarray, np.ndarray]:
    """Velocities at interior faces: shapes (nx-1, ny) and (nx, ny-1)"""
    ax = (v[1:, :] - v[:-1, :]) / hx
    ay = (v[:, 1:] - v[:, :-1]) / hy
    return ax, ay


def taxis_divergence(
    u: np.ndarray, v: np.ndarray, hx: float, hy: float
) -> np.ndarray:
    """Discrete div(u grad v) with donor-cell u and zero boundary flux"""
    ax, ay = face_velocities(v, hx, hy)
    flux_x = np.maximum(ax, 0.0) * u[:-1, :] + np.minimum(ax, 0.0) * u[1:, :]
    flux_y = np.maximum(ay, 0.0) * u[:, :-1] + np.minimum(ay, 0.0) * u[:, 1:]
    div = np.zeros_like(u)
    div[:-1, :] += flux_x / hx
    div[1:, :] -= flux_x / hx
    div[:, :-1] += flux_y / hy
    div[:, 1:] -= flux_y / hy
    return div


def stability_limits(state: State, spec: ProblemSpec) -> StabilityLimits:
    """Diffusion, upwind taxis and reaction limits at `state`"""
    grid = spec.grid
    hx, hy = grid.hx, grid.hy
    ax, ay = face_velocities(state.v.values, hx, hy)
    max_ax = float(np.abs(ax).max())
    max_ay = float(np.abs(ay).max())
    taxis = min(
        hx / max_ax if max_ax > 0 else math.inf,
        hy / max_ay if max_ay > 0 else math.inf,
    )
    diffusion = 1.0 / (2.0 / hx**2 + 2.0 / hy**2)
    reaction = 1.0 / (spec.kappa0 + spec.mu.max() * state.u.max() + 1.0)
    return StabilityLimits(diffusion, taxis, reaction)


def compute_stable_dt(
    state: State, spec: ProblemSpec, cfg: StepperConfig
) -> float:
    """Safety factor times the tightest limit, clamped to [dt_min, dt_max]"""
    dt = cfg.cfl_safety * stability_limits(state, spec).combined()
    return min(max(dt, cfg.dt_min), cfg.dt_max)


def euler_update(state: State, spec: ProblemSpec, dt: float) -> State:
    """One forward Euler step in flux form, without acceptance checks"""
    grid = spec.grid
    hx, hy = grid.hx, grid.hy
    u, v = state.u.values, state.v.values
    du = (
        laplacian_values(u, hx, hy)
        - taxis_divergence(u, v, hx, hy)
        + spec.kappa.values * u
        - spec.mu.values * u**2
    )
    dv = laplacian_values(v, hx, hy) - v + u
    return State(
        u=Field(grid, u + dt * du),
        v=Field(grid, v + dt * dv),
        t=state.t + dt,
    )


def _admissible(candidate: State) -> bool:
    u, v = candidate.u.values, candidate.v.values
    return bool(
        np.all(np.isfinite(u))
        and np.all(np.isfinite(v))
        and u.min() >= 0
        and v.min() >= 0
    )


def step(
    state: State,
    spec: ProblemSpec,
    dt: float,
    cfg: StepperConfig,
    dt_floor: float | None = None,
) -> tuple[State, StepOutcome]:
    """Advance by dt, halving until the result is nonnegative.

    Args:
        state: State at the start of the step.
        spec: The problem.
        dt: Proposed step.
        cfg: Step-size control.
        dt_floor: Smallest admissible halved step, `cfg.dt_min` by default.

    Returns:
        The accepted state and its outcome. On step underflow (the halved
        step drops below the floor) the input state is returned with
        `stop_reason = dt_underflow`.
    """
    if dt <= 0:
        raise ValueError(f'step size must be positive, got {dt}')
    floor = cfg.dt_min if dt_floor is None else dt_floor
    rejections = 0
    while True:
        candidate = euler_update(state, spec, dt)
        if _admissible(candidate):
            return candidate, StepOutcome(
                accepted=True, dt_used=dt, rejections=rejections
            )
        rejections += 1
        logger.debug(f'rejected step dt={dt:.3e} at t={state.t:.6g}')
        dt /= 2.0
        if dt < floor:
            return state, StepOutcome(
                accepted=False,
                dt_used=dt,
                rejections=rejections,
                stop_reason=StopReason.DT_UNDERFLOW,
            )


class StepObserver(Protocol):
    """Receives every accepted step and produces diagnostic records"""

    def accumulate(self, state: State, dt: float) -> None:
        """Add the contribution of [t, t + dt] evaluated at `state`"""

    def record(self, state: State, dt: float) -> Any:
        """Produce a diagnostics record at `state.t`"""


@dataclass
class RunResult:
    """Everything a run produces"""

    outcome: StepOutcome
    final_state: State
    records: list[Any] = field(default_factory=list)
    snapshots: list[State] = field(default_factory=list)
    steps: int = 0
    rejections: int = 0

    @property
    def stop_reason(self) -> StopReason:
        """Why the run halted"""
        return self.outcome.stop_reason

    @property
    def t_stop(self) -> float:
        """Time of the final state"""
        return self.final_state.t


def run(
    spec: ProblemSpec,
    cfg: StepperConfig,
    diag_times: Iterable[float] = (),
    observer: StepObserver | None = None,
    snapshot_times: Iterable[float] = (),
    on_snapshot: Callable[[State], None] | None = None,
) -> RunResult:
    """Integrate from t = 0 to T, landing exactly on every requested time.

    The run halts at T, when sup u exceeds `cfg.u_cap`, or when step
    halving underflows. Records and snapshots gathered before an early stop
    are returned.
    """
    diag = sorted({float(t) for t in diag_times})
    snaps = sorted({float(t) for t in snapshot_times})
    for t in (*diag, *snaps):
        if not 0 < t <= spec.T:
            raise ConfigError(
                f'requested time {t} outside (0, T={spec.T}]',
                'diagnostics.times',
            )
    if not cfg.u_cap > spec.u0.max():
        raise ConfigError(
            f'u_cap={cfg.u_cap} must exceed max u0={spec.u0.max()}',
            'time.u_cap',
        )
    diag_set, snap_set = set(diag), set(snaps)
    targets = sorted(diag_set | snap_set | {spec.T})

    state = State(spec.u0, spec.v0, 0.0)
    result = RunResult(
        outcome=StepOutcome(accepted=True, dt_used=0.0), final_state=state
    )
    last_dt = 0.0

    def halt(reason: StopReason) -> RunResult:
        result.outcome = StepOutcome(
            accepted=reason == StopReason.T_REACHED,
            dt_used=last_dt,
            rejections=result.rejections,
            stop_reason=reason,
        )
        result.final_state = state
        logger.info(
            f'run stopped: {reason.value} at t={state.t:.6g} after '
            f'{result.steps} steps ({result.rejections} rejections)'
        )
        return result

    for target in targets:
        while state.t < target:
            dt = compute_stable_dt(state, spec, cfg)
            remaining = target - state.t
            landing = dt >= remaining
            dt_floor = None
            if landing:
                dt = remaining
                # landing steps keep the halving depth of a dt_max step
                dt_floor = cfg.dt_min * min(1.0, dt / cfg.dt_max)
            elif remaining - dt < cfg.dt_min:
                # no remainder shorter than dt_min before a target
                dt = remaining / 2.0
            new_state, outcome = step(state, spec, dt, cfg, dt_floor)
            result.rejections += outcome.rejections
            if outcome.stop_reason is StopReason.DT_UNDERFLOW:
                return halt(StopReason.DT_UNDERFLOW)
            if observer is not None:
                observer.accumulate(state, outcome.dt_used)
            if landing and outcome.dt_used == dt:
                new_state = replace(new_state, t=target)
            state = new_state
            last_dt = outcome.dt_used
            result.steps += 1
            if result.steps % settings.progress_every == 0:
                logger.debug(
                    f'step {result.steps}: t={state.t:.6g} dt={last_dt:.3e} '
                    f'sup u={state.u.max():.6g}'
                )
            if state.u.max() > cfg.u_cap:
                return halt(StopReason.U_CAP)
        if target in diag_set and observer is not None:
            result.records.append(observer.record(state, last_dt))
        if target in snap_set:
            result.snapshots.append(state)
            if on_snapshot is not None:
                on_snapshot(state)
    return halt(StopReason.T_REACHED)
