"""Run configuration models

The TOML run file maps one-to-one onto `RunConfig`: tables `[domain]`,
`[coefficients]`, `[time]`, `[diagnostics]`, `[outputs]`, arrays of tables
`[[functionals]]` and `[[balls]]`, and the top-level keys `name` and
`seed`. Unknown keys are rejected.
"""

from typing import Literal, Self

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .diagnostics import BallSpec, FunctionalSpec, NormExponent
from .grid import Grid
from .settings import settings
from .solver import StepperConfig


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')


class DomainConfig(_Section):
    """The rectangle [0, Lx] x [0, Ly] and its cell counts"""

    Lx: float = Field(gt=0)
    Ly: float = Field(gt=0)
    nx: int = Field(ge=4)
    ny: int = Field(ge=4)

    def grid(self) -> Grid:
        """The grid described by this section"""
        return Grid(nx=self.nx, ny=self.ny, Lx=self.Lx, Ly=self.Ly)


class CoefficientsConfig(_Section):
    """Expressions in x and y"""

    kappa_expr: str
    mu_expr: str
    u0_expr: str
    v0_expr: str


class TimeConfig(_Section):
    """Horizon, start of the local monitoring window and stepper limits"""
    T: float = Field(gt=0)
    tau: float = Field(gt=0)
    dt_max: float = Field(default=1e-3, gt=0)
    dt_min: float = Field(default=1e-12, gt=0)
    cfl_safety: float = Field(default=0.9, gt=0, le=1)
    u_cap: float = Field(default=1e6, gt=0)

    @model_validator(mode='after')
    def check_order(self) -> Self:
        """Require tau < T and dt_min < dt_max"""
        if not self.tau < self.T:
            raise ValueError(f'need tau < T, got tau={self.tau}, T={self.T}')
        if not self.dt_min < self.dt_max:
            raise ValueError(
                f'need dt_min < dt_max, got {self.dt_min} >= {self.dt_max}'
            )
        return self

    def stepper(self) -> StepperConfig:
        """Stepper settings for the solver"""
        return StepperConfig(
            cfl_safety=self.cfl_safety,
            dt_max=self.dt_max,
            dt_min=self.dt_min,
            u_cap=self.u_cap,
        )


class DiagnosticsConfig(_Section):
    """Diagnostic times, global norms and blow-up report tolerances"""
    times: list[float] = []
    """Diagnostic times in (0, T]"""
    v_norms: list[NormExponent] = []
    grad_v_norms: list[NormExponent] = []
    tol_quad: float = Field(default_factory=lambda: settings.tol_quad, ge=0)
    theta_b: float = Field(default_factory=lambda: settings.theta_b, gt=0, le=1)
    mu_tol: float = Field(default_factory=lambda: settings.mu_tol, ge=0)
    zero_point: tuple[float, float] | None = None
    """Expected blow-up point, for the concentration ratio"""
    r_in: float = Field(default=0.15, gt=0)
    r_out: float = Field(default=0.3, gt=0)


class OutputsConfig(_Section):
    """Files written besides the diagnostics CSV"""
    csv: str = 'diagnostics.csv'
    snapshot_times: list[float] = []
    snapshot_fields: list[Literal['u', 'v']] = ['u', 'v']
    heatmaps: bool = False


class RunConfig(_Section):
    """A complete run description"""

    name: str = 'run'
    seed: int = 0
    domain: DomainConfig
    coefficients: CoefficientsConfig
    time: TimeConfig
    diagnostics: DiagnosticsConfig = DiagnosticsConfig()
    outputs: OutputsConfig = OutputsConfig()
    functionals: list[FunctionalSpec] = []
    balls: list[BallSpec] = []
