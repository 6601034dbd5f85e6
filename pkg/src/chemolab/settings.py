"""Settings"""

from pathlib import Path
from typing import ClassVar, Literal, Self

from pydantic import Field, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-wide defaults, overridable with `CHEMOLAB_*` variables"""

    model_config: ClassVar[SettingsConfigDict] = SettingsConfigDict(
        env_file='.env', env_prefix='CHEMOLAB_', extra='ignore'
    )

    log_level: Literal['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'] = 'INFO'
    """Log level"""

    output_dir: Path = Path('runs')
    """Directory under which run directories are created"""

    tol_quad: float = Field(default=0.02, ge=0)
    """Relative slack in the mass/dissipation bound check"""

    theta_b: float = Field(default=0.5, gt=0, le=1)
    """Fraction of sup u defining the numerical blow-up set"""

    mu_tol: float = Field(default=1e-8, ge=0)
    """Cells with mu at or below this value form the zero set"""

    tol_interp: float = Field(default=0.10, ge=0)
    """Relative slack of the advisory interpolation check"""

    probe_nx: int = Field(default=8, ge=4)
    """Cells per side of the probe grid used to estimate K(p+1, p+1)"""

    probe_steps: int = Field(default=16, ge=1)
    """Time steps of the probe heat problem"""

    probe_budget: int = Field(default=200, ge=1)
    """Ratio evaluations allowed for one general (p, q) estimate"""

    max_workers: int = Field(default=4, ge=1)
    """Worker processes for sweeps"""

    progress_every: int = Field(default=1000, ge=1)
    """Accepted steps between debug progress lines"""

    @model_validator(mode='after')
    def setup_logging(self) -> Self:
        """Setup logging"""
        from .loggers import get_logger

        logger = get_logger()
        logger.setLevel(self.log_level)
        get_logger(__name__).debug(
            f'settings initialized: {self.model_dump_json(indent=2)}'
        )
        return self


settings = Settings()
