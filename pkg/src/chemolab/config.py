"""Loading and eager validation of run configurations"""

import copy
import re
import tomllib
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from .diagnostics import Functional, Monitor, prepare_functional
from .errors import ChemolabError, ConfigError
from .expr import ExprAst, eval_expr, evaluate, parse_expr
from .grid import Field, Grid
from .loggers import get_logger
from .maxreg import estimate_K
from .schemas import RunConfig
from .solver import ProblemSpec, StepperConfig

logger = get_logger(__name__)

EXPRESSION_KEYS = ('kappa_expr', 'mu_expr', 'u0_expr', 'v0_expr')

_CENTER = '((x-0.5)^2+(y-0.5)^2)'
_LOCALIZATION: dict[str, Any] = {
    'name': 'localization',
    'seed': 0,
    'domain': {'Lx': 1.0, 'Ly': 1.0, 'nx': 128, 'ny': 128},
    'coefficients': {
        'kappa_expr': '1',
        'mu_expr': f'min(1, 16*{_CENTER})',
        'u0_expr': f'10 + 100*exp(-40*{_CENTER})',
        'v0_expr': '0',
    },
    'time': {
        'T': 5.0,
        'tau': 1.0,
        'dt_max': 1e-3,
        'dt_min': 1e-12,
        'cfl_safety': 0.9,
        'u_cap': 1e6,
    },
    'diagnostics': {
        'times': [0.5 * k for k in range(1, 11)],
        'zero_point': [0.5, 0.5],
        'r_in': 0.15,
        'r_out': 0.3,
    },
    'outputs': {'snapshot_times': [5.0], 'heatmaps': True},
}

_CONTROL = copy.deepcopy(_LOCALIZATION)
_CONTROL['name'] = 'localization-control'
_CONTROL['coefficients']['mu_expr'] = 'min(1, 16*((x-0.25)^2+(y-0.25)^2))'
_CONTROL['diagnostics']['zero_point'] = [0.25, 0.25]

BUILTIN_CONFIGS: dict[str, dict[str, Any]] = {
    'localization': _LOCALIZATION,
    'localization-control': _CONTROL,
}


@dataclass(frozen=True, eq=False)
class LoadedRun:
    """A validated config with every derived object constructed"""

    config: RunConfig
    raw: dict[str, Any]
    expressions: dict[str, ExprAst]
    problem: ProblemSpec
    stepper: StepperConfig
    functionals: list[Functional]
    source: Path | None = None

    @property
    def grid(self) -> Grid:
        """The run's grid"""
        return self.problem.grid

    def monitor(self) -> Monitor:
        """A fresh monitor for the configured norms, balls and functionals"""
        diag = self.config.diagnostics
        return Monitor(
            self.problem,
            self.functionals,
            self.config.balls,
            diag.v_norms,
            diag.grad_v_norms,
        )


def _toml_line(error: tomllib.TOMLDecodeError) -> int | None:
    match = re.search(r'line (\d+)', str(error))
    return int(match.group(1)) if match else None


def as_config_error(error: ValueError) -> ConfigError:
    """`ConfigError` for a failed validation, keyed by the first bad field"""
    if isinstance(error, ValidationError):
        first = error.errors()[0]
        key = '.'.join(str(part) for part in first['loc'])
        return ConfigError(first['msg'], key or None)
    return ConfigError(str(error))


def validate_config(data: dict[str, Any]) -> RunConfig:
    """Validate raw TOML data, reporting the first offending key"""
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise as_config_error(e) from e


def sample_field(ast: ExprAst, grid: Grid) -> Field:
    """Evaluate an expression at every cell center"""
    x, y = grid.mesh()
    return Field(grid, evaluate(ast, x, y))


def _probe_k_hat(p: float, seed: int, cache: dict[float, float]) -> float:
    if p not in cache:
        result = estimate_K(p + 1.0, p + 1.0, seed=seed)
        cache[p] = result.K_hat
        logger.info(f'probed K_hat({p + 1:g}, {p + 1:g}) = {result.K_hat:.6g}')
    return cache[p]


def prepare(
    config: RunConfig,
    raw: dict[str, Any] | None = None,
    source: Path | None = None,
) -> LoadedRun:
    """Sample coefficient fields, build cutoffs and check hypotheses"""
    grid = config.domain.grid()
    expressions: dict[str, ExprAst] = {}
    fields: dict[str, Field] = {}
    for key in EXPRESSION_KEYS:
        source_text = getattr(config.coefficients, key)
        try:
            expressions[key] = parse_expr(source_text)
            fields[key] = sample_field(expressions[key], grid)
        except ChemolabError as e:
            e.add_note(f'in coefficients.{key}')
            raise

    problem = ProblemSpec(
        grid=grid,
        kappa=fields['kappa_expr'],
        mu=fields['mu_expr'],
        u0=fields['u0_expr'],
        v0=fields['v0_expr'],
        T=config.time.T,
        tau=config.time.tau,
    )
    stepper = config.time.stepper()
    if not stepper.u_cap > problem.u0.max():
        raise ConfigError(
            f'u_cap={stepper.u_cap} must exceed max u0={problem.u0.max():.6g}',
            'time.u_cap',
        )
    for section, times in (
        ('diagnostics.times', config.diagnostics.times),
        ('outputs.snapshot_times', config.outputs.snapshot_times),
    ):
        for t in times:
            if not 0 < t <= config.time.T:
                raise ConfigError(f'time {t} outside (0, T]', section)
    if not config.diagnostics.r_in <= config.diagnostics.r_out:
        raise ConfigError('need r_in <= r_out', 'diagnostics.r_in')

    cache: dict[float, float] = {}
    functionals = []
    for k, spec in enumerate(config.functionals):
        mu_x0 = eval_expr(expressions['mu_expr'], spec.cutoff.x0)
        k_hat = spec.k_hat
        if k_hat is None:
            k_hat = _probe_k_hat(spec.p, config.seed, cache)
        try:
            functionals.append(prepare_functional(spec, problem, mu_x0, k_hat))
        except ChemolabError as e:
            e.add_note(f'in functionals[{k}]')
            raise

    for k, ball in enumerate(config.balls):
        cx, cy = ball.center
        if not (0 <= cx <= grid.Lx and 0 <= cy <= grid.Ly):
            raise ConfigError(
                f'ball center {ball.center} lies outside the domain',
                f'balls.{k}.center',
            )

    logger.debug(
        f'loaded {config.name}: grid {grid.nx}x{grid.ny}, '
        f'mu in [{problem.mu.min():.4g}, {problem.mu.max():.4g}], '
        f'max u0 {problem.u0.max():.4g}'
    )
    return LoadedRun(
        config=config,
        raw=raw if raw is not None else config.model_dump(mode='json'),
        expressions=expressions,
        problem=problem,
        stepper=stepper,
        functionals=functionals,
        source=source,
    )


def load_data(data: dict[str, Any], source: Path | None = None) -> LoadedRun:
    """Validate and prepare already-parsed TOML data"""
    return prepare(validate_config(data), data, source)


def read_toml(path: Path) -> dict[str, Any]:
    """Parse a TOML file, reporting the line of a syntax error"""
    try:
        with path.open('rb') as handle:
            return tomllib.load(handle)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f'{path}: {e}', line=_toml_line(e)) from e


def load_config(path: Path | str) -> LoadedRun:
    """Read, validate and prepare a run configuration file.

    Raises:
        ConfigError: On TOML syntax errors (with line), unknown or invalid
            keys, out-of-range times and cutoffs that cannot be realized.
        HypothesisError: When sampled mu, u0 or v0 is negative somewhere.
        ExprSyntaxError: When an expression does not parse.
    """
    path = Path(path)
    return load_data(read_toml(path), path)


def load_builtin(name: str) -> LoadedRun:
    """Load one of the configurations shipped with the package"""
    if name not in BUILTIN_CONFIGS:
        raise ConfigError(
            f'unknown builtin {name!r}; choose from {sorted(BUILTIN_CONFIGS)}'
        )
    return load_data(copy.deepcopy(BUILTIN_CONFIGS[name]))


def set_dotted(data: dict[str, Any], key: str, value: Any) -> dict[str, Any]:
    """Copy of `data` with `value` stored at a dotted key like `time.T`"""
    data = copy.deepcopy(data)
    parts = key.split('.')
    node: Any = data
    try:
        for part in parts[:-1]:
            node = (
                node[int(part)]
                if isinstance(node, list)
                else node.setdefault(part, {})
            )
        last = parts[-1]
        if isinstance(node, list):
            node[int(last)] = value
        else:
            node[last] = value
    except (AttributeError, IndexError, TypeError, ValueError) as e:
        raise ConfigError(f'cannot set {key!r}: {e}', key) from e
    return data


def coerce_value(text: str) -> Any:
    """Interpret a command-line value as a TOML scalar, else keep the text"""
    try:
        return tomllib.loads(f'value = {text}')['value']
    except tomllib.TOMLDecodeError:
        return text

