"""Exception hierarchy"""

from typing import Any


class ChemolabError(Exception):
    """Base class for all errors raised by chemolab"""

    kind: str = 'error'

    def details(self) -> dict[str, Any]:
        """Machine-readable context for failure summaries"""
        return {}


class ExprSyntaxError(ChemolabError):
    """An expression could not be parsed"""

    kind = 'syntax_error'

    def __init__(self, source: str, offset: int, expected: str):
        """Error at character `offset` of `source`"""
        self.source = source
        self.offset = offset
        self.expected = expected
        super().__init__(
            f'syntax error at offset {offset} in {source!r}: '
            f'expected {expected}'
        )

    def details(self) -> dict[str, Any]:
        """Offset and expected token"""
        return {'offset': self.offset, 'expected': self.expected}


class UnknownIdentifierError(ExprSyntaxError):
    """An expression names a variable or function that does not exist"""

    kind = 'unknown_identifier'

    def __init__(self, source: str, offset: int, name: str):
        """Error naming the unknown identifier"""
        self.name = name
        super().__init__(
            source, offset, f'a known identifier, got {name!r}'
        )


class EvaluationError(ChemolabError):
    """An expression has no finite real value at some point"""

    kind = 'evaluation_error'

    def __init__(self, message: str, point: tuple[float, float]):
        """Error at the first offending point"""
        self.point = point
        super().__init__(f'{message} at (x, y) = {point}')

    def details(self) -> dict[str, Any]:
        """The offending point"""
        return {'point': list(self.point)}


class ConfigError(ChemolabError):
    """A configuration value is invalid"""

    kind = 'config_error'

    def __init__(
        self, message: str, key: str | None = None, line: int | None = None
    ):
        """Error with an optional dotted key and TOML line"""
        self.key = key
        self.line = line
        where = ''
        if key is not None:
            where += f' [key {key}]'
        if line is not None:
            where += f' [line {line}]'
        super().__init__(message + where)

    def details(self) -> dict[str, Any]:
        """Key and line"""
        return {'key': self.key, 'line': self.line}


class HypothesisError(ConfigError):
    """Sampled data violate a hypothesis of the model (e.g. mu >= 0)"""

    kind = 'hypothesis_error'

    def __init__(
        self,
        message: str,
        key: str,
        cell: tuple[int, int],
        point: tuple[float, float],
        value: float,
    ):
        """Error at the first offending cell"""
        self.cell = cell
        self.point = point
        self.value = value
        super().__init__(
            f'{message}: value {value!r} at cell {cell}, point {point}', key
        )

    def details(self) -> dict[str, Any]:
        """Key, cell, point and value"""
        return {
            'key': self.key,
            'cell': list(self.cell),
            'point': list(self.point),
            'value': self.value,
        }


class CutoffError(ConfigError):
    """A cutoff specification cannot be realized on the grid"""

    kind = 'cutoff_error'


class ProbeError(ChemolabError):
    """The maximal-regularity probe could not produce an estimate"""

    kind = 'probe_error'


class CheckFailure(ChemolabError):
    """A checked inequality failed"""

    kind = 'check_failed'

    def __init__(self, message: str, **sides: Any):
        """Failure with both sides of the inequality as keywords"""
        self.sides = sides
        super().__init__(f'{message}: {sides}')

    def details(self) -> dict[str, Any]:
        """Both sides of the failed inequality"""
        return dict(self.sides)
