"""Arithmetic expressions in x and y for coefficient and initial-data fields

Grammar (highest precedence first): `^` (right associative), unary `-`,
`*` `/`, `+` `-`. Functions: sin, cos, exp, sqrt, abs, tanh (one argument),
min, max (two arguments); constant `pi`; variables `x`, `y`.

Evaluation is vectorized over numpy arrays and fails fast: any operation
without a finite real result raises `EvaluationError` instead of producing
NaN or inf.
"""

import math
import re
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from .errors import EvaluationError, ExprSyntaxError, UnknownIdentifierError

VARIABLES = ('x', 'y')
CONSTANTS = {'pi': np.pi}
FUNCTIONS: dict[str, int] = {
    'sin': 1,
    'cos': 1,
    'exp': 1,
    'sqrt': 1,
    'abs': 1,
    'tanh': 1,
    'min': 2,
    'max': 2,
}


@dataclass(frozen=True, slots=True)
class Number:
    """Numeric literal"""

    value: float


@dataclass(frozen=True, slots=True)
class Variable:
    """One of the coordinates `x`, `y`"""

    name: str


@dataclass(frozen=True, slots=True)
class Constant:
    """Named constant"""

    name: str


@dataclass(frozen=True, slots=True)
class Negate:
    """Unary minus"""

    operand: 'ExprAst'


@dataclass(frozen=True, slots=True)
class BinaryOp:
    """Binary arithmetic operation"""

    op: str
    left: 'ExprAst'
    right: 'ExprAst'


@dataclass(frozen=True, slots=True)
class Call:
    """Function application"""

    name: str
    args: tuple['ExprAst', ...]


type ExprAst = Number | Variable | Constant | Negate | BinaryOp | Call


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True, slots=True)
class _Token:
    kind: str  # number | ident | op | end
    text: str
    offset: int  # byte offset into the source


def _tokenize(source: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(source):
        match = _TOKEN_RE.match(source, pos)
        byte_offset = len(source[:pos].encode())
        if match is None:
            raise ExprSyntaxError(source, byte_offset, 'a token')
        kind = match.lastgroup
        assert kind is not None
        if kind != 'ws':
            tokens.append(_Token(kind, match.group(), byte_offset))
        pos = match.end()
    tokens.append(_Token('end', '', len(source.encode())))
    return tokens


class _Parser:
    """Recursive descent parser over a token list"""

    def __init__(self, source: str):
        self.source = source
        self.tokens = _tokenize(source)
        self.index = 0

    @property
    def current(self) -> _Token:
        return self.tokens[self.index]

    def _advance(self) -> _Token:
        token = self.current
        self.index += 1
        return token

    def _at(self, *ops: str) -> bool:
        return self.current.kind == 'op' and self.current.text in ops

    def _expect(self, op: str, expected: str) -> _Token:
        if not self._at(op):
            raise ExprSyntaxError(self.source, self.current.offset, expected)
        return self._advance()

    def parse(self) -> ExprAst:
        node = self._sum()
        if self.current.kind != 'end':
            raise ExprSyntaxError(
                self.source, self.current.offset, 'an operator or end of input'
            )
        return node

    def _sum(self) -> ExprAst:
        node = self._product()
        while self._at('+', '-'):
            op = self._advance().text
            node = BinaryOp(op, node, self._product())
        return node

    def _product(self) -> ExprAst:
        node = self._unary()
        while self._at('*', '/'):
            op = self._advance().text
            node = BinaryOp(op, node, self._unary())
        return node

    def _unary(self) -> ExprAst:
        if self._at('-'):
            self._advance()
            return Negate(self._unary())
        return self._power()

    def _power(self) -> ExprAst:
        base = self._primary()
        if self._at('^'):
            self._advance()
            # right operand may carry its own sign and chains to the right
            return BinaryOp('^', base, self._unary())
        return base

    def _primary(self) -> ExprAst:
        token = self.current
        if token.kind == 'number':
            self._advance()
            value = float(token.text)
            if not math.isfinite(value):
                raise ExprSyntaxError(
                    self.source, token.offset, 'a literal within float range'
                )
            return Number(value)
        if token.kind == 'ident':
            return self._identifier()
        if self._at('('):
            self._advance()
            node = self._sum()
            self._expect(')', "')'")
            return node
        raise ExprSyntaxError(
            self.source, token.offset, "a number, identifier or '('"
        )

    def _identifier(self) -> ExprAst:
        token = self._advance()
        name = token.text
        if name in FUNCTIONS:
            self._expect('(', f"'(' after {name}")
            args = [self._sum()]
            while self._at(','):
                self._advance()
                args.append(self._sum())
            self._expect(')', "',' or ')'")
            arity = FUNCTIONS[name]
            if len(args) != arity:
                raise ExprSyntaxError(
                    self.source,
                    token.offset,
                    f'{arity} argument(s) for {name}, got {len(args)}',
                )
            return Call(name, tuple(args))
        if name in VARIABLES:
            return Variable(name)
        if name in CONSTANTS:
            return Constant(name)
        raise UnknownIdentifierError(self.source, token.offset, name)


def parse_expr(source: str) -> ExprAst:
    """Parse an expression string into an immutable AST.

    Args:
        source: Expression text, e.g. `'min(1, 16*((x-0.5)^2+(y-0.5)^2))'`.

    Returns:
        The root node of the parsed expression.

    Raises:
        ExprSyntaxError: On malformed input; carries the byte offset of the
            offending token and a description of what was expected.
        UnknownIdentifierError: On names outside the fixed grammar.
    """
    if not source or not source.strip():
        raise ExprSyntaxError(source, 0, 'a non-empty expression')
    return _Parser(source).parse()


def to_source(ast: ExprAst) -> str:
    """Render an AST as fully parenthesized source that re-parses exactly"""
    match ast:
        case Number(value):
            if not math.isfinite(value):
                raise ValueError(f'literal {value!r} has no source form')
            text = repr(float(value))
            return f'(-{text[1:]})' if text.startswith('-') else text
        case Variable(name) | Constant(name):
            return name
        case Negate(operand):
            return f'(-{to_source(operand)})'
        case BinaryOp(op, left, right):
            return f'({to_source(left)} {op} {to_source(right)})'
        case Call(name, args):
            return f'{name}({", ".join(to_source(a) for a in args)})'
    raise TypeError(f'not an expression node: {ast!r}')


_UNARY: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    'sin': np.sin,
    'cos': np.cos,
    'exp': np.exp,
    'abs': np.abs,
    'tanh': np.tanh,
    'sqrt': np.sqrt,
}


class _Evaluator:
    """Evaluates an AST on broadcast coordinate arrays"""

    def __init__(self, x: np.ndarray, y: np.ndarray):
        self.x, self.y = np.broadcast_arrays(
            np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
        )

    def fail(self, message: str, mask: np.ndarray) -> EvaluationError:
        mask = np.broadcast_to(mask, self.x.shape)
        index = tuple(np.argwhere(mask)[0]) if mask.ndim else ()
        return EvaluationError(
            message, (float(self.x[index]), float(self.y[index]))
        )

    def finite(self, value: np.ndarray, what: str) -> np.ndarray:
        bad = ~np.isfinite(value)
        if np.any(bad):
            raise self.fail(f'{what} has no finite value', bad)
        return value

    def eval(self, ast: ExprAst) -> np.ndarray:
        match ast:
            case Number(value):
                return self.finite(np.float64(value), 'literal')
            case Variable('x'):
                return self.x
            case Variable('y'):
                return self.y
            case Constant(name):
                return np.float64(CONSTANTS[name])
            case Negate(operand):
                return self.finite(np.negative(self.eval(operand)), '-')
            case BinaryOp(op, left, right):
                return self.binary(op, self.eval(left), self.eval(right))
            case Call(name, args):
                return self.call(name, [self.eval(a) for a in args])
        raise TypeError(f'not an expression node: {ast!r}')

    def binary(self, op: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        with np.errstate(all='ignore'):
            match op:
                case '+':
                    result = np.add(a, b)
                case '-':
                    result = np.subtract(a, b)
                case '*':
                    result = np.multiply(a, b)
                case '/':
                    zero = np.equal(b, 0)
                    if np.any(zero):
                        raise self.fail('division by zero', zero)
                    result = np.divide(a, b)
                case '^':
                    bad = np.equal(a, 0) & np.less(b, 0)
                    if np.any(bad):
                        raise self.fail('zero to a negative power', bad)
                    bad = np.less(a, 0) & np.not_equal(b, np.floor(b))
                    if np.any(bad):
                        raise self.fail(
                            'negative base with non-integer exponent', bad
                        )
                    result = np.power(a, b)
                case _:
                    raise TypeError(f'unknown operator {op!r}')
        return self.finite(result, f"'{op}'")

    def call(self, name: str, args: list[np.ndarray]) -> np.ndarray:
        with np.errstate(all='ignore'):
            if name == 'min':
                result = np.minimum(args[0], args[1])
            elif name == 'max':
                result = np.maximum(args[0], args[1])
            else:
                (arg,) = args
                if name == 'sqrt' and np.any(neg := np.less(arg, 0)):
                    raise self.fail('sqrt of a negative number', neg)
                result = _UNARY[name](arg)
        return self.finite(result, name)


def evaluate(ast: ExprAst, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Evaluate an AST at every point of broadcast coordinate arrays.

    Raises:
        EvaluationError: Naming the first point where the value is undefined
            (division by zero, sqrt of a negative, zero to a negative power)
            or not finite.
    """
    evaluator = _Evaluator(x, y)
    result = evaluator.finite(evaluator.eval(ast), 'expression')
    return np.array(np.broadcast_to(result, evaluator.x.shape), dtype=float)


def eval_expr(ast: ExprAst, point: tuple[float, float]) -> float:
    """Evaluate an AST at a single point `(x, y)`"""
    return float(evaluate(ast, np.float64(point[0]), np.float64(point[1])))
