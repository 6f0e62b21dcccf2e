"""Boolean/arithmetic expressions over integer state variables.

Shared by the PRISM-subset reader (guards, probabilities, updates) and by
reachability queries. Three evaluators are provided: a tree-walking scalar
interpreter, a compiler to Python closures for hot loops, and a numpy
evaluator that works column-wise over a whole state space.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from .errors import Diagnostic, LisaSyntaxError


@dataclass(frozen=True)
class Token:
    kind: str  # 'num', 'id', 'str', 'op', 'eof'
    text: str
    line: int
    col: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>//[^\n]*)
  | (?P<num>\d+\.\d+(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+|\d+|\.\d+(?:[eE][+-]?\d+)?)
  | (?P<id>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<str>"[^"\n]*")
  | (?P<op>->|\.\.|<=>|<=|>=|!=|=>|[\[\](){};:,'=<>&|!+\-*/?])
    """,
    re.VERBOSE,
)


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise LisaSyntaxError(
                [Diagnostic("error", line, pos - line_start + 1, f"unexpected character {text[pos]!r}")]
            )
        kind = m.lastgroup
        value = m.group()
        if kind not in ("ws", "comment"):
            tokens.append(Token(kind, value, line, pos - line_start + 1))
        newlines = value.count("\n")
        if newlines:
            line += newlines
            line_start = pos + value.rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


# ---------------------------------------------------------------- AST


class Expr:
    __slots__ = ()

    def __and__(self, other: "Expr") -> "Expr":
        return Binary("&", self, other)

    def __or__(self, other: "Expr") -> "Expr":
        return Binary("|", self, other)

    def __invert__(self) -> "Expr":
        return Unary("!", self)


@dataclass(frozen=True)
class Num(Expr):
    value: int | float | bool

    def __str__(self) -> str:
        if isinstance(self.value, bool):
            return "true" if self.value else "false"
        return repr(self.value)


@dataclass(frozen=True)
class Var(Expr):
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Label(Expr):
    name: str

    def __str__(self) -> str:
        return f'"{self.name}"'


@dataclass(frozen=True)
class Unary(Expr):
    op: str  # '!' or '-'
    operand: Expr

    def __str__(self) -> str:
        return f"{self.op}({self.operand})"


@dataclass(frozen=True)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr

    def __str__(self) -> str:
        return f"({self.left} {self.op} {self.right})"


BOOL_OPS = {"&", "|"}
REL_OPS = {"=", "!=", "<", "<=", ">", ">="}
ARITH_OPS = {"+", "-", "*", "/"}


def names(expr: Expr) -> set[str]:
    """Variable/constant identifiers referenced by ``expr``."""
    out: set[str] = set()
    for node in walk(expr):
        if isinstance(node, Var):
            out.add(node.name)
    return out


def labels(expr: Expr) -> set[str]:
    return {node.name for node in walk(expr) if isinstance(node, Label)}


def walk(expr: Expr) -> Iterator[Expr]:
    yield expr
    if isinstance(expr, Unary):
        yield from walk(expr.operand)
    elif isinstance(expr, Binary):
        yield from walk(expr.left)
        yield from walk(expr.right)


def substitute(expr: Expr, values: Mapping[str, int | float]) -> Expr:
    """Replace identifiers found in ``values`` by literals."""
    if isinstance(expr, Var) and expr.name in values:
        return Num(values[expr.name])
    if isinstance(expr, Unary):
        return Unary(expr.op, substitute(expr.operand, values))
    if isinstance(expr, Binary):
        return Binary(expr.op, substitute(expr.left, values), substitute(expr.right, values))
    return expr


# ---------------------------------------------------------------- parsing


class TokenStream:
    """Cursor over a token list with located error reporting."""

    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def at(self, text: str) -> bool:
        t = self.tok
        return t.kind in ("op", "id") and t.text == text

    def next(self) -> Token:
        t = self.tokens[self.i]
        if t.kind != "eof":
            self.i += 1
        return t

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.error(f"expected {text!r}, found {self.describe(self.tok)}")
        return self.next()

    def expect_id(self) -> Token:
        if self.tok.kind != "id":
            self.error(f"expected identifier, found {self.describe(self.tok)}")
        return self.next()

    @staticmethod
    def describe(t: Token) -> str:
        return "end of input" if t.kind == "eof" else repr(t.text)

    def error(self, message: str, tok: Token | None = None) -> None:
        t = tok or self.tok
        raise LisaSyntaxError([Diagnostic("error", t.line, t.col, message)])


def parse_expr(ts: TokenStream) -> Expr:
    return _parse_or(ts)


def _parse_or(ts: TokenStream) -> Expr:
    left = _parse_and(ts)
    while ts.at("|"):
        ts.next()
        left = Binary("|", left, _parse_and(ts))
    return left


def _parse_and(ts: TokenStream) -> Expr:
    left = _parse_not(ts)
    while ts.at("&"):
        ts.next()
        left = Binary("&", left, _parse_not(ts))
    return left


def _parse_not(ts: TokenStream) -> Expr:
    if ts.at("!"):
        ts.next()
        return Unary("!", _parse_not(ts))
    return _parse_rel(ts)


def _parse_rel(ts: TokenStream) -> Expr:
    left = _parse_add(ts)
    if ts.tok.kind == "op" and ts.tok.text in REL_OPS:
        op = ts.next().text
        left = Binary(op, left, _parse_add(ts))
    return left


def _parse_add(ts: TokenStream) -> Expr:
    left = _parse_mul(ts)
    while ts.tok.kind == "op" and ts.tok.text in ("+", "-"):
        op = ts.next().text
        left = Binary(op, left, _parse_mul(ts))
    return left


def _parse_mul(ts: TokenStream) -> Expr:
    left = _parse_unary(ts)
    while ts.tok.kind == "op" and ts.tok.text in ("*", "/"):
        op = ts.next().text
        left = Binary(op, left, _parse_unary(ts))
    return left


def _parse_unary(ts: TokenStream) -> Expr:
    if ts.at("-"):
        ts.next()
        return Unary("-", _parse_unary(ts))
    return _parse_atom(ts)


def _parse_atom(ts: TokenStream) -> Expr:
    t = ts.tok
    if t.kind == "num":
        ts.next()
        text = t.text
        if any(c in text for c in ".eE"):
            return Num(float(text))
        return Num(int(text))
    if t.kind == "str":
        ts.next()
        return Label(t.text[1:-1])
    if t.kind == "id":
        if t.text in ("true", "false"):
            ts.next()
            return Num(t.text == "true")
        if ts.peek().text == "(" and ts.peek().kind == "op":
            ts.error(f"unsupported construct: function call {t.text}(...)")
        ts.next()
        return Var(t.text)
    if ts.at("("):
        ts.next()
        inner = parse_expr(ts)
        ts.expect(")")
        return inner
    if t.kind == "op" and t.text in ("?", "=>", "<=>"):
        ts.error(f"unsupported construct: operator {t.text!r}")
    ts.error(f"expected expression, found {ts.describe(t)}")
    raise AssertionError  # unreachable


def parse_expression(text: str) -> Expr:
    ts = TokenStream(tokenize(text))
    e = parse_expr(ts)
    if ts.tok.kind != "eof":
        ts.error(f"unexpected {ts.describe(ts.tok)} after expression")
    return e


# ---------------------------------------------------------------- evaluation


def _rel(op: str, a, b):
    if op == "=":
        return a == b
    if op == "!=":
        return a != b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    return a >= b


def _arith(op: str, a, b):
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    return a / b


def evaluate(expr: Expr, env: Mapping[str, int | float], state_labels: frozenset[str] = frozenset()):
    """Tree-walking scalar interpreter."""
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Var):
        try:
            return env[expr.name]
        except KeyError:
            raise NameError(f"unknown identifier {expr.name!r}") from None
    if isinstance(expr, Label):
        return expr.name in state_labels
    if isinstance(expr, Unary):
        v = evaluate(expr.operand, env, state_labels)
        return (not v) if expr.op == "!" else -v
    assert isinstance(expr, Binary)
    if expr.op == "&":
        return bool(evaluate(expr.left, env, state_labels)) and bool(evaluate(expr.right, env, state_labels))
    if expr.op == "|":
        return bool(evaluate(expr.left, env, state_labels)) or bool(evaluate(expr.right, env, state_labels))
    a = evaluate(expr.left, env, state_labels)
    b = evaluate(expr.right, env, state_labels)
    if expr.op in REL_OPS:
        return _rel(expr.op, a, b)
    return _arith(expr.op, a, b)


def _py(expr: Expr, index: Mapping[str, int]) -> str:
    if isinstance(expr, Num):
        return repr(expr.value)
    if isinstance(expr, Var):
        if expr.name not in index:
            raise NameError(f"unknown identifier {expr.name!r}")
        return f"v[{index[expr.name]}]"
    if isinstance(expr, Label):
        return f"({expr.name!r} in lab)"
    if isinstance(expr, Unary):
        inner = _py(expr.operand, index)
        return f"(not {inner})" if expr.op == "!" else f"(-{inner})"
    assert isinstance(expr, Binary)
    op = {"&": "and", "|": "or", "=": "=="}.get(expr.op, expr.op)
    return f"({_py(expr.left, index)} {op} {_py(expr.right, index)})"


def compile_expr(expr: Expr, variables: Sequence[str]) -> Callable:
    """Compile to ``f(v, lab=frozenset())`` where ``v`` is a tuple ordered like ``variables``."""
    index = {name: i for i, name in enumerate(variables)}
    src = f"lambda v, lab=frozenset(): {_py(expr, index)}"
    return eval(compile(src, "<expr>", "eval"))  # noqa: S307 - source is generated from a parsed AST


def evaluate_columns(expr: Expr, columns: Mapping[str, np.ndarray], label_masks: Mapping[str, np.ndarray], n: int):
    """Evaluate over ``n`` states at once; identifiers map to arrays or scalars."""
    if isinstance(expr, Num):
        return np.full(n, expr.value)
    if isinstance(expr, Var):
        if expr.name not in columns:
            raise NameError(f"unknown identifier {expr.name!r}")
        return np.broadcast_to(np.asarray(columns[expr.name]), (n,))
    if isinstance(expr, Label):
        if expr.name not in label_masks:
            return np.zeros(n, dtype=bool)
        return label_masks[expr.name]
    if isinstance(expr, Unary):
        v = evaluate_columns(expr.operand, columns, label_masks, n)
        return ~v.astype(bool) if expr.op == "!" else -v
    assert isinstance(expr, Binary)
    a = evaluate_columns(expr.left, columns, label_masks, n)
    b = evaluate_columns(expr.right, columns, label_masks, n)
    if expr.op == "&":
        return a.astype(bool) & b.astype(bool)
    if expr.op == "|":
        return a.astype(bool) | b.astype(bool)
    if expr.op in REL_OPS:
        return _rel(expr.op, a, b)
    if expr.op == "/":
        return a / b
    return _arith(expr.op, a, b)
