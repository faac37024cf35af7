"""A closed expression language for objectives and constraints.

Grammar (lowest to highest precedence)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' unary)?          # right-associative
    atom    := NUMBER | VAR | FUNC '(' expr ')' | '(' expr ')'

Variables are ``x1..xn`` (decisions) and ``xi1..xiu`` (uncertain
parameters). Functions: exp, log, sqrt, sin, cos, abs. So ``-x1^2`` means
``-(x1^2)`` and ``2^-x1`` means ``2^(-x1)``.

Expressions compile to closures that accept scalars or numpy arrays, which
is how the solvers evaluate one constraint over many data points at once.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .errors import (
    ConfigError,
    DimensionError,
    DivideByZero,
    DomainError,
    DslSyntaxError,
    IndexOutOfRange,
    NonDifferentiable,
    UnknownIdentifier,
)

FUNCTIONS = ("exp", "log", "sqrt", "sin", "cos", "abs")


# AST

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    kind: str  # "x" or "xi"
    index: int  # 1-based


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Num, Var, Neg, BinOp, Call]

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}
_NEG_PREC = 3


def to_source(node: Node) -> str:
    """Print with the minimum parentheses needed to reparse to ``node``."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return f"{node.kind}{node.index}"
    if isinstance(node, Call):
        return f"{node.func}({to_source(node.arg)})"
    if isinstance(node, Neg):
        inner = to_source(node.arg)
        if _prec(node.arg) < _NEG_PREC:
            inner = f"({inner})"
        return f"-{inner}"
    p = _PREC[node.op]
    left, right = to_source(node.left), to_source(node.right)
    if node.op == "^":
        if _prec(node.left) <= p:
            left = f"({left})"
        if _prec(node.right) < _NEG_PREC:
            right = f"({right})"
        return f"{left}^{right}"
    if _prec(node.left) < p:
        left = f"({left})"
    if _prec(node.right) <= p:
        right = f"({right})"
    return f"{left} {node.op} {right}"


def _prec(node: Node) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _NEG_PREC
    return 10


def variables(node: Node) -> set[Var]:
    if isinstance(node, Var):
        return {node}
    if isinstance(node, Num):
        return set()
    if isinstance(node, (Neg, Call)):
        return variables(node.arg)
    return variables(node.left) | variables(node.right)


def contains_call(node: Node, func: str) -> bool:
    if isinstance(node, Call):
        return node.func == func or contains_call(node.arg, func)
    if isinstance(node, Neg):
        return contains_call(node.arg, func)
    if isinstance(node, BinOp):
        return contains_call(node.left, func) or contains_call(node.right, func)
    return False


# tokenizer and parser

_TOKEN = re.compile(
    r"(?P<ws>[ \t\r\n]+)"
    r"|(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()])"
)
_VAR = re.compile(r"(xi|x)(\d+)$")


@dataclass
class _Tok:
    kind: str  # num, name, op, end
    text: str
    line: int
    col: int


def _tokenize(source: str) -> list[_Tok]:
    toks, pos, line, line_start = [], 0, 1, 0
    while pos < len(source):
        m = _TOKEN.match(source, pos)
        if m is None:
            raise DslSyntaxError(f"unexpected character {source[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "ws":
            text = m.group()
            nl = text.count("\n")
            if nl:
                line += nl
                line_start = pos + text.rindex("\n") + 1
        else:
            toks.append(_Tok(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    toks.append(_Tok("end", "", line, pos - line_start + 1))
    return toks


_ATOM_START = ("number", "variable", "function", "'('")


class _Parser:
    def __init__(self, source: str, n: int, u: int):
        self.toks = _tokenize(source)
        self.i = 0
        self.n, self.u = n, u

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def fail(self, expected):
        t = self.tok
        what = "end of input" if t.kind == "end" else repr(t.text)
        raise DslSyntaxError(f"unexpected {what}", t.line, t.col, expected)

    def take_op(self, *ops):
        if self.tok.kind == "op" and self.tok.text in ops:
            t = self.tok
            self.i += 1
            return t.text
        return None

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "end":
            self.fail(("'+'", "'-'", "'*'", "'/'", "'^'", "end of input"))
        return node

    def expr(self) -> Node:
        node = self.term()
        while (op := self.take_op("+", "-")) is not None:
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while (op := self.take_op("*", "/")) is not None:
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.take_op("-"):
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.take_op("^"):
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Node:
        t = self.tok
        if t.kind == "num":
            self.i += 1
            return Num(float(t.text))
        if t.kind == "op" and t.text == "(":
            self.i += 1
            node = self.expr()
            if not self.take_op(")"):
                self.fail(("')'", "operator"))
            return node
        if t.kind == "name":
            self.i += 1
            m = _VAR.match(t.text)
            if m:
                kind, idx = m.group(1), int(m.group(2))
                limit = self.n if kind == "x" else self.u
                if not 1 <= idx <= limit:
                    raise IndexOutOfRange(
                        f"{t.text} is out of range ({kind}1..{kind}{limit})", t.line, t.col
                    )
                return Var(kind, idx)
            if t.text in FUNCTIONS:
                if not self.take_op("("):
                    self.fail(("'('",))
                arg = self.expr()
                if not self.take_op(")"):
                    self.fail(("')'",))
                return Call(t.text, arg)
            raise UnknownIdentifier(f"unknown identifier {t.text!r}", t.line, t.col)
        self.fail(_ATOM_START)


# evaluation

class _Env:
    """Variable bindings; each entry a float or an ndarray."""

    __slots__ = ("x", "xi")

    def __init__(self, x, xi):
        self.x = x
        self.xi = xi


def _bad(mask) -> bool:
    return bool(np.any(mask))


def _int_exponent(b):
    if np.ndim(b) == 0 and float(b).is_integer() and abs(b) <= 1024:
        return int(b)
    return None


def _ipow(a, k: int):
    """a**k by repeated multiplication (k >= 0)."""
    out = np.ones_like(a) if isinstance(a, np.ndarray) else 1.0
    for _ in range(k):
        out = out * a
    return out


def _compile_value(node: Node, strict: bool, abs_eps) -> Callable[[_Env], object]:
    """Closure computing the node value; non-strict mode yields nan on domain errors."""
    src = None

    def where():
        nonlocal src
        if src is None:
            src = to_source(node)
        return src

    def domain(cls, msg, mask, value):
        if strict:
            raise cls(msg, where())
        return np.where(mask, np.nan, value)

    if isinstance(node, Num):
        v = node.value
        return lambda env: v
    if isinstance(node, Var):
        k = node.index - 1
        if node.kind == "x":
            return lambda env: env.x[k]
        return lambda env: env.xi[k]
    if isinstance(node, Neg):
        f = _compile_value(node.arg, strict, abs_eps)
        return lambda env: -f(env)
    if isinstance(node, Call):
        f = _compile_value(node.arg, strict, abs_eps)
        name = node.func
        if name == "exp":
            return lambda env: np.exp(f(env))
        if name == "sin":
            return lambda env: np.sin(f(env))
        if name == "cos":
            return lambda env: np.cos(f(env))
        if name == "abs":
            if abs_eps:
                eps2 = abs_eps * abs_eps
                return lambda env: np.sqrt(f(env) ** 2 + eps2)
            return lambda env: np.abs(f(env))
        if name == "log":
            def log(env):
                a = f(env)
                bad = a <= 0
                if _bad(bad):
                    return domain(DomainError, "log of a non-positive value", bad,
                                  np.log(np.where(bad, 1.0, a)))
                return np.log(a)
            return log
        if name == "sqrt":
            def sqrt(env):
                a = f(env)
                bad = a < 0
                if _bad(bad):
                    return domain(DomainError, "sqrt of a negative value", bad,
                                  np.sqrt(np.where(bad, 0.0, a)))
                return np.sqrt(a)
            return sqrt
        raise AssertionError(name)
    fl = _compile_value(node.left, strict, abs_eps)
    fr = _compile_value(node.right, strict, abs_eps)
    op = node.op
    if op == "+":
        return lambda env: fl(env) + fr(env)
    if op == "-":
        return lambda env: fl(env) - fr(env)
    if op == "*":
        return lambda env: fl(env) * fr(env)
    if op == "/":
        def div(env):
            a, b = fl(env), fr(env)
            bad = b == 0
            if _bad(bad):
                return domain(DivideByZero, "division by zero", bad, a / np.where(bad, 1.0, b))
            return a / b
        return div

    def power(env):
        a, b = fl(env), fr(env)
        k = _int_exponent(b)
        if k is not None:
            if k >= 0:
                return _ipow(a, k)
            bad = a == 0
            if _bad(bad):
                return domain(DivideByZero, "zero raised to a negative power", bad,
                              1.0 / _ipow(np.where(bad, 1.0, a), -k))
            return 1.0 / _ipow(a, -k)
        bad = (a < 0) | ((a == 0) & (b <= 0))
        if _bad(bad):
            return domain(DomainError, "negative base with non-integer exponent", bad,
                          np.power(np.where(bad, 1.0, a), b))
        return np.power(a, b)
    return power


def _compile_dual(node: Node, n: int, abs_eps) -> Callable[[_Env], tuple]:
    """Closure returning (value, gradient) with gradient shape (n,) + value shape.

    Gradients are stored as lists of length n whose entries may be None
    for structurally zero partials.
    """
    src = None

    def where():
        nonlocal src
        if src is None:
            src = to_source(node)
        return src

    zero = [None] * n

    def scale(g, s):
        return [None if gi is None else gi * s for gi in g]

    def add(g, h):
        return [hi if gi is None else (gi if hi is None else gi + hi) for gi, hi in zip(g, h)]

    def sub(g, h):
        return [(-hi if hi is not None else None) if gi is None else (gi if hi is None else gi - hi)
                for gi, hi in zip(g, h)]

    if isinstance(node, Num):
        v = node.value
        return lambda env: (v, zero)
    if isinstance(node, Var):
        k = node.index - 1
        if node.kind == "xi":
            return lambda env: (env.xi[k], zero)
        unit = [None] * n
        unit[k] = 1.0
        return lambda env: (env.x[k], unit)
    if isinstance(node, Neg):
        f = _compile_dual(node.arg, n, abs_eps)

        def neg(env):
            a, g = f(env)
            return -a, scale(g, -1.0)
        return neg
    if isinstance(node, Call):
        f = _compile_dual(node.arg, n, abs_eps)
        name = node.func

        def call(env):
            a, g = f(env)
            if name == "exp":
                v = np.exp(a)
                return v, scale(g, v)
            if name == "sin":
                return np.sin(a), scale(g, np.cos(a))
            if name == "cos":
                return np.cos(a), scale(g, -np.sin(a))
            if name == "abs":
                if abs_eps:
                    v = np.sqrt(a * a + abs_eps * abs_eps)
                    return v, scale(g, a / v)
                if _bad(np.asarray(a) == 0) and any(gi is not None for gi in g):
                    raise NonDifferentiable("abs is not differentiable at 0", where())
                return np.abs(a), scale(g, np.sign(a))
            if name == "log":
                if _bad(np.asarray(a) <= 0):
                    raise DomainError("log of a non-positive value", where())
                return np.log(a), scale(g, 1.0 / a)
            if name == "sqrt":
                if _bad(np.asarray(a) < 0):
                    raise DomainError("sqrt of a negative value", where())
                v = np.sqrt(a)
                if any(gi is not None for gi in g):
                    if _bad(v == 0):
                        raise NonDifferentiable("sqrt is not differentiable at 0", where())
                    return v, scale(g, 0.5 / v)
                return v, g
            raise AssertionError(name)
        return call
    fl = _compile_dual(node.left, n, abs_eps)
    fr = _compile_dual(node.right, n, abs_eps)
    op = node.op
    if op == "+":
        def plus(env):
            a, g = fl(env)
            b, h = fr(env)
            return a + b, add(g, h)
        return plus
    if op == "-":
        def minus(env):
            a, g = fl(env)
            b, h = fr(env)
            return a - b, sub(g, h)
        return minus
    if op == "*":
        def times(env):
            a, g = fl(env)
            b, h = fr(env)
            return a * b, add(scale(g, b), scale(h, a))
        return times
    if op == "/":
        def divide(env):
            a, g = fl(env)
            b, h = fr(env)
            if _bad(np.asarray(b) == 0):
                raise DivideByZero("division by zero", where())
            v = a / b
            return v, scale(sub(g, scale(h, v)), 1.0 / b)
        return divide

    def power(env):
        a, g = fl(env)
        b, h = fr(env)
        k = _int_exponent(b)
        exp_varies = any(hi is not None for hi in h)
        if k is not None and not exp_varies:
            if k == 0:
                return _ipow(a, 0), zero
            if k > 0:
                return _ipow(a, k), scale(g, k * _ipow(a, k - 1))
            if _bad(np.asarray(a) == 0):
                raise DivideByZero("zero raised to a negative power", where())
            v = 1.0 / _ipow(a, -k)
            return v, scale(g, k * v / a)
        if _bad(np.asarray(a) < 0) and k is None:
            raise DomainError("negative base with non-integer exponent", where())
        if exp_varies and _bad(np.asarray(a) <= 0):
            raise DomainError("variable exponent needs a positive base", where())
        v = _ipow(a, k) if k is not None and k >= 0 else np.power(a, b)
        out = zero
        if any(gi is not None for gi in g):
            if _bad(np.asarray(a) == 0) and np.any(np.asarray(b) < 1):
                raise NonDifferentiable("power not differentiable at zero base", where())
            with np.errstate(divide="ignore", invalid="ignore"):
                out = scale(g, b * np.power(a, b - 1.0))
        if exp_varies:
            out = add(out, scale(h, v * np.log(a)))
        return v, out
    return power


@dataclass(frozen=True, eq=False)
class Expression:
    """A parsed expression together with the dimensions it was checked against."""

    root: Node
    n: int
    u: int
    source: str = ""
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __eq__(self, other):
        if not isinstance(other, Expression):
            return NotImplemented
        return self.root == other.root and self.n == other.n and self.u == other.u

    def __hash__(self):
        return hash((self.root, self.n, self.u))

    def __str__(self):
        return to_source(self.root)

    def uses_xi(self) -> bool:
        return any(v.kind == "xi" for v in variables(self.root))

    def has_abs(self) -> bool:
        return contains_call(self.root, "abs")

    def value_fn(self, strict: bool = True, abs_eps=None):
        key = ("v", strict, abs_eps)
        if key not in self._cache:
            self._cache[key] = _compile_value(self.root, strict, abs_eps)
        return self._cache[key]

    def dual_fn(self, abs_eps=None):
        key = ("d", abs_eps)
        if key not in self._cache:
            self._cache[key] = _compile_dual(self.root, self.n, abs_eps)
        return self._cache[key]

    def evaluate(self, x, xi=(), abs_eps=None):
        x, xi = self._check(x, xi)
        return self.value_fn(True, abs_eps)(_Env(x, xi))

    def gradient(self, x, xi=(), abs_eps=None) -> np.ndarray:
        x, xi = self._check(x, xi)
        _, g = self.dual_fn(abs_eps)(_Env(x, xi))
        shape = np.shape(np.broadcast_arrays(*x, *xi)[0]) if (x or xi) else ()
        return np.array([np.broadcast_to(gi, shape) if gi is not None else np.zeros(shape)
                         for gi in g], dtype=float)

    def _check(self, x, xi):
        x = tuple(x) if np.ndim(x) else (x,)
        xi = tuple(xi) if np.ndim(xi) else (xi,)
        if len(x) != self.n or len(xi) != self.u:
            raise DimensionError(
                f"expression expects n={self.n}, u={self.u}; got {len(x)} and {len(xi)} values"
            )
        return tuple(_num(v) for v in x), tuple(_num(v) for v in xi)


def _num(v):
    return v if isinstance(v, np.ndarray) else float(v)


def parse(source: str, n: int, u: int = 0) -> Expression:
    if not source or not source.strip():
        raise DslSyntaxError("empty expression", 1, 1, _ATOM_START)
    root = _Parser(source, n, u).parse()
    return Expression(root, n, u, source)


def evaluate(e: Expression, x, xi=()) -> float:
    return float(e.evaluate(x, xi))


def gradient(e: Expression, x, xi=()) -> np.ndarray:
    """Partial derivatives with respect to the decision variables only."""
    return e.gradient(x, xi)


# problem specification

@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """``min f(x)  s.t.  g_k(x, xi) <= 0`` over a box, with a fixed start."""

    n: int
    u: int
    objective: Expression
    constraints: tuple[Expression, ...]
    bounds: np.ndarray
    start: np.ndarray
    delta: tuple[float, ...] = ()

    def __post_init__(self):
        bounds = np.asarray(self.bounds, dtype=float).reshape(self.n, 2)
        start = np.asarray(self.start, dtype=float).reshape(self.n)
        if self.objective.uses_xi():
            raise ConfigError("the objective may not depend on xi")
        if not self.constraints:
            raise ConfigError("at least one constraint is required")
        for e in (self.objective, *self.constraints):
            if (e.n, e.u) != (self.n, self.u):
                raise DimensionError("expression dimensions do not match the problem")
        if np.any(bounds[:, 0] > bounds[:, 1]):
            raise ConfigError("lower bound exceeds upper bound")
        if np.any(start < bounds[:, 0]) or np.any(start > bounds[:, 1]):
            raise ConfigError("start point lies outside the bounds")
        bounds.setflags(write=False)
        start.setflags(write=False)
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "delta", tuple(float(v) for v in self.delta))

    @property
    def m(self) -> int:
        return len(self.constraints)

    @classmethod
    def from_dict(cls, obj: dict) -> "ProblemSpec":
        try:
            n, u = int(obj["n"]), int(obj["u"])
            return cls(
                n,
                u,
                parse(obj["objective"], n, u),
                tuple(parse(c, n, u) for c in obj["constraints"]),
                obj["bounds"],
                obj["start"],
                tuple(obj.get("delta", ())),
            )
        except KeyError as exc:
            raise ConfigError(f"problem file is missing field {exc}") from None

    @classmethod
    def load(cls, path) -> "ProblemSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        out = {
            "n": self.n,
            "u": self.u,
            "objective": str(self.objective),
            "constraints": [str(c) for c in self.constraints],
            "bounds": self.bounds.tolist(),
            "start": self.start.tolist(),
        }
        if self.delta:
            out["delta"] = list(self.delta)
        return out

    def digest(self) -> str:
        """Identity of the problem class: structure only, not delta or start."""
        key = json.dumps(
            {"n": self.n, "u": self.u, "objective": str(self.objective),
             "constraints": [str(c) for c in self.constraints]},
            sort_keys=True,
        )
        return hashlib.sha256(key.encode()).hexdigest()
