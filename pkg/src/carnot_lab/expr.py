"""Scalar expression trees over variables x1..xN.

Expressions are immutable and hashable.  Text parses to a tree and prints
back to equivalent text.  Evaluation is either exact at one point with domain
checks or vectorized through compiled numpy callables; derivatives are
symbolic.  Only constant
folding and the trivial identities (x+0, x*1, x*0, x^1, x^0) are applied when
nodes are built; there is no further simplification.
"""

from __future__ import annotations

import enum
import functools
import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import DomainError, ExprSyntaxError, NonsmoothInput, UnknownVariable

UNARY_FUNCS = ("sin", "cos", "exp", "ln", "abs", "sqrt")
BINARY_OPS = ("+", "-", "*", "/", "^")

_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


class Expr:
    """Base node.  Supports arithmetic operators for building trees in code."""

    __slots__ = ()

    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return mul(_coerce(other), self)

    def __truediv__(self, other):
        return div(self, _coerce(other))

    def __rtruediv__(self, other):
        return div(_coerce(other), self)

    def __pow__(self, other):
        return power(self, _coerce(other))

    def __rpow__(self, other):
        return power(_coerce(other), self)

    def __neg__(self):
        return neg(self)

    def __str__(self):
        return to_string(self)


@dataclass(frozen=True, eq=True, repr=True)
class Const(Expr):
    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True, eq=True, repr=True)
class Var(Expr):
    index: int  # 1-based


@dataclass(frozen=True, eq=True, repr=True)
class Unary(Expr):
    op: str  # "neg" or one of UNARY_FUNCS
    arg: Expr


@dataclass(frozen=True, eq=True, repr=True)
class Binary(Expr):
    op: str  # one of BINARY_OPS
    left: Expr
    right: Expr


# Expr subclasses are dataclasses, so restore the str() defined on Expr.
for _cls in (Const, Var, Unary, Binary):
    _cls.__str__ = Expr.__str__

ZERO = Const(0.0)
ONE = Const(1.0)


def _coerce(value) -> Expr:
    if isinstance(value, Expr):
        return value
    return Const(float(value))


def const(value: float) -> Const:
    return Const(float(value))


def var(index: int) -> Var:
    if index < 1:
        raise UnknownVariable(f"variable index must be >= 1, got {index}")
    return Var(index)


def _is_const(e: Expr, value: float | None = None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


def _is_int(value: float) -> bool:
    return float(value).is_integer() and abs(value) < 2**31


# -- smart constructors (constant folding only) ----------------------------

def add(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return Binary("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value - b.value)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    return Binary("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value * b.value)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    return Binary("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b) and b.value != 0.0:
        return Const(a.value / b.value)
    if _is_const(b, 1.0):
        return a
    if _is_const(a, 0.0) and not _is_const(b, 0.0):
        return ZERO
    return Binary("/", a, b)


def power(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 1.0):
        return a
    if _is_const(b, 0.0):
        return ONE
    if _is_const(a) and _is_const(b):
        try:
            return Const(_real_pow(a.value, b.value))
        except (ValueError, ZeroDivisionError, OverflowError):
            pass
    return Binary("^", a, b)


def neg(a: Expr) -> Expr:
    if _is_const(a):
        return Const(-a.value)
    if isinstance(a, Unary) and a.op == "neg":
        return a.arg
    return Unary("neg", a)


def func(name: str, a: Expr) -> Expr:
    if name not in UNARY_FUNCS:
        raise ValueError(f"unknown function {name!r}")
    if _is_const(a):
        try:
            return Const(_apply_unary(name, a.value))
        except (ValueError, ZeroDivisionError, OverflowError):
            pass
    return Unary(name, a)


def sin(a) -> Expr:
    return func("sin", _coerce(a))


def cos(a) -> Expr:
    return func("cos", _coerce(a))


def exp(a) -> Expr:
    return func("exp", _coerce(a))


def ln(a) -> Expr:
    return func("ln", _coerce(a))


def sqrt(a) -> Expr:
    return func("sqrt", _coerce(a))


def absolute(a) -> Expr:
    return func("abs", _coerce(a))


def _real_pow(a: float, b: float) -> float:
    if _is_int(b):
        n = int(b)
        if a == 0.0 and n < 0:
            raise ZeroDivisionError("0 to a negative power")
        return a**n
    if a > 0.0:
        return math.exp(b * math.log(a))
    if a == 0.0 and b > 0.0:
        return 0.0
    raise ValueError("non-integer power of a non-positive base")


def _apply_unary(op: str, v: float) -> float:
    if op == "neg":
        return -v
    if op == "sin":
        return math.sin(v)
    if op == "cos":
        return math.cos(v)
    if op == "exp":
        return math.exp(v)
    if op == "ln":
        if v <= 0.0:
            raise ValueError("ln of a non-positive number")
        return math.log(v)
    if op == "abs":
        return abs(v)
    if op == "sqrt":
        if v < 0.0:
            raise ValueError("sqrt of a negative number")
        return math.sqrt(v)
    raise ValueError(op)


# -- parsing ------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


class _Parser:
    def __init__(self, text: str, dim: int):
        self.text = text
        self.dim = dim
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            if text[pos:].strip() == "":
                break
            m = _TOKEN_RE.match(text, pos)
            if m is None or m.end() == pos:
                raise ExprSyntaxError("unexpected character", text, pos, "a token")
            kind = m.lastgroup
            start = m.start(kind)
            self.tokens.append((kind, m.group(kind), start))
            pos = m.end()
        self.tokens.append(("end", "", len(text)))
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, pos = self.take()
        if text != value or kind == "end":
            raise ExprSyntaxError(f"unexpected {text or 'end of input'!r}", self.text, pos, repr(value))

    def parse(self) -> Expr:
        e = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {text!r}", self.text, pos, "operator or end of input")
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            e = Binary(op, e, rhs)
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.unary()
            e = Binary(op, e, rhs)
        return e

    def unary(self) -> Expr:
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            return neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.primary()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return Binary("^", base, self.unary())
        return base

    def primary(self) -> Expr:
        kind, text, pos = self.take()
        if kind == "num":
            return Const(float(text))
        if kind == "name":
            if text in UNARY_FUNCS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Unary(text, arg)
            m = re.fullmatch(r"x([1-9]\d*)", text)
            if m is None:
                raise ExprSyntaxError(f"unknown name {text!r}", self.text, pos, "variable x1..xN or function")
            index = int(m.group(1))
            if index > self.dim:
                raise UnknownVariable(f"{text} exceeds dimension {self.dim} at position {pos}")
            return Var(index)
        if kind == "op" and text == "(":
            e = self.expr()
            self.expect(")")
            return e
        raise ExprSyntaxError(f"unexpected {text or 'end of input'!r}", self.text, pos, "number, variable, function or '('")


def parse(text: str, dim: int) -> Expr:
    """Parse ``text`` into an expression over x1..x``dim``."""
    return _Parser(text, dim).parse()


# -- printing ----------------------------------------------------------------

def _prec(e: Expr) -> int:
    if isinstance(e, Const):
        return _PREC_NEG if e.value < 0 or str(e.value).startswith("-") else _PREC_ATOM
    if isinstance(e, Var):
        return _PREC_ATOM
    if isinstance(e, Unary):
        return _PREC_NEG if e.op == "neg" else _PREC_ATOM
    return {"+": _PREC_ADD, "-": _PREC_ADD, "*": _PREC_MUL, "/": _PREC_MUL, "^": _PREC_POW}[e.op]


def _wrap(e: Expr, parens: bool) -> str:
    s = to_string(e)
    return f"({s})" if parens else s


def to_string(e: Expr) -> str:
    """Print ``e`` in the parser's grammar; ``parse(to_string(e))`` rebuilds ``e``."""
    if isinstance(e, Const):
        v = e.value
        return str(int(v)) if math.isfinite(v) and v == int(v) and abs(v) < 1e15 else repr(v)
    if isinstance(e, Var):
        return f"x{e.index}"
    if isinstance(e, Unary):
        if e.op == "neg":
            return "-" + _wrap(e.arg, _prec(e.arg) < _PREC_NEG)
        return f"{e.op}({to_string(e.arg)})"
    p = _prec(e)
    if e.op == "^":
        left = _wrap(e.left, _prec(e.left) <= p)
        right = _wrap(e.right, _prec(e.right) < p)
        return f"{left}^{right}"
    left = _wrap(e.left, _prec(e.left) < p)
    right = _wrap(e.right, _prec(e.right) <= p)
    return f"{left} {e.op} {right}"


# -- exact evaluation ---------------------------------------------------------

def evaluate(e: Expr, point: Sequence[float]) -> float:
    """Evaluate at ``point`` with domain checks; raises DomainError."""
    point = tuple(float(v) for v in point)
    return _eval(e, point)


def _eval(e: Expr, p: tuple) -> float:
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        if e.index > len(p):
            raise UnknownVariable(f"x{e.index} not defined for a point of dimension {len(p)}")
        return p[e.index - 1]
    if isinstance(e, Unary):
        v = _eval(e.arg, p)
        try:
            out = _apply_unary(e.op, v)
        except (ValueError, OverflowError) as exc:
            raise DomainError(e, p, str(exc)) from None
    else:
        a = _eval(e.left, p)
        b = _eval(e.right, p)
        try:
            if e.op == "+":
                out = a + b
            elif e.op == "-":
                out = a - b
            elif e.op == "*":
                out = a * b
            elif e.op == "/":
                if b == 0.0:
                    raise ZeroDivisionError("division by zero")
                out = a / b
            else:
                out = _real_pow(a, b)
        except (ValueError, ZeroDivisionError, OverflowError) as exc:
            raise DomainError(e, p, str(exc)) from None
    if not math.isfinite(out):
        raise DomainError(e, p, "non-finite value")
    return out


# -- numpy compilation --------------------------------------------------------

def _codegen(e: Expr) -> str:
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Var):
        return f"x{e.index}"
    if isinstance(e, Unary):
        a = _codegen(e.arg)
        if e.op == "neg":
            return f"(-{a})"
        name = {"sin": "np.sin", "cos": "np.cos", "exp": "np.exp", "ln": "np.log",
                "abs": "np.abs", "sqrt": "np.sqrt"}[e.op]
        return f"{name}({a})"
    a, b = _codegen(e.left), _codegen(e.right)
    if e.op == "^":
        if _is_const(e.right) and _is_int(e.right.value):
            return f"({a} ** {int(e.right.value)})"
        return f"np.power({a}, {b})"
    return f"({a} {e.op} {b})"


@functools.lru_cache(maxsize=512)
def _compile(exprs: tuple, dim: int) -> Callable:
    lines = ["def _f(x):"]
    for i in range(1, dim + 1):
        lines.append(f"    x{i} = x[..., {i - 1}]")
    lines.append("    return (" + ", ".join(_codegen(e) for e in exprs) + ("," if len(exprs) == 1 else "") + ")")
    namespace = {"np": np}
    exec(compile("\n".join(lines), "<carnot_lab.expr>", "exec"), namespace)
    raw = namespace["_f"]

    def evaluator(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(all="ignore"):
            vals = raw(x)
        shape = x.shape[:-1]
        return np.stack([np.broadcast_to(np.asarray(v, dtype=float), shape) for v in vals], axis=-1)

    return evaluator


def compile_exprs(exprs: Sequence[Expr], dim: int) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorized evaluator: array (..., dim) -> array (..., len(exprs)).

    Out-of-domain points produce nan/inf rather than raising.
    """
    return _compile(tuple(exprs), dim)


# -- symbolic differentiation -------------------------------------------------

def derive(e: Expr, index: int) -> Expr:
    """Partial derivative with respect to x_index."""
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.index == index else ZERO
    if isinstance(e, Unary):
        a = e.arg
        da = derive(a, index)
        if _is_const(da, 0.0):
            return ZERO
        if e.op == "neg":
            return neg(da)
        if e.op == "sin":
            return mul(func("cos", a), da)
        if e.op == "cos":
            return neg(mul(func("sin", a), da))
        if e.op == "exp":
            return mul(e, da)
        if e.op == "ln":
            return div(da, a)
        if e.op == "abs":
            # sign(a) written as a/abs(a): undefined where a = 0
            return mul(div(a, e), da)
        if e.op == "sqrt":
            return div(da, mul(Const(2.0), e))
        raise ValueError(e.op)
    a, b = e.left, e.right
    da, db = derive(a, index), derive(b, index)
    if e.op == "+":
        return add(da, db)
    if e.op == "-":
        return sub(da, db)
    if e.op == "*":
        return add(mul(da, b), mul(a, db))
    if e.op == "/":
        if _is_const(db, 0.0):
            return div(da, b)
        return div(sub(mul(da, b), mul(a, db)), power(b, Const(2.0)))
    # power
    if _is_const(db, 0.0):
        if _is_const(da, 0.0):
            return ZERO
        if isinstance(b, Const):
            return mul(mul(b, power(a, Const(b.value - 1.0))), da)
        return mul(mul(b, power(a, sub(b, ONE))), da)
    # a^b = exp(b ln a)
    return mul(e, add(mul(db, func("ln", a)), div(mul(b, da), a)))


# -- structure queries --------------------------------------------------------

def variables(e: Expr) -> frozenset:
    if isinstance(e, Const):
        return frozenset()
    if isinstance(e, Var):
        return frozenset([e.index])
    if isinstance(e, Unary):
        return variables(e.arg)
    return variables(e.left) | variables(e.right)


def is_polynomial(e: Expr) -> bool:
    if isinstance(e, (Const, Var)):
        return True
    if isinstance(e, Unary):
        return e.op == "neg" and is_polynomial(e.arg)
    if e.op in "+-*":
        return is_polynomial(e.left) and is_polynomial(e.right)
    if e.op == "/":
        return is_polynomial(e.left) and isinstance(e.right, Const) and e.right.value != 0.0
    return (is_polynomial(e.left) and isinstance(e.right, Const)
            and _is_int(e.right.value) and e.right.value >= 0)


class SmoothnessFlag(enum.Enum):
    SYMBOLICALLY_SMOOTH_AT_ZERO = "SymbolicallySmoothAtZero"
    NONSMOOTH_AT_ZERO = "NonsmoothAtZero"


def smoothness(e: Expr) -> SmoothnessFlag:
    """Conservative regularity flag at the origin.

    A node is nonsmooth when one of the functions abs, sqrt, ln acts on a
    variable-dependent argument.  Negative or fractional powers of a
    variable-dependent base count as nonsmooth too, as do denominators that
    vanish or are undefined at the origin.
    """
    return (SmoothnessFlag.NONSMOOTH_AT_ZERO if _nonsmooth(e)
            else SmoothnessFlag.SYMBOLICALLY_SMOOTH_AT_ZERO)


@functools.lru_cache(maxsize=4096)
def _nonsmooth(e: Expr) -> bool:
    if isinstance(e, (Const, Var)):
        return False
    if isinstance(e, Unary):
        if e.op in ("abs", "sqrt", "ln") and variables(e.arg):
            return True
        return _nonsmooth(e.arg)
    if _nonsmooth(e.left) or _nonsmooth(e.right):
        return True
    if e.op == "/" and variables(e.right):
        dim = max(variables(e.right))
        try:
            return _eval(e.right, (0.0,) * dim) == 0.0
        except DomainError:
            return True
    if e.op == "^":
        if variables(e.left):
            if not isinstance(e.right, Const):
                return True
            return not (_is_int(e.right.value) and e.right.value >= 0)
        if variables(e.right):
            try:
                return _eval(e.left, ()) <= 0.0
            except DomainError:
                return True
    return False


def is_smooth_at_zero(e: Expr) -> bool:
    return smoothness(e) is SmoothnessFlag.SYMBOLICALLY_SMOOTH_AT_ZERO


def partial(e: Expr, alpha: Sequence[int]) -> Expr:
    """Symbolic mixed partial D^alpha e."""
    out = e
    for i, k in enumerate(alpha, start=1):
        for _ in range(int(k)):
            out = derive(out, i)
            if _is_const(out, 0.0):
                return ZERO
    return out


def partial_at_zero(e: Expr, alpha: Sequence[int]) -> float:
    """D^alpha e at the origin of R^len(alpha); refuses nonsmooth input."""
    if not is_smooth_at_zero(e):
        raise NonsmoothInput(f"'{e}' is not symbolically smooth at the origin")
    return evaluate(partial(e, alpha), (0.0,) * len(alpha))


def substitute(e: Expr, mapping: Mapping[int, Expr]) -> Expr:
    """Replace variables x_i by ``mapping[i]`` (others untouched)."""
    if isinstance(e, Const):
        return e
    if isinstance(e, Var):
        return mapping.get(e.index, e)
    if isinstance(e, Unary):
        a = substitute(e.arg, mapping)
        return neg(a) if e.op == "neg" else func(e.op, a)
    a, b = substitute(e.left, mapping), substitute(e.right, mapping)
    return {"+": add, "-": sub, "*": mul, "/": div, "^": power}[e.op](a, b)


def monomial(coeff: float, alpha: Sequence[int]) -> Expr:
    out: Expr = Const(coeff)
    for i, k in enumerate(alpha, start=1):
        if k:
            out = mul(out, power(Var(i), Const(float(k))))
    return out


def polynomial(terms: Iterable[tuple[float, Sequence[int]]]) -> Expr:
    """Sum of ``coeff * x^alpha`` terms; zero coefficients are skipped."""
    out: Expr = ZERO
    for coeff, alpha in terms:
        if coeff != 0.0:
            out = add(out, monomial(coeff, alpha))
    return out
