"""Arithmetic expressions for user-supplied coefficient functions.

Coefficients such as a(x), b(x) and jump densities nu(x, z) arrive as strings
in run configs.  This module parses them with a small recursive-descent
parser, evaluates them on numpy arrays and differentiates them symbolically.

Grammar (loosest binding first)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right associative
    atom   := NUMBER | VAR | NAME '(' expr (',' expr)* ')' | '(' expr ')'

Besides the usual functions, ``sign`` and ``step`` are available.  ``step`` is
the right-continuous Heaviside function (``step(0) == 1``), which makes
indicator kernels such as ``step(1 - abs(z - x))`` expressible.  Both are
also what derivatives of ``abs``/``max``/``min`` are written in terms of.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

from .errors import DomainError, ParseError, UnboundVariable

VARIABLES = ("x", "y", "z", "t")

# name -> arity
FUNCTIONS = {
    "sin": 1,
    "cos": 1,
    "exp": 1,
    "log": 1,
    "sqrt": 1,
    "abs": 1,
    "sign": 1,
    "step": 1,
    "max": 2,
    "min": 2,
    "pow": 2,
}

MAX_DEPTH = 200


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


Expr = Union[Num, Var, Neg, BinOp, Call]


# ---------------------------------------------------------------------------
# tokenizer / parser


def _tokenize(text):
    tokens = []
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
            start = i
            while i < n and (text[i].isdigit() or text[i] == "."):
                i += 1
            if i < n and text[i] in "eE":
                j = i + 1
                if j < n and text[j] in "+-":
                    j += 1
                if j < n and text[j].isdigit():
                    i = j
                    while i < n and text[i].isdigit():
                        i += 1
            lexeme = text[start:i]
            try:
                value = float(lexeme)
            except ValueError:
                raise ParseError(start, f"malformed number {lexeme!r}") from None
            if not math.isfinite(value):
                raise ParseError(start, f"numeric literal {lexeme!r} overflows")
            tokens.append(("num", value, start))
            continue
        if c.isalpha() or c == "_":
            start = i
            while i < n and (text[i].isalnum() or text[i] == "_"):
                i += 1
            tokens.append(("name", text[start:i], start))
            continue
        if c in "+-*/^(),":
            tokens.append((c, c, i))
            i += 1
            continue
        raise ParseError(i, f"unexpected character {c!r}")
    tokens.append(("eof", None, n))
    return tokens


class _Parser:
    def __init__(self, text):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.depth = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        if tok[0] != "eof":
            self.pos += 1
        return tok

    def expect(self, kind, what):
        tok = self.peek()
        if tok[0] != kind:
            found = "end of input" if tok[0] == "eof" else repr(tok[1])
            raise ParseError(tok[2], f"expected {what}, found {found}")
        return self.advance()

    def _enter(self):
        self.depth += 1
        if self.depth > MAX_DEPTH:
            raise ParseError(self.peek()[2], "expression nested too deeply")

    def parse(self):
        e = self.expr()
        tok = self.peek()
        if tok[0] != "eof":
            if tok[0] == ")":
                raise ParseError(tok[2], "unbalanced ')'")
            raise ParseError(tok[2], f"unexpected {tok[1]!r}")
        return e

    def expr(self):
        left = self.term()
        while self.peek()[0] in ("+", "-"):
            op = self.advance()[0]
            left = BinOp(op, left, self.term())
        return left

    def term(self):
        left = self.unary()
        while self.peek()[0] in ("*", "/"):
            op = self.advance()[0]
            left = BinOp(op, left, self.unary())
        return left

    def unary(self):
        self._enter()
        try:
            if self.peek()[0] == "-":
                self.advance()
                return Neg(self.unary())
            return self.power()
        finally:
            self.depth -= 1

    def power(self):
        base = self.atom()
        if self.peek()[0] == "^":
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        tok = self.peek()
        kind = tok[0]
        if kind == "num":
            self.advance()
            return Num(tok[1])
        if kind == "name":
            self.advance()
            name = tok[1]
            if self.peek()[0] == "(":
                if name not in FUNCTIONS:
                    raise ParseError(tok[2], f"unknown function {name!r}")
                return self.call(name, tok[2])
            if name in VARIABLES:
                return Var(name)
            if name in FUNCTIONS:
                raise ParseError(tok[2], f"function {name!r} needs arguments")
            raise ParseError(tok[2], f"unknown identifier {name!r}")
        if kind == "(":
            self.advance()
            self._enter()
            try:
                e = self.expr()
            finally:
                self.depth -= 1
            self.expect(")", "')'")
            return e
        if kind == "eof":
            raise ParseError(tok[2], "unexpected end of input")
        raise ParseError(tok[2], f"unexpected {tok[1]!r}")

    def call(self, name, start):
        self.expect("(", "'('")
        self._enter()
        try:
            args = [self.expr()]
            while self.peek()[0] == ",":
                self.advance()
                args.append(self.expr())
        finally:
            self.depth -= 1
        self.expect(")", "')'")
        arity = FUNCTIONS[name]
        if len(args) != arity:
            raise ParseError(start, f"{name} takes {arity} argument(s), got {len(args)}")
        return Call(name, tuple(args))


def parse(text: str) -> Expr:
    """Parse `text` into an expression tree.

    Raises
    ------
    ParseError
        With the 0-based character position of the offending token.
    """
    if not isinstance(text, str):
        raise ParseError(0, "expression must be a string")
    return _Parser(text).parse()


def as_expr(value) -> Expr:
    """Coerce a string, number or expression to an expression."""
    if isinstance(value, (Num, Var, Neg, BinOp, Call)):
        return value
    if isinstance(value, (int, float)):
        return Num(float(value))
    return parse(value)


def serialize(e: Expr) -> str:
    """Fully parenthesised text form that parses back to an equivalent tree."""
    if isinstance(e, Num):
        if e.value < 0 or (e.value == 0 and math.copysign(1.0, e.value) < 0):
            return f"(-{-e.value!r})"
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{serialize(e.arg)})"
    if isinstance(e, BinOp):
        return f"({serialize(e.left)} {e.op} {serialize(e.right)})"
    return f"{e.name}(" + ", ".join(serialize(a) for a in e.args) + ")"


def free_vars(e: Expr) -> set:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Num):
        return set()
    if isinstance(e, Neg):
        return free_vars(e.arg)
    if isinstance(e, BinOp):
        return free_vars(e.left) | free_vars(e.right)
    out = set()
    for a in e.args:
        out |= free_vars(a)
    return out


# ---------------------------------------------------------------------------
# evaluation


def _finite(value, what):
    if not np.all(np.isfinite(value)):
        raise DomainError(f"{what} produced a non-finite value")
    return value


def _eval(e, env):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise UnboundVariable(f"variable {e.name!r} is not bound") from None
    if isinstance(e, Neg):
        return -_eval(e.arg, env)
    if isinstance(e, BinOp):
        left = _eval(e.left, env)
        right = _eval(e.right, env)
        if e.op == "+":
            return _finite(np.add(left, right), "addition")
        if e.op == "-":
            return _finite(np.subtract(left, right), "subtraction")
        if e.op == "*":
            return _finite(np.multiply(left, right), "multiplication")
        if e.op == "/":
            if np.any(np.asarray(right) == 0):
                raise DomainError("division by zero")
            return _finite(np.divide(left, right), "division")
        return _power(left, right)
    args = [_eval(a, env) for a in e.args]
    return _call(e.name, args)


def _power(base, expo):
    b = np.asarray(base, dtype=float)
    p = np.asarray(expo, dtype=float)
    if np.any((b < 0) & (p != np.round(p))):
        raise DomainError("negative base raised to a non-integer power")
    if np.any((b == 0) & (p < 0)):
        raise DomainError("zero raised to a negative power")
    return _finite(np.power(b, p), "power")


def _call(name, args):
    u = args[0]
    if name == "sin":
        return np.sin(u)
    if name == "cos":
        return np.cos(u)
    if name == "exp":
        return _finite(np.exp(u), "exp")
    if name == "log":
        if np.any(np.asarray(u) <= 0):
            raise DomainError("log of a non-positive number")
        return np.log(u)
    if name == "sqrt":
        if np.any(np.asarray(u) < 0):
            raise DomainError("sqrt of a negative number")
        return np.sqrt(u)
    if name == "abs":
        return np.abs(u)
    if name == "sign":
        return np.sign(u) * 1.0
    if name == "step":
        return np.where(np.asarray(u) >= 0, 1.0, 0.0)
    if name == "max":
        return np.maximum(u, args[1])
    if name == "min":
        return np.minimum(u, args[1])
    return _power(u, args[1])


def evaluate(e, bindings: Mapping | None = None, **kwargs):
    """Evaluate `e` with variables bound to scalars or numpy arrays.

    Arrays broadcast against each other, so ``evaluate(nu, x=X[:, None],
    z=X[None, :])`` fills a whole kernel matrix.  Scalar inputs give a float.

    Raises
    ------
    UnboundVariable
        If a variable of `e` has no binding.
    DomainError
        Instead of silently producing NaN or infinity.
    """
    e = as_expr(e)
    env = dict(bindings or {})
    env.update(kwargs)
    for name, value in env.items():
        if name not in VARIABLES:
            raise UnboundVariable(f"{name!r} is not an expression variable")
        if not np.isscalar(value):
            env[name] = np.asarray(value, dtype=float)
    with np.errstate(all="ignore"):
        out = _eval(e, env)
    if np.ndim(out) == 0:
        return float(out)
    return np.asarray(out, dtype=float)


def evaluate_on(e, shape_like=None, **bindings):
    """Like `evaluate` but always returns an array broadcast to the inputs' shape."""
    out = evaluate(e, **bindings)
    arrays = [np.asarray(v) for v in bindings.values()]
    shape = np.broadcast_shapes(*(a.shape for a in arrays)) if arrays else ()
    if shape_like is not None:
        shape = np.broadcast_shapes(shape, np.shape(shape_like))
    return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()


# ---------------------------------------------------------------------------
# symbolic differentiation

ZERO = Num(0.0)
ONE = Num(1.0)


def _is(e, v):
    return isinstance(e, Num) and e.value == v


def _fold(e):
    try:
        return Num(evaluate(e) + 0.0)  # + 0.0 turns -0.0 into 0.0
    except (DomainError, UnboundVariable):
        return e


def add(a, b):
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    e = BinOp("+", a, b)
    return _fold(e) if isinstance(a, Num) and isinstance(b, Num) else e


def sub(a, b):
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return neg(b)
    e = BinOp("-", a, b)
    return _fold(e) if isinstance(a, Num) and isinstance(b, Num) else e


def mul(a, b):
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    e = BinOp("*", a, b)
    return _fold(e) if isinstance(a, Num) and isinstance(b, Num) else e


def div(a, b):
    if _is(a, 0.0):
        return ZERO
    if _is(b, 1.0):
        return a
    e = BinOp("/", a, b)
    return _fold(e) if isinstance(a, Num) and isinstance(b, Num) else e


def neg(a):
    if isinstance(a, Num):
        return Num(-a.value + 0.0)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def power(a, b):
    if _is(b, 1.0):
        return a
    if _is(b, 0.0):
        return ONE
    e = BinOp("^", a, b)
    return _fold(e) if isinstance(a, Num) and isinstance(b, Num) else e


def call(name, *args):
    e = Call(name, tuple(args))
    return _fold(e) if all(isinstance(a, Num) for a in args) else e


def differentiate(e: Expr, var: str) -> Expr:
    """Symbolic derivative of `e` with respect to `var`.

    Kinks follow fixed conventions so the result is total: the derivative of
    ``abs`` at 0 is 0, ``max``/``min`` follow their first argument on ties,
    and ``step``/``sign`` have derivative 0.
    """
    e = as_expr(e)
    if var not in VARIABLES:
        raise UnboundVariable(f"{var!r} is not an expression variable")
    return _d(e, var)


def _d(e, v):
    if isinstance(e, Num):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == v else ZERO
    if isinstance(e, Neg):
        return neg(_d(e.arg, v))
    if isinstance(e, BinOp):
        a, b = e.left, e.right
        da, db = _d(a, v), _d(b, v)
        if e.op == "+":
            return add(da, db)
        if e.op == "-":
            return sub(da, db)
        if e.op == "*":
            return add(mul(da, b), mul(a, db))
        if e.op == "/":
            return div(sub(mul(da, b), mul(a, db)), power(b, Num(2.0)))
        return _dpow(a, b, da, db)
    name = e.name
    u = e.args[0]
    du = _d(u, v)
    if name == "pow":
        return _dpow(u, e.args[1], du, _d(e.args[1], v))
    if name in ("max", "min"):
        w = e.args[1]
        dw = _d(w, v)
        # step(u - w) is 1 exactly where max picks u (ties included)
        pick = call("step", sub(u, w) if name == "max" else sub(w, u))
        return add(mul(pick, du), mul(sub(ONE, pick), dw))
    if _is(du, 0.0):
        return ZERO
    if name == "sin":
        return mul(call("cos", u), du)
    if name == "cos":
        return neg(mul(call("sin", u), du))
    if name == "exp":
        return mul(call("exp", u), du)
    if name == "log":
        return div(du, u)
    if name == "sqrt":
        return div(du, mul(Num(2.0), call("sqrt", u)))
    if name == "abs":
        return mul(call("sign", u), du)
    # sign, step
    return ZERO


def _dpow(a, b, da, db):
    if _is(db, 0.0):
        return mul(mul(b, power(a, sub(b, ONE))), da)
    if _is(da, 0.0):
        return mul(mul(power(a, b), call("log", a)), db)
    return mul(power(a, b), add(mul(db, call("log", a)), div(mul(b, da), a)))


def nth_derivative(e: Expr, var: str, order: int) -> Expr:
    for _ in range(order):
        e = differentiate(e, var)
    return e
