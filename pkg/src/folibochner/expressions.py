"""Expression trees over chart variables ``x0 .. x{d-1}``.

Expressions are parsed from infix text (``+ - * / ^`` and the functions
``sin cos exp sqrt log``) and can be evaluated pointwise or as jets.  They
also support Python operator overloading, which is how the model
constructors assemble frames.
"""

from __future__ import annotations

import ast
import math
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ArityError, BadExpression, DomainError
from .jets import DEFAULT_ORDER, Jet, variables

FUNCTIONS = ("sin", "cos", "exp", "sqrt", "log")
_VAR = re.compile(r"^x(\d+)$")


@dataclass(frozen=True)
class Expression:
    """Immutable expression node.

    ``op`` is one of ``const``, ``var``, ``add``, ``sub``, ``mul``, ``div``,
    ``pow``, ``neg`` or a function name; ``args`` holds child nodes, or the
    float value / variable index for leaves.
    """

    op: str
    args: tuple

    # constructors ------------------------------------------------------------
    @staticmethod
    def const(value: float) -> "Expression":
        return Expression("const", (float(value),))

    @staticmethod
    def var(index: int) -> "Expression":
        return Expression("var", (int(index),))

    @staticmethod
    def parse(text) -> "Expression":
        return parse(text)

    # algebra -------------------------------------------------------------------
    def __add__(self, other):
        other = as_expression(other)
        if other.is_const(0.0):
            return self
        if self.is_const(0.0):
            return other
        return Expression("add", (self, other))

    def __radd__(self, other):
        return as_expression(other) + self

    def __sub__(self, other):
        other = as_expression(other)
        if other.is_const(0.0):
            return self
        if self.is_const(0.0):
            return -other
        return Expression("sub", (self, other))

    def __rsub__(self, other):
        return as_expression(other) - self

    def __mul__(self, other):
        other = as_expression(other)
        if self.is_const(0.0) or other.is_const(0.0):
            return Expression.const(0.0)
        if other.is_const(1.0):
            return self
        if self.is_const(1.0):
            return other
        return Expression("mul", (self, other))

    def __rmul__(self, other):
        return as_expression(other) * self

    def __truediv__(self, other):
        other = as_expression(other)
        if other.is_const(1.0):
            return self
        return Expression("div", (self, other))

    def __rtruediv__(self, other):
        return as_expression(other) / self

    def __pow__(self, other):
        return Expression("pow", (self, as_expression(other)))

    def __neg__(self):
        if self.op == "const":
            return Expression.const(-self.args[0])
        return Expression("neg", (self,))

    def is_const(self, value: float | None = None) -> bool:
        if self.op != "const":
            return False
        return value is None or self.args[0] == value

    # inspection ----------------------------------------------------------------
    def max_var(self) -> int:
        """Largest variable index used, or -1 for a constant expression."""
        if self.op == "var":
            return self.args[0]
        if self.op == "const":
            return -1
        return max((a.max_var() for a in self.args), default=-1)

    # evaluation ----------------------------------------------------------------
    def evaluate(self, point: Sequence[float]) -> float:
        """Pointwise float value."""
        point = np.asarray(point, dtype=float)
        self._check_arity(len(point))
        return float(_eval(self, point, _FLOAT_OPS))

    def evaluate_many(self, points) -> np.ndarray:
        """Vectorized values on an array of points of shape ``(count, dim)``."""
        points = np.asarray(points, dtype=float)
        self._check_arity(points.shape[-1])
        cols = [points[..., k] for k in range(points.shape[-1])]
        with np.errstate(all="raise"):
            try:
                out = _eval(self, cols, _ARRAY_OPS)
            except FloatingPointError as exc:
                raise DomainError(str(exc)) from None
        return np.broadcast_to(np.asarray(out, dtype=float), points.shape[:-1]).copy()

    def jet(self, point: Sequence[float], order: int = DEFAULT_ORDER) -> Jet:
        point = np.asarray(point, dtype=float)
        return self.jet_on(variables(point, order))

    def jet_on(self, xs: Jet) -> Jet:
        """Evaluate with the coordinate jets ``xs`` (shape ``(dim,)``)."""
        self._check_arity(xs.shape[0])
        out = _eval(self, xs, _JET_OPS)
        if not isinstance(out, Jet):
            out = Jet.constant(xs.space, out, xs.order)
        return out

    def _check_arity(self, dim: int):
        if self.max_var() >= dim:
            raise ArityError(f"expression uses x{self.max_var()} but the chart has dimension {dim}")

    def __str__(self):
        return _format(self)

    def __repr__(self):
        return f"Expression({_format(self)!r})"


def as_expression(value) -> Expression:
    if isinstance(value, Expression):
        return value
    if isinstance(value, str):
        return parse(value)
    if isinstance(value, (int, float, np.floating, np.integer)):
        return Expression.const(float(value))
    raise TypeError(f"cannot convert {type(value).__name__} to an Expression")


def eval_expression_jet(expr, point: Sequence[float], dim: int | None = None,
                        order: int = DEFAULT_ORDER) -> Jet:
    """Taylor jet of ``expr`` at ``point`` truncated at ``order``."""
    expr = as_expression(expr)
    if dim is not None and len(point) != dim:
        raise ValueError(f"point has length {len(point)}, expected {dim}")
    return expr.jet(point, order)


# parsing ---------------------------------------------------------------------------

def parse(text: str) -> Expression:
    if not isinstance(text, str):
        return as_expression(text)
    src = text.strip().replace("^", "**")
    if not src:
        raise BadExpression("empty expression")
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise BadExpression(f"cannot parse {text!r}: {exc.msg}") from None
    return _convert(tree.body, text)


_BINOPS = {ast.Add: "add", ast.Sub: "sub", ast.Mult: "mul", ast.Div: "div", ast.Pow: "pow"}
_CONSTANTS = {"pi": math.pi, "e": math.e}


def _convert(node, text) -> Expression:
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
            and not isinstance(node.value, bool):
        return Expression.const(node.value)
    if isinstance(node, ast.Name):
        m = _VAR.match(node.id)
        if m:
            return Expression.var(int(m.group(1)))
        if node.id in _CONSTANTS:
            return Expression.const(_CONSTANTS[node.id])
        raise BadExpression(f"unknown symbol {node.id!r} in {text!r}")
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return Expression(_BINOPS[type(node.op)], (_convert(node.left, text), _convert(node.right, text)))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        inner = _convert(node.operand, text)
        return -inner if isinstance(node.op, ast.USub) else inner
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) \
            and node.func.id in FUNCTIONS and len(node.args) == 1 and not node.keywords:
        return Expression(node.func.id, (_convert(node.args[0], text),))
    raise BadExpression(f"unsupported construct in {text!r}")


# evaluation back ends ---------------------------------------------------------------

def _f_div(a, b):
    if b == 0:
        raise DomainError("division by zero")
    return a / b


def _f_pow(a, b):
    if a < 0 and not float(b).is_integer():
        raise DomainError("real power of a negative number")
    if a == 0 and b < 0:
        raise DomainError("division by zero")
    return a**b


def _f_sqrt(a):
    if a < 0:
        raise DomainError("sqrt of a negative number")
    return math.sqrt(a)


def _f_log(a):
    if a <= 0:
        raise DomainError("log of a non-positive number")
    return math.log(a)


_FLOAT_OPS = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": _f_div,
    "pow": _f_pow,
    "neg": lambda a: -a,
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "sqrt": _f_sqrt,
    "log": _f_log,
}


def _a_checked(fn, bad, message):
    def op(a):
        if np.any(bad(np.asarray(a))):
            raise DomainError(message)
        return fn(a)
    return op


_ARRAY_OPS = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
    "pow": lambda a, b: np.power(a, b),
    "neg": lambda a: -a,
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sqrt": _a_checked(np.sqrt, lambda a: a < 0, "sqrt of a negative number"),
    "log": _a_checked(np.log, lambda a: a <= 0, "log of a non-positive number"),
}


def _j_div(a, b):
    if isinstance(b, Jet):
        return a * b.reciprocal()
    if b == 0:
        raise DomainError("division by zero")
    return a / b


def _j_pow(a, b):
    if isinstance(a, Jet):
        return a**b
    if isinstance(b, Jet):
        return b.__rpow__(a)
    return _f_pow(a, b)


def _lift_unary(name, fallback):
    def op(a):
        if isinstance(a, Jet):
            return getattr(a, name)()
        return fallback(a)
    return op


_JET_OPS = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": _j_div,
    "pow": _j_pow,
    "neg": lambda a: -a,
    "sin": _lift_unary("sin", math.sin),
    "cos": _lift_unary("cos", math.cos),
    "exp": _lift_unary("exp", math.exp),
    "sqrt": _lift_unary("sqrt", _f_sqrt),
    "log": _lift_unary("log", _f_log),
}


def _eval(node: Expression, xs, ops):
    op = node.op
    if op == "const":
        return node.args[0]
    if op == "var":
        return xs[node.args[0]]
    vals = [_eval(a, xs, ops) for a in node.args]
    return ops[op](*vals)


# formatting -------------------------------------------------------------------------

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}
_SYM = {"add": " + ", "sub": " - ", "mul": "*", "div": "/", "pow": "^"}


def _format(node: Expression, parent: int = 0) -> str:
    op = node.op
    if op == "const":
        v = node.args[0]
        s = repr(v) if not v.is_integer() else str(int(v)) if abs(v) < 1e15 else repr(v)
        return f"({s})" if v < 0 and parent > 0 else s
    if op == "var":
        return f"x{node.args[0]}"
    if op in FUNCTIONS:
        return f"{op}({_format(node.args[0])})"
    prec = _PREC[op]
    if op == "neg":
        s = "-" + _format(node.args[0], prec)
    else:
        left = _format(node.args[0], prec + (1 if op == "pow" else 0))
        right = _format(node.args[1], prec + (0 if op == "pow" else 1))
        s = left + _SYM[op] + right
    return f"({s})" if prec < parent or (op == "neg" and parent > 0) else s
