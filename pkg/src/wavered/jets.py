"""Numeric evaluation of expressions: plain values and second-order jets.

A ``Jet2`` carries (value, gradient, Hessian) with respect to a fixed tuple
of active variables and propagates them through arithmetic by the product
and chain rules, so second derivatives come out exact to rounding.  The
Hessian stays bit-exactly symmetric because every update is built from
symmetric numpy operations.
"""
from __future__ import annotations

import math
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np

from .expressions import (
    Constant,
    Div,
    Expr,
    Func,
    Neg,
    Opaque,
    Power,
    Product,
    Sum,
    Variable,
    to_text,
)

#: Concrete implementation of an opaque function symbol: maps (t, order) to
#: the order-th derivative at t.  Must support numpy arrays for t.
OpaqueImpl = Callable[[object, int], object]


class DomainError(ArithmeticError):
    """Evaluation left the domain of a subexpression (ln, sqrt, division)."""

    def __init__(self, message: str, subtree: Expr, point: Mapping[str, float]):
        super().__init__(f"{message} in {to_text(subtree)!r} at {dict(point)}")
        self.subtree = subtree
        self.point = dict(point)


class Jet2:
    """Truncated second-order Taylor bundle over k active variables."""

    __slots__ = ("value", "grad", "hess")

    def __init__(self, value: float, grad: np.ndarray, hess: np.ndarray):
        self.value = value
        self.grad = grad
        self.hess = hess

    @staticmethod
    def constant(value: float, k: int) -> "Jet2":
        return Jet2(float(value), np.zeros(k), np.zeros((k, k)))

    @staticmethod
    def seed(value: float, index: int, k: int) -> "Jet2":
        g = np.zeros(k)
        g[index] = 1.0
        return Jet2(float(value), g, np.zeros((k, k)))

    def __add__(self, other: "Jet2") -> "Jet2":
        return Jet2(self.value + other.value, self.grad + other.grad, self.hess + other.hess)

    def __sub__(self, other: "Jet2") -> "Jet2":
        return Jet2(self.value - other.value, self.grad - other.grad, self.hess - other.hess)

    def __neg__(self) -> "Jet2":
        return Jet2(-self.value, -self.grad, -self.hess)

    def __mul__(self, other: "Jet2") -> "Jet2":
        cross = np.outer(self.grad, other.grad)
        return Jet2(
            self.value * other.value,
            self.grad * other.value + other.grad * self.value,
            self.hess * other.value + other.hess * self.value + cross + cross.T,
        )

    def compose(self, f0: float, f1: float, f2: float) -> "Jet2":
        """Jet of f(self) given f, f', f'' at self.value."""
        outer = np.outer(self.grad, self.grad)
        return Jet2(f0, f1 * self.grad, f1 * self.hess + f2 * outer)

    def reciprocal(self, node: Expr, point: Mapping[str, float]) -> "Jet2":
        if self.value == 0:
            raise DomainError("division by zero", node, point)
        v = self.value
        return self.compose(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v))


def _pow_jet(u: Jet2, p: Fraction, node: Expr, point: Mapping[str, float]) -> Jet2:
    pf = float(p)
    if p.denominator == 1:
        n = int(p)
        if u.value == 0 and n < 0:
            raise DomainError("zero raised to a negative power", node, point)
        v = float(u.value) ** n
        d1 = pf * float(u.value) ** (n - 1) if n != 0 else 0.0
        d2 = pf * (pf - 1.0) * float(u.value) ** (n - 2) if n not in (0, 1) else 0.0
    else:
        if u.value <= 0:
            raise DomainError("fractional power of a non-positive value", node, point)
        v = u.value**pf
        d1 = pf * u.value ** (pf - 1.0)
        d2 = pf * (pf - 1.0) * u.value ** (pf - 2.0)
    return u.compose(v, d1, d2)


def eval_jet(
    e: Expr,
    binding: Mapping[str, float],
    active: Sequence[str],
    opaque_impls: Mapping[str, OpaqueImpl] | None = None,
) -> Jet2:
    """Value, gradient and Hessian of ``e`` at ``binding``.

    ``active`` fixes the differentiation variables and their order in the
    gradient/Hessian.  All other free variables are treated as constants and
    must appear in ``binding``.
    """
    impls = opaque_impls or {}
    k = len(active)
    index = {name: i for i, name in enumerate(active)}

    def walk(node: Expr) -> Jet2:
        if isinstance(node, Constant):
            return Jet2.constant(float(node.value), k)
        if isinstance(node, Variable):
            value = binding[node.name]
            if node.name in index:
                return Jet2.seed(value, index[node.name], k)
            return Jet2.constant(value, k)
        if isinstance(node, Sum):
            total = walk(node.terms[0])
            for t in node.terms[1:]:
                total = total + walk(t)
            return total
        if isinstance(node, Product):
            total = walk(node.factors[0])
            for f in node.factors[1:]:
                total = total * walk(f)
            return total
        if isinstance(node, Neg):
            return -walk(node.arg)
        if isinstance(node, Div):
            return walk(node.num) * walk(node.den).reciprocal(node, binding)
        if isinstance(node, Power):
            return _pow_jet(walk(node.base), node.exponent, node, binding)
        if isinstance(node, Func):
            u = walk(node.arg)
            x = u.value
            if node.name == "sin":
                return u.compose(math.sin(x), math.cos(x), -math.sin(x))
            if node.name == "cos":
                return u.compose(math.cos(x), -math.sin(x), -math.cos(x))
            if node.name == "exp":
                ex = math.exp(x)
                return u.compose(ex, ex, ex)
            if node.name == "ln":
                if x <= 0:
                    raise DomainError("ln of a non-positive value", node, binding)
                return u.compose(math.log(x), 1.0 / x, -1.0 / (x * x))
            if node.name == "sqrt":
                if x <= 0:
                    raise DomainError("sqrt derivative at a non-positive value", node, binding)
                r = math.sqrt(x)
                return u.compose(r, 0.5 / r, -0.25 / (r * x))
            if node.name == "arctan":
                d = 1.0 + x * x
                return u.compose(math.atan(x), 1.0 / d, -2.0 * x / (d * d))
            raise ValueError(f"unknown function {node.name!r}")
        if isinstance(node, Opaque):
            if node.name not in impls:
                raise DomainError(f"no implementation for {node.name}", node, binding)
            f = impls[node.name]
            u = walk(node.arg)
            t = u.value
            return u.compose(
                float(f(t, node.order)),
                float(f(t, node.order + 1)),
                float(f(t, node.order + 2)),
            )
        raise TypeError(f"not an expression: {node!r}")

    return walk(e)


def eval_scaled(
    e: Expr,
    binding: Mapping[str, float],
    opaque_impls: Mapping[str, OpaqueImpl] | None = None,
) -> tuple[float, float]:
    """Value of ``e`` plus the largest magnitude among its subterm values.

    The scale supports relative zero-testing: cancellation of large subterms
    should not be mistaken for an exact zero.
    """
    impls = opaque_impls or {}
    scale = 0.0

    def note(v: float) -> float:
        nonlocal scale
        a = abs(v)
        if a > scale:
            scale = a
        if math.isnan(v) or math.isinf(v):
            raise DomainError("non-finite value", e, binding)
        return v

    def walk(node: Expr) -> float:
        if isinstance(node, Constant):
            return note(float(node.value))
        if isinstance(node, Variable):
            return note(binding[node.name])
        if isinstance(node, Sum):
            return note(sum(walk(t) for t in node.terms))
        if isinstance(node, Product):
            out = 1.0
            for f in node.factors:
                out *= walk(f)
            return note(out)
        if isinstance(node, Neg):
            return note(-walk(node.arg))
        if isinstance(node, Div):
            den = walk(node.den)
            if den == 0:
                raise DomainError("division by zero", node, binding)
            return note(walk(node.num) / den)
        if isinstance(node, Power):
            base = walk(node.base)
            p = node.exponent
            if p.denominator == 1:
                n = int(p)
                if base == 0 and n < 0:
                    raise DomainError("zero raised to a negative power", node, binding)
                return note(base**n)
            if base < 0:
                raise DomainError("fractional power of a negative value", node, binding)
            return note(base ** float(p))
        if isinstance(node, Func):
            x = walk(node.arg)
            if node.name == "ln":
                if x <= 0:
                    raise DomainError("ln of a non-positive value", node, binding)
                return note(math.log(x))
            if node.name == "sqrt":
                if x < 0:
                    raise DomainError("sqrt of a negative value", node, binding)
                return note(math.sqrt(x))
            table = {"sin": math.sin, "cos": math.cos, "exp": math.exp, "arctan": math.atan}
            return note(table[node.name](x))
        if isinstance(node, Opaque):
            if node.name not in impls:
                raise DomainError(f"no implementation for {node.name}", node, binding)
            return note(float(impls[node.name](walk(node.arg), node.order)))
        raise TypeError(f"not an expression: {node!r}")

    value = walk(e)
    return value, scale


def eval_value(
    e: Expr,
    binding: Mapping[str, float],
    opaque_impls: Mapping[str, OpaqueImpl] | None = None,
) -> float:
    """Plain float value of ``e`` at ``binding``."""
    return eval_scaled(e, binding, opaque_impls)[0]


def to_callable(
    e: Expr,
    params: Sequence[str],
    opaque_impls: Mapping[str, OpaqueImpl] | None = None,
) -> Callable:
    """Compile ``e`` into a vectorized function of the named parameters.

    The result maps numpy arrays (or floats) positionally; domain violations
    surface as nan/inf rather than exceptions, so callers on hot loops check
    finiteness themselves.
    """
    impls = dict(opaque_impls or {})
    names: dict[str, object] = {"np": np}
    for key, fn in impls.items():
        names[f"_op_{key}"] = fn

    def emit(node: Expr) -> str:
        if isinstance(node, Constant):
            return repr(float(node.value))
        if isinstance(node, Variable):
            return node.name
        if isinstance(node, Sum):
            return "(" + " + ".join(emit(t) for t in node.terms) + ")"
        if isinstance(node, Product):
            return "(" + " * ".join(emit(f) for f in node.factors) + ")"
        if isinstance(node, Neg):
            return f"(-{emit(node.arg)})"
        if isinstance(node, Div):
            return f"({emit(node.num)} / {emit(node.den)})"
        if isinstance(node, Power):
            p = node.exponent
            exponent = repr(int(p)) if p.denominator == 1 else repr(float(p))
            return f"({emit(node.base)}) ** {exponent}"
        if isinstance(node, Func):
            np_name = {"ln": "log", "sqrt": "sqrt", "sin": "sin", "cos": "cos",
                       "exp": "exp", "arctan": "arctan"}[node.name]
            return f"np.{np_name}({emit(node.arg)})"
        if isinstance(node, Opaque):
            if node.name not in impls:
                raise ValueError(f"no implementation for opaque function {node.name}")
            return f"_op_{node.name}({emit(node.arg)}, {node.order})"
        raise TypeError(f"not an expression: {node!r}")

    body = emit(e)
    arglist = ", ".join(params)
    source = f"lambda {arglist}: ({body}) + 0.0 * ({' + '.join(params) if params else '0'})"
    return eval(source, names)  # noqa: S307 - source is generated locally
