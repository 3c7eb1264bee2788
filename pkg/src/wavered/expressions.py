"""Immutable expression trees with exact differentiation and a round-trippable syntax.

Expressions are the lingua franca of the toolkit: ansatz variables, reduction
invariants, right-hand sides and compatibility seeds are all values of this
type.  Rational constants stay exact (``fractions.Fraction``) through
construction and differentiation; floats only enter through user input or
numeric evaluation.  There is deliberately no general simplifier -- only a
light canonical form (flattening, constant folding, sign normalization) that
is idempotent and cheap.  Identity checking is done numerically elsewhere.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Union

Rational = Fraction
NumberValue = Union[Fraction, float]

FUNCTIONS = ("sin", "cos", "exp", "ln", "sqrt", "arctan")

#: Identifiers accepted as variables by the default parser: coordinates,
#: reduced-space variables (``vs`` spells v*), the unknowns of reduced
#: equations and the generic seed-function argument.
KNOWN_VARIABLES = frozenset(
    ["x0", "x1", "x2", "x3", "y", "z", "v", "w", "vs", "lam", "phi", "u", "t"]
)


class Expr:
    """Base class for expression nodes.  Nodes are immutable values."""

    __slots__ = ()

    def __str__(self) -> str:
        return to_text(self)


@dataclass(frozen=True, slots=True)
class Constant(Expr):
    value: NumberValue

    def __repr__(self) -> str:
        return f"Constant({self.value!r})"


@dataclass(frozen=True, slots=True)
class Variable(Expr):
    name: str

    def __repr__(self) -> str:
        return f"Variable({self.name!r})"


@dataclass(frozen=True, slots=True)
class Sum(Expr):
    terms: tuple

    def __repr__(self) -> str:
        return f"Sum{self.terms!r}"


@dataclass(frozen=True, slots=True)
class Product(Expr):
    factors: tuple

    def __repr__(self) -> str:
        return f"Product{self.factors!r}"


@dataclass(frozen=True, slots=True)
class Power(Expr):
    """base**exponent with an integer or half-integer exponent."""

    base: Expr
    exponent: Fraction

    def __repr__(self) -> str:
        return f"Power({self.base!r}, {self.exponent!r})"


@dataclass(frozen=True, slots=True)
class Neg(Expr):
    arg: Expr

    def __repr__(self) -> str:
        return f"Neg({self.arg!r})"


@dataclass(frozen=True, slots=True)
class Div(Expr):
    num: Expr
    den: Expr

    def __repr__(self) -> str:
        return f"Div({self.num!r}, {self.den!r})"


@dataclass(frozen=True, slots=True)
class Func(Expr):
    """Application of one of the built-in unary functions."""

    name: str
    arg: Expr

    def __repr__(self) -> str:
        return f"Func({self.name!r}, {self.arg!r})"


@dataclass(frozen=True, slots=True)
class Opaque(Expr):
    """An arbitrary function symbol such as Phi(x0+x3).

    ``order`` counts how many times the symbol has been differentiated; the
    chain rule increments it instead of nesting derivative nodes, so Phi,
    Phi' and Phi'' share one bounded representation.
    """

    name: str
    arg: Expr
    order: int = 0

    def __repr__(self) -> str:
        return f"Opaque({self.name!r}, {self.arg!r}, {self.order})"


# ---------------------------------------------------------------------------
# Smart constructors.  They perform the light canonicalization: flattening of
# nested sums/products, exact constant folding, absorption of 0 and 1, and
# folding of negated constants.  canon() is a bottom-up rebuild through them.
# ---------------------------------------------------------------------------


def C(value) -> Constant:
    """Make a constant; ints become exact rationals."""
    if isinstance(value, bool):
        raise TypeError("boolean is not a number")
    if isinstance(value, int):
        return Constant(Fraction(value))
    if isinstance(value, (Fraction, float)):
        return Constant(value)
    raise TypeError(f"not a constant value: {value!r}")


def V(name: str) -> Variable:
    return Variable(name)


def _is_zero_const(e: Expr) -> bool:
    return isinstance(e, Constant) and e.value == 0


def _is_one_const(e: Expr) -> bool:
    return isinstance(e, Constant) and e.value == 1


def add(*terms: Expr) -> Expr:
    flat: list[Expr] = []
    const: NumberValue = Fraction(0)
    stack = list(terms)
    for t in stack:
        if isinstance(t, Sum):
            for sub_t in t.terms:
                if isinstance(sub_t, Constant):
                    const = const + sub_t.value
                else:
                    flat.append(sub_t)
        elif isinstance(t, Constant):
            const = const + t.value
        else:
            flat.append(t)
    if const != 0:
        flat.append(Constant(const))
    if not flat:
        return Constant(Fraction(0))
    if len(flat) == 1:
        return flat[0]
    return Sum(tuple(flat))


def mul(*factors: Expr) -> Expr:
    flat: list[Expr] = []
    const: NumberValue = Fraction(1)
    for f in factors:
        if isinstance(f, Product):
            for sub_f in f.factors:
                if isinstance(sub_f, Constant):
                    const = const * sub_f.value
                else:
                    flat.append(sub_f)
        elif isinstance(f, Constant):
            const = const * f.value
        else:
            flat.append(f)
    if const == 0:
        return Constant(const if isinstance(const, Fraction) else const)
    if const != 1:
        flat.insert(0, Constant(const))
    if not flat:
        return Constant(Fraction(1))
    if len(flat) == 1:
        return flat[0]
    return Product(tuple(flat))


def neg(e: Expr) -> Expr:
    if isinstance(e, Constant):
        return Constant(-e.value)
    if isinstance(e, Neg):
        return e.arg
    return Neg(e)


def sub(a: Expr, b: Expr) -> Expr:
    return add(a, neg(b))


def div(a: Expr, b: Expr) -> Expr:
    if isinstance(b, Constant) and b.value == 1:
        return a
    if isinstance(a, Constant) and a.value == 0:
        return a
    if isinstance(a, Constant) and isinstance(b, Constant) and b.value != 0:
        return Constant(a.value / b.value)
    return Div(a, b)


def _as_exponent(p) -> Fraction:
    if isinstance(p, int):
        p = Fraction(p)
    if not isinstance(p, Fraction):
        raise TypeError(f"exponent must be an integer or Fraction, got {p!r}")
    if p.denominator not in (1, 2):
        raise ValueError(f"exponent must be integer or half-integer, got {p}")
    return p


def powr(base: Expr, exponent) -> Expr:
    p = _as_exponent(exponent)
    if p == 0:
        return Constant(Fraction(1))
    if p == 1:
        return base
    if isinstance(base, Constant) and p.denominator == 1:
        v = base.value
        n = int(p)
        if v != 0 or n > 0:
            if isinstance(v, Fraction):
                return Constant(v**n)
            return Constant(float(v) ** n)
    return Power(base, p)


def func(name: str, arg: Expr) -> Func:
    if name not in FUNCTIONS:
        raise ValueError(f"unknown function {name!r}")
    return Func(name, arg)


def sin(e: Expr) -> Func:
    return Func("sin", e)


def cos(e: Expr) -> Func:
    return Func("cos", e)


def exp(e: Expr) -> Func:
    return Func("exp", e)


def ln(e: Expr) -> Func:
    return Func("ln", e)


def sqrt(e: Expr) -> Func:
    return Func("sqrt", e)


def arctan(e: Expr) -> Func:
    return Func("arctan", e)


def opaque(name: str, arg: Expr, order: int = 0) -> Opaque:
    if order < 0:
        raise ValueError("derivative order must be >= 0")
    return Opaque(name, arg, order)


def canon(e: Expr) -> Expr:
    """Rebuild ``e`` bottom-up through the smart constructors (idempotent)."""
    if isinstance(e, (Constant, Variable)):
        return e
    if isinstance(e, Sum):
        return add(*(canon(t) for t in e.terms))
    if isinstance(e, Product):
        return mul(*(canon(f) for f in e.factors))
    if isinstance(e, Neg):
        return neg(canon(e.arg))
    if isinstance(e, Div):
        return div(canon(e.num), canon(e.den))
    if isinstance(e, Power):
        return powr(canon(e.base), e.exponent)
    if isinstance(e, Func):
        return Func(e.name, canon(e.arg))
    if isinstance(e, Opaque):
        return Opaque(e.name, canon(e.arg), e.order)
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# Structure queries
# ---------------------------------------------------------------------------


def _children(e: Expr) -> tuple:
    if isinstance(e, Sum):
        return e.terms
    if isinstance(e, Product):
        return e.factors
    if isinstance(e, (Neg, Func, Opaque)):
        return (e.arg,)
    if isinstance(e, Div):
        return (e.num, e.den)
    if isinstance(e, Power):
        return (e.base,)
    return ()


def free_vars(e: Expr) -> frozenset[str]:
    """Names of all variables occurring in ``e``."""
    if isinstance(e, Variable):
        return frozenset([e.name])
    out: frozenset[str] = frozenset()
    for c in _children(e):
        out = out | free_vars(c)
    return out


def opaque_names(e: Expr) -> frozenset[str]:
    out: frozenset[str] = frozenset()
    if isinstance(e, Opaque):
        out = frozenset([e.name])
    for c in _children(e):
        out = out | opaque_names(c)
    return out


def substitute(e: Expr, mapping: dict[str, Expr]) -> Expr:
    """Replace variables by expressions, rebuilding canonically."""
    if isinstance(e, Variable):
        return mapping.get(e.name, e)
    if isinstance(e, Constant):
        return e
    if isinstance(e, Sum):
        return add(*(substitute(t, mapping) for t in e.terms))
    if isinstance(e, Product):
        return mul(*(substitute(f, mapping) for f in e.factors))
    if isinstance(e, Neg):
        return neg(substitute(e.arg, mapping))
    if isinstance(e, Div):
        return div(substitute(e.num, mapping), substitute(e.den, mapping))
    if isinstance(e, Power):
        return powr(substitute(e.base, mapping), e.exponent)
    if isinstance(e, Func):
        return Func(e.name, substitute(e.arg, mapping))
    if isinstance(e, Opaque):
        return Opaque(e.name, substitute(e.arg, mapping), e.order)
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# Differentiation
# ---------------------------------------------------------------------------

_ZERO = Constant(Fraction(0))
_ONE = Constant(Fraction(1))


def diff(e: Expr, var: str) -> Expr:
    """Exact partial derivative of ``e`` with respect to the named variable."""
    if isinstance(e, Constant):
        return _ZERO
    if isinstance(e, Variable):
        return _ONE if e.name == var else _ZERO
    if isinstance(e, Sum):
        return add(*(diff(t, var) for t in e.terms))
    if isinstance(e, Product):
        terms = []
        for i, f in enumerate(e.factors):
            df = diff(f, var)
            if _is_zero_const(df):
                continue
            terms.append(mul(*e.factors[:i], df, *e.factors[i + 1 :]))
        return add(*terms)
    if isinstance(e, Neg):
        return neg(diff(e.arg, var))
    if isinstance(e, Div):
        da, db = diff(e.num, var), diff(e.den, var)
        return div(sub(mul(da, e.den), mul(e.num, db)), powr(e.den, 2))
    if isinstance(e, Power):
        inner = diff(e.base, var)
        if _is_zero_const(inner):
            return _ZERO
        return mul(Constant(e.exponent), powr(e.base, e.exponent - 1), inner)
    if isinstance(e, Func):
        inner = diff(e.arg, var)
        if _is_zero_const(inner):
            return _ZERO
        a = e.arg
        outer = {
            "sin": lambda: cos(a),
            "cos": lambda: neg(sin(a)),
            "exp": lambda: exp(a),
            "ln": lambda: div(_ONE, a),
            "sqrt": lambda: div(_ONE, mul(C(2), sqrt(a))),
            "arctan": lambda: div(_ONE, add(_ONE, powr(a, 2))),
        }[e.name]()
        return mul(outer, inner)
    if isinstance(e, Opaque):
        inner = diff(e.arg, var)
        if _is_zero_const(inner):
            return _ZERO
        return mul(Opaque(e.name, e.arg, e.order + 1), inner)
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# Printing.  to_text produces the concrete syntax accepted by parse(), with
# parentheses chosen so that parse(to_text(e)) == e for any canonical tree
# free of differentiated opaque symbols (primes are display-only).
# ---------------------------------------------------------------------------


def _rational_token(value: Fraction) -> str:
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


def _const_token(value: NumberValue) -> str:
    if isinstance(value, Fraction):
        return _rational_token(value)
    return repr(float(value))


def _is_atom(e: Expr) -> bool:
    """True if e prints as a single base token: no operator at top level."""
    if isinstance(e, Constant):
        if isinstance(e.value, Fraction):
            return e.value >= 0 and e.value.denominator == 1
        return e.value >= 0
    return isinstance(e, (Variable, Func, Opaque))


def _base_text(e: Expr) -> str:
    """Render as a grammar 'base': an atom or a parenthesized expression."""
    if _is_atom(e):
        return _render(e)
    return f"({_render(e)})"


def _factor_text(e: Expr, leading: bool) -> str:
    """Render as a term factor.

    Non-leading factors must not start with a bare '-' or contain a top-level
    '/' or '*', otherwise reparsing would regroup the term.
    """
    if isinstance(e, Power):
        return f"{_base_text(e.base)}^{_rational_token(e.exponent)}"
    if isinstance(e, (Sum, Product, Div)):
        return f"({_render(e)})"
    if isinstance(e, Neg):
        return f"-{_base_text(e.arg)}" if leading else f"(-{_base_text(e.arg)})"
    if isinstance(e, Constant):
        t = _const_token(e.value)
        neg_or_frac = t.startswith("-") or "/" in t
        if neg_or_frac and not leading:
            return f"({t})"
        return t
    return _render(e)


def _term_text(e: Expr) -> str:
    if isinstance(e, Product):
        parts = [_factor_text(e.factors[0], leading=True)]
        parts += [_factor_text(f, leading=False) for f in e.factors[1:]]
        return "*".join(parts)
    if isinstance(e, Div):
        num = (
            _term_text(e.num)
            if isinstance(e.num, (Product, Div))
            else _factor_text(e.num, leading=True)
        )
        den = _factor_text(e.den, leading=False)
        # An integer denominator after an exponent would be lexed into the
        # exponent's rational token; parenthesize to keep it a division.
        if isinstance(e.den, Constant):
            den = f"({_const_token(e.den.value)})"
        return f"{num}/{den}"
    return _factor_text(e, leading=True)


def _render(e: Expr) -> str:
    if isinstance(e, Constant):
        return _const_token(e.value)
    if isinstance(e, Variable):
        return e.name
    if isinstance(e, Func):
        return f"{e.name}({_render(e.arg)})"
    if isinstance(e, Opaque):
        return f"{e.name}{chr(39) * e.order}({_render(e.arg)})"
    if isinstance(e, Sum):
        out = _term_text(e.terms[0])
        for t in e.terms[1:]:
            if isinstance(t, Neg):
                out += f" - {_term_text(t.arg)}"
            elif isinstance(t, Constant) and (
                (isinstance(t.value, Fraction) and t.value < 0)
                or (isinstance(t.value, float) and t.value < 0)
            ):
                out += f" - {_term_text(Constant(-t.value))}"
            else:
                out += f" + {_term_text(t)}"
        return out
    return _term_text(e)


def to_text(e: Expr) -> str:
    """Concrete syntax for ``e``; inverse of parse() on canonical trees."""
    return _render(e)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


class ParseError(ValueError):
    """Syntax or name error, with the byte offset of the offending token."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


_OPS = set("+-*/^(),")


def _tokenize(text: str) -> list[tuple[str, object, int]]:
    tokens: list[tuple[str, object, int]] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch in _OPS:
            tokens.append(("op", ch, i))
            i += 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            while j < n and text[j].isdigit():
                j += 1
            is_float = False
            if j < n and text[j] == ".":
                is_float = True
                j += 1
                while j < n and text[j].isdigit():
                    j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    is_float = True
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            lexeme = text[i:j]
            value = float(lexeme) if is_float else Fraction(int(lexeme))
            tokens.append(("num", value, i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            if j < n and text[j] == "'":
                raise ParseError(
                    "derivative primes are not accepted in input; "
                    "derivative order is internal only",
                    j,
                )
            tokens.append(("ident", text[i:j], i))
            i = j
            continue
        raise ParseError(f"unexpected character {ch!r}", i)
    tokens.append(("end", None, n))
    return tokens


class _Parser:
    """Recursive descent over the expression grammar.

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := base ('^' signed-rational)?
    base   := number | ident | ident '(' expr ')' | '(' expr ')' | '-' base
    """

    def __init__(self, tokens, variables):
        self.tokens = tokens
        self.pos = 0
        self.variables = variables

    def peek(self):
        return self.tokens[self.pos]

    def next(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, symbol: str):
        kind, value, offset = self.peek()
        if kind != "op" or value != symbol:
            raise ParseError(f"expected {symbol!r}", offset)
        return self.next()

    def at_op(self, *symbols: str) -> bool:
        kind, value, _ = self.peek()
        return kind == "op" and value in symbols

    def parse_expr(self) -> Expr:
        result = self.parse_term()
        while self.at_op("+", "-"):
            _, op, _ = self.next()
            rhs = self.parse_term()
            result = add(result, rhs) if op == "+" else add(result, neg(rhs))
        return result

    def parse_term(self) -> Expr:
        result = self.parse_factor()
        while self.at_op("*", "/"):
            _, op, _ = self.next()
            rhs = self.parse_factor()
            result = mul(result, rhs) if op == "*" else div(result, rhs)
        return result

    def parse_factor(self) -> Expr:
        base = self.parse_base()
        if self.at_op("^"):
            self.next()
            exponent = self.parse_signed_rational()
            return powr(base, exponent)
        return base

    def parse_signed_rational(self) -> Fraction:
        sign = 1
        if self.at_op("-"):
            self.next()
            sign = -1
        elif self.at_op("+"):
            self.next()
        kind, value, offset = self.peek()
        if kind != "num" or not isinstance(value, Fraction):
            raise ParseError("expected an integer exponent", offset)
        self.next()
        numerator = sign * int(value)
        # Lex a following '/integer' into the exponent (signed-rational token).
        if self.at_op("/"):
            kind2, value2, _ = self.tokens[self.pos + 1]
            if kind2 == "num" and isinstance(value2, Fraction):
                self.next()
                self.next()
                frac = Fraction(numerator, int(value2))
                if frac.denominator not in (1, 2):
                    raise ParseError(
                        f"exponent must be integer or half-integer, got {frac}",
                        offset,
                    )
                return frac
        return Fraction(numerator)

    def parse_base(self) -> Expr:
        kind, value, offset = self.peek()
        if kind == "op" and value == "-":
            self.next()
            return neg(self.parse_base())
        if kind == "op" and value == "(":
            self.next()
            inner = self.parse_expr()
            self.expect_op(")")
            return inner
        if kind == "num":
            self.next()
            return Constant(value)
        if kind == "ident":
            self.next()
            name = value
            if self.at_op("("):
                self.next()
                args = [self.parse_expr()]
                while self.at_op(","):
                    self.next()
                    args.append(self.parse_expr())
                self.expect_op(")")
                if len(args) != 1:
                    raise ParseError(f"arity mismatch: {name} takes 1 argument", offset)
                if name in FUNCTIONS:
                    return Func(name, args[0])
                if name[0].isupper():
                    return Opaque(name, args[0], 0)
                raise ParseError(f"unknown function {name!r}", offset)
            if name in self.variables:
                return Variable(name)
            raise ParseError(f"unknown identifier {name!r}", offset)
        raise ParseError("expected a number, name or '('", offset)


def parse(text: str, variables: frozenset[str] | set[str] = KNOWN_VARIABLES) -> Expr:
    """Parse concrete syntax into a canonical expression tree."""
    parser = _Parser(_tokenize(text), variables)
    result = parser.parse_expr()
    kind, _, offset = parser.peek()
    if kind != "end":
        raise ParseError("unexpected trailing input", offset)
    return result
