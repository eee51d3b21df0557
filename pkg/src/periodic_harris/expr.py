"""Symbolic expression trees for time-dependent vector fields.

Grammar accepted by :func:`parse` (EBNF):

    expr     = term { ("+" | "-") term } ;
    term     = factor { ("*" | "/") factor } ;
    factor   = "-" factor | power ;
    power    = atom [ "^" [ "-" ] integer ] ;
    atom     = number | "pi" | variable | call | "(" expr ")" ;
    call     = function "(" expr ")" ;
    function = "exp" | "log" | "sin" | "cos" | "sqrt" | "phi" [ integer ] ;
    variable = "t" | "x1" | ... | "x9" ;

``phi`` is the analytic kernel phi(u) = u/(exp(u) - 1), extended by
phi(0) = 1.  ``phi1``, ``phi2``, ... denote its derivatives; they are what
``diff`` produces for ``phi`` and they evaluate through the removable
singularity at u = 0 without NaNs (series branch).  ``pi`` parses to a
float constant.

Expressions are immutable; all operations return new trees.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache


class ExprError(Exception):
    pass


class ParseError(ExprError):
    def __init__(self, message, position):
        super().__init__("%s (column %d)" % (message, position + 1))
        self.position = position


class EvalError(ExprError):
    pass


class BracketBlowupError(ExprError):
    def __init__(self, word, nodes, max_nodes):
        super().__init__(
            "bracket %s exceeds node budget (%d > %d)" % (word, nodes, max_nodes)
        )
        self.word = word


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Expr:
    def __add__(self, other):
        return Binary("add", self, _as_expr(other))

    def __radd__(self, other):
        return Binary("add", _as_expr(other), self)

    def __sub__(self, other):
        return Binary("sub", self, _as_expr(other))

    def __rsub__(self, other):
        return Binary("sub", _as_expr(other), self)

    def __mul__(self, other):
        return Binary("mul", self, _as_expr(other))

    def __rmul__(self, other):
        return Binary("mul", _as_expr(other), self)

    def __truediv__(self, other):
        return Binary("div", self, _as_expr(other))

    def __rtruediv__(self, other):
        return Binary("div", _as_expr(other), self)

    def __pow__(self, n):
        if not isinstance(n, int):
            raise TypeError("exponent must be an integer")
        return Power(self, n)

    def __neg__(self):
        return Unary("neg", self)

    def __str__(self):
        return to_str(self)


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Unary(Expr):
    op: str
    arg: Expr


@dataclass(frozen=True)
class Kernel(Expr):
    """order-th derivative of phi(u) = u/(exp(u) - 1), applied to arg."""

    order: int
    arg: Expr


@dataclass(frozen=True)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Power(Expr):
    base: Expr
    exponent: int


ZERO = Const(0.0)
ONE = Const(1.0)

_UNARY_OPS = ("neg", "exp", "log", "sin", "cos", "sqrt")
_BINARY_SYMBOL = {"add": "+", "sub": "-", "mul": "*", "div": "/"}
_VAR_NAMES = frozenset(["t"] + ["x%d" % i for i in range(1, 10)])


def _as_expr(v):
    if isinstance(v, Expr):
        return v
    if isinstance(v, (int, float)):
        return Const(float(v))
    raise TypeError("cannot coerce %r to Expr" % (v,))


def const(v):
    return Const(float(v))


def var(name):
    if name not in _VAR_NAMES:
        raise ExprError("unknown variable %r" % name)
    return Var(name)


def _children(e):
    if isinstance(e, (Const, Var)):
        return ()
    if isinstance(e, (Unary, Kernel)):
        return (e.arg,)
    if isinstance(e, Binary):
        return (e.left, e.right)
    if isinstance(e, Power):
        return (e.base,)
    raise TypeError("not an Expr node: %r" % (e,))


def walk(e):
    """Yield each distinct node of e once (shared subtrees visited once)."""
    seen = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        yield node
        stack.extend(_children(node))


def node_count(e):
    """Number of distinct nodes (shared subtrees counted once)."""
    return sum(1 for _ in walk(e))


def depth(e):
    memo = {}
    stack = [e]
    while stack:
        node = stack[-1]
        kids = _children(node)
        pending = [k for k in kids if id(k) not in memo]
        if pending:
            stack.extend(pending)
            continue
        stack.pop()
        memo[id(node)] = 1 + max((memo[id(k)] for k in kids), default=0)
    return memo[id(e)]


def free_variables(e):
    return {n.name for n in walk(e) if isinstance(n, Var)}


# ---------------------------------------------------------------------------
# phi kernel numerics
#
# phi(u) = u/(exp(u) - 1) and all its derivatives are entire up to the
# removable singularity at u = 0.  Near 0 we evaluate the Bernoulli series
# phi(u) = sum B_n u^n / n!  (radius 2*pi); away from 0 the closed form via
# g(u) = 1/(exp(u)-1) is stable.  g satisfies g' = -(g + g^2), so g's k-th
# derivative is a polynomial in g, computed once per order and cached.

_BERNOULLI_N = 80


def _bernoulli_floats(n):
    table = [Fraction(1)]
    for m in range(1, n + 1):
        acc = Fraction(0)
        binom = 1  # C(m+1, j), starting at j = 0
        for j in range(m):
            acc += binom * table[j]
            binom = binom * (m + 1 - j) // (j + 1)
        table.append(-acc / (m + 1))
    return [float(b) for b in table]


_BERN = _bernoulli_floats(_BERNOULLI_N)


@lru_cache(maxsize=None)
def _phi_series_coeffs(k):
    # coefficients of phi^{(k)} around 0: c_j = B_{k+j} / j!
    coeffs = []
    fact = 1.0
    for j in range(_BERNOULLI_N - k + 1):
        if j > 0:
            fact *= j
        coeffs.append(_BERN[k + j] / fact)
    return tuple(coeffs)


@lru_cache(maxsize=None)
def _g_poly(k):
    # P_k with g^{(k)} = P_k(g); P_0(z) = z, P_{k+1} = -(z + z^2) P_k'
    if k == 0:
        return (0.0, 1.0)
    prev = _g_poly(k - 1)
    dprev = [i * c for i, c in enumerate(prev)][1:]
    out = [0.0] * (len(prev) + 1)
    for i, c in enumerate(dprev):
        out[i + 1] -= c
        out[i + 2] -= c
    return tuple(out)


def _polyval(coeffs, z):
    acc = 0.0
    for c in reversed(coeffs):
        acc = acc * z + c
    return acc


def phi_kernel(order, u):
    """Evaluate the order-th derivative of phi(u) = u/(exp(u)-1)."""
    u = float(u)
    if order == 0:
        if u == 0.0:
            return 1.0
        if abs(u) < 1e-4:
            return 1.0 - u / 2.0 + u * u / 12.0
        if u > 700.0:
            return 0.0
        return u / math.expm1(u)
    if abs(u) <= 2.0:
        return _polyval(_phi_series_coeffs(order), u)
    if u > 700.0:
        return 0.0
    g = 1.0 / math.expm1(u)
    return order * _polyval(_g_poly(order - 1), g) + u * _polyval(_g_poly(order), g)


# ---------------------------------------------------------------------------
# evaluation


def evaluate(e, t=0.0, x=()):
    """Evaluate e at time t and state vector x (x1 = x[0], ...)."""
    env = {"t": float(t)}
    for i, xi in enumerate(x, start=1):
        env["x%d" % i] = float(xi)
    return _eval(e, env)


def _apply_unary(op, v):
    try:
        if op == "neg":
            return -v
        if op == "exp":
            return math.exp(v)
        if op == "log":
            return math.log(v)
        if op == "sin":
            return math.sin(v)
        if op == "cos":
            return math.cos(v)
        return math.sqrt(v)
    except (ValueError, OverflowError) as exc:
        raise EvalError("%s(%r): %s" % (op, v, exc)) from None


def _apply_binary(op, a, b):
    try:
        if op == "add":
            return a + b
        if op == "sub":
            return a - b
        if op == "mul":
            return a * b
        return a / b
    except (ZeroDivisionError, OverflowError) as exc:
        raise EvalError("%s(%r, %r): %s" % (op, a, b, exc)) from None


def _eval(e, env):
    memo = {}
    stack = [e]
    while stack:
        node = stack[-1]
        if id(node) in memo:
            stack.pop()
            continue
        kids = _children(node)
        pending = [k for k in kids if id(k) not in memo]
        if pending:
            stack.extend(pending)
            continue
        stack.pop()
        if isinstance(node, Const):
            v = node.value
        elif isinstance(node, Var):
            try:
                v = env[node.name]
            except KeyError:
                raise EvalError("unbound variable %r" % node.name) from None
        elif isinstance(node, Unary):
            v = _apply_unary(node.op, memo[id(node.arg)])
        elif isinstance(node, Kernel):
            v = phi_kernel(node.order, memo[id(node.arg)])
        elif isinstance(node, Binary):
            v = _apply_binary(node.op, memo[id(node.left)], memo[id(node.right)])
        else:
            base = memo[id(node.base)]
            try:
                v = base**node.exponent
            except (ZeroDivisionError, OverflowError) as exc:
                raise EvalError("pow(%r, %d): %s" % (base, node.exponent, exc)) from None
        if isinstance(v, complex):
            raise EvalError("complex result from %s" % type(node).__name__)
        memo[id(node)] = float(v)
    return memo[id(e)]


# ---------------------------------------------------------------------------
# printing (round-trips through parse)

_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def to_str(e):
    s, _ = _fmt(e)
    return s


def _fmt(e):
    if isinstance(e, Const):
        v = e.value
        if v < 0 or (v == 0.0 and math.copysign(1.0, v) < 0):
            return "-" + _fmt_number(-v), _PREC_NEG
        return _fmt_number(v), _PREC_ATOM
    if isinstance(e, Var):
        return e.name, _PREC_ATOM
    if isinstance(e, Unary):
        if e.op == "neg":
            inner, prec = _fmt(e.arg)
            if prec < _PREC_NEG:
                inner = "(" + inner + ")"
            return "-" + inner, _PREC_NEG
        inner, _ = _fmt(e.arg)
        return "%s(%s)" % (e.op, inner), _PREC_ATOM
    if isinstance(e, Kernel):
        inner, _ = _fmt(e.arg)
        name = "phi" if e.order == 0 else "phi%d" % e.order
        return "%s(%s)" % (name, inner), _PREC_ATOM
    if isinstance(e, Power):
        base, prec = _fmt(e.base)
        if prec < _PREC_ATOM:
            base = "(" + base + ")"
        return "%s^%d" % (base, e.exponent), _PREC_POW
    op = e.op
    left, lp = _fmt(e.left)
    right, rp = _fmt(e.right)
    if op in ("add", "sub"):
        mine = _PREC_ADD
        if lp < mine:
            left = "(" + left + ")"
        if rp < mine or (rp == mine and op == "sub"):
            right = "(" + right + ")"
    else:
        mine = _PREC_MUL
        if lp < mine:
            left = "(" + left + ")"
        if rp < mine or (rp == mine and op == "div") or rp == _PREC_NEG:
            right = "(" + right + ")"
    return "%s %s %s" % (left, _BINARY_SYMBOL[op], right), mine


def _fmt_number(v):
    return repr(v)


# ---------------------------------------------------------------------------
# parsing

_TOKEN_RE = re.compile(
    r"(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[()+\-*/^])"
)

_FUNC_RE = re.compile(r"phi(\d+)?$")


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = []
        pos = 0
        while pos < len(text):
            if text[pos].isspace():
                pos += 1
                continue
            m = _TOKEN_RE.match(text, pos)
            if m is None:
                raise ParseError("unexpected character %r" % text[pos], pos)
            self.tokens.append((m.lastgroup, m.group(), pos))
            pos = m.end()
        self.tokens.append(("end", "", len(text)))
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, symbol):
        kind, value, pos = self.next()
        if kind != "op" or value != symbol:
            raise ParseError("expected %r, found %r" % (symbol, value or "end"), pos)

    def parse(self):
        e = self.expr()
        kind, value, pos = self.peek()
        if kind != "end":
            raise ParseError("unexpected token %r" % value, pos)
        return e

    def expr(self):
        e = self.term()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "+-":
                self.next()
                rhs = self.term()
                e = Binary("add" if value == "+" else "sub", e, rhs)
            else:
                return e

    def term(self):
        e = self.factor()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "*/":
                self.next()
                rhs = self.factor()
                e = Binary("mul" if value == "*" else "div", e, rhs)
            else:
                return e

    def factor(self):
        kind, value, _ = self.peek()
        if kind == "op" and value == "-":
            self.next()
            inner = self.factor()
            if isinstance(inner, Const):
                return Const(-inner.value)
            return Unary("neg", inner)
        return self.power()

    def power(self):
        base = self.atom()
        kind, value, _ = self.peek()
        if kind == "op" and value == "^":
            self.next()
            return Power(base, self.integer())
        return base

    def integer(self):
        sign = 1
        kind, value, pos = self.next()
        if kind == "op" and value == "-":
            sign = -1
            kind, value, pos = self.next()
        if kind != "num" or not value.isdigit():
            raise ParseError("exponent must be an integer, found %r" % value, pos)
        return sign * int(value)

    def atom(self):
        kind, value, pos = self.next()
        if kind == "num":
            return Const(float(value))
        if kind == "op" and value == "(":
            e = self.expr()
            self.expect_op(")")
            return e
        if kind == "name":
            nxt_kind, nxt_value, _ = self.peek()
            if nxt_kind == "op" and nxt_value == "(":
                return self.call(value, pos)
            if value == "pi":
                return Const(math.pi)
            if value in _VAR_NAMES:
                return Var(value)
            raise ParseError("unknown identifier %r" % value, pos)
        raise ParseError("unexpected token %r" % (value or "end"), pos)

    def call(self, name, pos):
        m = _FUNC_RE.match(name)
        if m is not None:
            order = int(m.group(1) or 0)
            self.expect_op("(")
            arg = self.expr()
            self.expect_op(")")
            return Kernel(order, arg)
        if name not in _UNARY_OPS or name == "neg":
            raise ParseError("unknown function %r" % name, pos)
        self.expect_op("(")
        arg = self.expr()
        self.expect_op(")")
        return Unary(name, arg)


def parse(text):
    """Parse an expression string into an Expr tree."""
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# differentiation


def diff(e, name):
    """Partial derivative of e with respect to variable `name`."""
    if name not in _VAR_NAMES:
        raise ExprError("unknown variable %r" % name)
    memo = {}

    def d(n):
        key = id(n)
        if key in memo:
            return memo[key]
        if isinstance(n, Const):
            r = ZERO
        elif isinstance(n, Var):
            r = ONE if n.name == name else ZERO
        elif isinstance(n, Unary):
            da = d(n.arg)
            if n.op == "neg":
                r = _neg(da)
            elif n.op == "exp":
                r = _mul(n, da)
            elif n.op == "log":
                r = _div(da, n.arg)
            elif n.op == "sin":
                r = _mul(Unary("cos", n.arg), da)
            elif n.op == "cos":
                r = _neg(_mul(Unary("sin", n.arg), da))
            else:  # sqrt
                r = _div(da, _mul(Const(2.0), n))
        elif isinstance(n, Kernel):
            r = _mul(Kernel(n.order + 1, n.arg), d(n.arg))
        elif isinstance(n, Binary):
            dl, dr = d(n.left), d(n.right)
            if n.op == "add":
                r = _add(dl, dr)
            elif n.op == "sub":
                r = _sub(dl, dr)
            elif n.op == "mul":
                r = _add(_mul(dl, n.right), _mul(n.left, dr))
            else:
                num = _sub(_mul(dl, n.right), _mul(n.left, dr))
                r = _div(num, Power(n.right, 2))
        else:
            k = n.exponent
            if k == 0:
                r = ZERO
            else:
                r = _mul(_mul(Const(float(k)), _pow(n.base, k - 1)), d(n.base))
        memo[key] = r
        return r

    return d(e)


# ---------------------------------------------------------------------------
# simplification: value-preserving rewrites plus constant folding.


def _is_const(e, v=None):
    return isinstance(e, Const) and (v is None or e.value == v)


def _neg(a):
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Unary) and a.op == "neg":
        return a.arg
    return Unary("neg", a)


def _add(a, b):
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    return Binary("add", a, b)


def _sub(a, b):
    if _is_const(b, 0.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if a == b:
        return ZERO
    if _is_const(a, 0.0):
        return _neg(b)
    return Binary("sub", a, b)


def _mul(a, b):
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    return Binary("mul", a, b)


def _div(a, b):
    if _is_const(b, 1.0):
        return a
    if _is_const(a, 0.0):
        return ZERO
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0.0:
        return Const(a.value / b.value)
    return Binary("div", a, b)


def _pow(base, k):
    if k == 0:
        return ONE
    if k == 1:
        return base
    if isinstance(base, Const):
        try:
            return Const(float(base.value**k))
        except (ZeroDivisionError, OverflowError):
            pass
    return Power(base, k)


def _unary(op, a):
    if op == "neg":
        return _neg(a)
    if isinstance(a, Const):
        try:
            return Const(_apply_unary(op, a.value))
        except EvalError:
            pass
    return Unary(op, a)


def _kernel(order, a):
    if isinstance(a, Const):
        return Const(phi_kernel(order, a.value))
    return Kernel(order, a)


def simplify(e):
    """Bottom-up constant folding and identity rewrites.

    Rewrites preserve the value at every point where the original
    expression is defined (0*x -> 0 included).
    """
    memo = {}
    stack = [e]
    while stack:
        node = stack[-1]
        if id(node) in memo:
            stack.pop()
            continue
        kids = _children(node)
        pending = [k for k in kids if id(k) not in memo]
        if pending:
            stack.extend(pending)
            continue
        stack.pop()
        if isinstance(node, (Const, Var)):
            r = node
        elif isinstance(node, Unary):
            r = _unary(node.op, memo[id(node.arg)])
        elif isinstance(node, Kernel):
            r = _kernel(node.order, memo[id(node.arg)])
        elif isinstance(node, Binary):
            a, b = memo[id(node.left)], memo[id(node.right)]
            if node.op == "add":
                r = _add(a, b)
            elif node.op == "sub":
                r = _sub(a, b)
            elif node.op == "mul":
                r = _mul(a, b)
            else:
                r = _div(a, b)
        else:
            r = _pow(memo[id(node.base)], node.exponent)
        memo[id(node)] = r
    return memo[id(e)]


def is_zero(e):
    return _is_const(e, 0.0)


# ---------------------------------------------------------------------------
# compilation to a Python callable (falls back to the interpreter for
# very deep trees, which could overflow the bytecode compiler).

_CODEGEN_FUNC = {
    "exp": "math.exp",
    "log": "math.log",
    "sin": "math.sin",
    "cos": "math.cos",
    "sqrt": "math.sqrt",
}

_MAX_CODEGEN_DEPTH = 120


def _codegen(e):
    if isinstance(e, Const):
        return "(%s)" % repr(e.value)
    if isinstance(e, Var):
        if e.name == "t":
            return "t"
        return "x[%d]" % (int(e.name[1:]) - 1)
    if isinstance(e, Unary):
        if e.op == "neg":
            return "(-%s)" % _codegen(e.arg)
        return "%s(%s)" % (_CODEGEN_FUNC[e.op], _codegen(e.arg))
    if isinstance(e, Kernel):
        return "phi_kernel(%d, %s)" % (e.order, _codegen(e.arg))
    if isinstance(e, Binary):
        return "(%s %s %s)" % (_codegen(e.left), _BINARY_SYMBOL[e.op], _codegen(e.right))
    return "(%s)**%d" % (_codegen(e.base), e.exponent)


def to_callable(e):
    """Compile e to a function f(t, x) -> float."""
    if depth(e) > _MAX_CODEGEN_DEPTH:
        return lambda t, x: evaluate(e, t, x)
    src = "lambda t, x: " + _codegen(e)
    try:
        fn = eval(src, {"math": math, "phi_kernel": phi_kernel})
    except (SyntaxError, RecursionError, MemoryError):
        return lambda t, x: evaluate(e, t, x)
    return fn


# ---------------------------------------------------------------------------
# vector fields on time x state


@dataclass(frozen=True)
class SymVectorField:
    """Vector field on (t, x1..xd); components[0] is the time component.

    The time component must be the constant 0 or 1: drift fields carry 1
    (they transport time), diffusion fields and brackets carry 0.
    """

    dim: int
    components: tuple
    word: str = "V"

    def __post_init__(self):
        if len(self.components) != self.dim + 1:
            raise ExprError(
                "field %s needs %d components, got %d"
                % (self.word, self.dim + 1, len(self.components))
            )
        if not (_is_const(self.components[0], 0.0) or _is_const(self.components[0], 1.0)):
            raise ExprError("field %s: time component must be 0 or 1" % self.word)
        allowed = {"t"} | {"x%d" % i for i in range(1, self.dim + 1)}
        for comp in self.components:
            extra = free_variables(comp) - allowed
            if extra:
                raise ExprError(
                    "field %s references %s outside dimension %d"
                    % (self.word, sorted(extra), self.dim)
                )

    @property
    def space_components(self):
        return self.components[1:]

    def is_zero(self):
        return all(is_zero(c) for c in self.components)

    def total_nodes(self):
        return sum(node_count(c) for c in self.components)

    def evaluate(self, t, x):
        """Spatial components as a list of floats."""
        return [evaluate(c, t, x) for c in self.components[1:]]

    def compiled(self):
        fns = [to_callable(c) for c in self.components[1:]]
        return lambda t, x: [f(t, x) for f in fns]


def negate_field(field, word=None):
    comps = tuple(simplify(_neg(c)) for c in field.components)
    if not (_is_const(comps[0], 0.0) or _is_const(comps[0], 1.0)):
        raise ExprError("negated field has non-constant time component")
    return SymVectorField(field.dim, comps, word or ("-%s" % field.word))


_VAR_ORDER_CACHE = {}


def _field_vars(dim):
    if dim not in _VAR_ORDER_CACHE:
        _VAR_ORDER_CACHE[dim] = ["t"] + ["x%d" % i for i in range(1, dim + 1)]
    return _VAR_ORDER_CACHE[dim]


def lie_bracket(a, b, max_nodes=500_000, word=None):
    """Lie bracket [a, b] of fields on time x state.

    b must have time component identically 0; a may be a drift-type field
    (time component 1) or another bracket-type field (time component 0).
    The result always has time component 0.  Raises BracketBlowupError if
    any component of the result exceeds max_nodes distinct nodes.
    """
    if a.dim != b.dim:
        raise ExprError("bracket of fields with different dimensions")
    if not _is_const(b.components[0], 0.0):
        raise ExprError("second bracket argument must have time component 0")
    d = a.dim
    names = _field_vars(d)
    word = word or "[%s,%s]" % (a.word, b.word)
    out = [ZERO]
    for i in range(1, d + 1):
        acc = ZERO
        for j in range(d + 1):
            aj, bj = a.components[j], b.components[j]
            if not is_zero(aj):
                dbi = simplify(diff(b.components[i], names[j]))
                acc = _add(acc, _mul(aj, dbi))
            if not is_zero(bj):
                dai = simplify(diff(a.components[i], names[j]))
                acc = _sub(acc, _mul(bj, dai))
        acc = simplify(acc)
        n = node_count(acc)
        if n > max_nodes:
            raise BracketBlowupError(word, n, max_nodes)
        out.append(acc)
    return SymVectorField(d, tuple(out), word)


def load_field(path, word=None):
    """Read a field from a text file: one component per line, first line is
    the time component; blank lines and '#' comments are skipped."""
    comps = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                comps.append(simplify(parse(line)))
    if len(comps) < 2:
        raise ExprError("field file %s needs at least two components" % path)
    return SymVectorField(len(comps) - 1, tuple(comps), word or str(path))
