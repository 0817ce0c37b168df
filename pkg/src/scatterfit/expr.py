"""Expression graphs for scattering models.

A model curve is a directed acyclic graph of nodes: independent
:class:`Parameter` leaves (the quantities an optimizer may move),
:class:`Variable` leaves (evaluation coordinates such as Q), constants and
arithmetic compositions of all of these.  Every node is callable; calling it
with one coordinate array per free variable evaluates the whole graph
vectorized over the coordinates.

Two properties matter throughout:

* identity, not name, defines sharing.  Binding the same ``Parameter`` object
  into several expressions couples them; two parameters that merely share a
  name are unrelated.
* evaluation is eager and side-effect free.  Domain faults (``log`` of a
  non-positive number, division by zero) follow IEEE semantics and propagate
  as ``nan``/``inf`` instead of raising.

``parse`` turns the small arithmetic text grammar used by model files into a
graph against a caller-supplied name table; ``to_text`` is its inverse.
"""

from __future__ import annotations

import itertools
import math
import threading
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Expression",
    "Parameter",
    "Variable",
    "Constant",
    "ParseError",
    "par",
    "var",
    "constant",
    "parse",
    "to_text",
    "evaluate",
    "scalar",
    "sin",
    "cos",
    "tan",
    "arcsin",
    "arccos",
    "arctan",
    "sinh",
    "cosh",
    "tanh",
    "exp",
    "log",
    "log10",
    "sqrt",
    "erf",
    "absolute",
    "conj",
    "re",
    "im",
    "pow",
    "MAX_ARITY",
]

MAX_ARITY = 5

_uid_counter = itertools.count(1)
_uid_lock = threading.Lock()


def _next_uid() -> str:
    with _uid_lock:
        return "p%d" % next(_uid_counter)


class EvalContext:
    """Per-evaluation bindings: variable arrays and parameter overrides.

    A context is confined to one evaluation call, so overriding a parameter
    (as distribution averaging does) never mutates the shared node and never
    leaks between concurrent evaluations.
    """

    __slots__ = ("var_values", "param_overrides")

    def __init__(self, var_values=None, param_overrides=None):
        self.var_values = var_values or {}
        self.param_overrides = param_overrides or {}

    def child(self, var_values=None, param_overrides=None) -> "EvalContext":
        merged_vars = dict(self.var_values)
        if var_values:
            merged_vars.update(var_values)
        merged_pars = dict(self.param_overrides)
        if param_overrides:
            merged_pars.update(param_overrides)
        return EvalContext(merged_vars, merged_pars)


class Expression:
    """Base class for every node in a model graph.

    Supports arithmetic operators, introspection of reachable parameters and
    variables, and vectorized evaluation via ``__call__``.
    """

    _children: tuple = ()
    name: str = ""

    # -- graph traversal ---------------------------------------------------

    def _collect(self, params: list, variables: list, seen: set) -> None:
        for child in self._children:
            child._collect(params, variables, seen)

    def parameters(self) -> list:
        """All reachable independent parameters, deduplicated by identity."""
        params: list = []
        variables: list = []
        self._collect(params, variables, set())
        return params

    def free_parameters(self) -> list:
        """Reachable parameters that are not flagged fixed."""
        return [p for p in self.parameters() if not p.fixed]

    def variables(self) -> list:
        """Reachable free variables, ordered by slot."""
        params: list = []
        variables: list = []
        self._collect(params, variables, set())
        variables.sort(key=lambda v: v.slot)
        slots = [v.slot for v in variables]
        if len(set(slots)) != len(slots):
            raise ValueError(
                "distinct variables share a slot; give each variable its own "
                "slot index before composing them"
            )
        return variables

    @property
    def arity(self) -> int:
        return len(self.variables())

    # -- evaluation --------------------------------------------------------

    def _eval(self, ctx: EvalContext):
        raise NotImplementedError

    def __call__(self, *coords):
        """Evaluate over coordinate arrays, one per free variable.

        Coordinates bind positionally to the free variables sorted by slot.
        A zero-arity expression may be called with a single array whose
        values are ignored; its length sets the output length.
        """
        variables = self.variables()
        if not variables and len(coords) == 1:
            grid = np.asarray(coords[0], dtype=float)
            value = self._eval(EvalContext())
            out = np.empty(grid.shape, dtype=np.result_type(value, float))
            out[...] = value
            return out
        if len(coords) != len(variables):
            raise ValueError(
                "expected %d coordinate array(s) for variables %s, got %d"
                % (len(variables), [v.name for v in variables], len(coords))
            )
        if not variables:
            return self._eval(EvalContext())
        arrays = [np.asarray(c, dtype=float) for c in coords]
        n = arrays[0].shape
        for a in arrays[1:]:
            if a.shape != n:
                raise ValueError("coordinate arrays differ in length")
        ctx = EvalContext({id(v): a for v, a in zip(variables, arrays)})
        with np.errstate(all="ignore"):
            value = self._eval(ctx)
        out = np.empty(n, dtype=np.result_type(value, float))
        out[...] = value
        return out

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return _binary("+", self, other)

    def __radd__(self, other):
        return _binary("+", other, self)

    def __sub__(self, other):
        return _binary("-", self, other)

    def __rsub__(self, other):
        return _binary("-", other, self)

    def __mul__(self, other):
        return _binary("*", self, other)

    def __rmul__(self, other):
        return _binary("*", other, self)

    def __truediv__(self, other):
        return _binary("/", self, other)

    def __rtruediv__(self, other):
        return _binary("/", other, self)

    def __pow__(self, other):
        return _binary("^", self, other)

    def __rpow__(self, other):
        return _binary("^", other, self)

    def __neg__(self):
        return UnaryOp("neg", self)

    def __pos__(self):
        return self

    def __abs__(self):
        return UnaryOp("abs", self)

    def __repr__(self):
        label = type(self).__name__
        if self.name:
            return "<%s %r arity=%d>" % (label, self.name, self.arity)
        return "<%s arity=%d>" % (label, self.arity)


def _wrap(value):
    if isinstance(value, Expression):
        return value
    if isinstance(value, (int, float, complex, np.integer, np.floating, np.complexfloating)):
        return Constant(value)
    return None


def _binary(op, a, b):
    left = _wrap(a)
    right = _wrap(b)
    if left is None or right is None:
        return NotImplemented
    node = BinaryOp(op, left, right)
    if node.arity > MAX_ARITY:
        raise ValueError("composition exceeds %d free variables" % MAX_ARITY)
    return node


class Constant(Expression):
    __slots__ = ("value",)

    def __init__(self, value):
        if isinstance(value, (complex, np.complexfloating)):
            self.value = complex(value)
        else:
            self.value = float(value)

    def _eval(self, ctx):
        return self.value

    def __repr__(self):
        return "<Constant %r>" % (self.value,)


class Parameter(Expression):
    """An independent, optionally fittable scalar.

    The stored ``raw_value`` is what optimizers move and what bounds
    constrain; the effective value seen by expressions is
    ``raw_value * scale``.  Out-of-bounds assignment raises instead of
    clamping.  ``error`` (in raw-value units) is filled in by error
    estimation after a fit.
    """

    def __init__(self, name, value, scale=1.0, bounds=None, fixed=False,
                 units="", uid=None):
        scale = float(scale)
        if scale == 0.0:
            raise ValueError("parameter %r: scale must be nonzero" % name)
        self.name = str(name)
        self.scale = scale
        self.units = str(units)
        self.fixed = bool(fixed)
        self.error = None
        self.uid = uid if uid is not None else _next_uid()
        self._bounds = None
        self._raw = float(value)
        if bounds is not None:
            self.bounds = bounds
        self._check_bounds(self._raw)

    def _check_bounds(self, raw):
        if self._bounds is not None:
            lo, hi = self._bounds
            if raw < lo or raw > hi:
                raise ValueError(
                    "parameter %r: raw value %g outside bounds [%g, %g]"
                    % (self.name, raw, lo, hi)
                )

    @property
    def raw_value(self) -> float:
        return self._raw

    @raw_value.setter
    def raw_value(self, raw):
        raw = float(raw)
        self._check_bounds(raw)
        self._raw = raw

    @property
    def value(self) -> float:
        """Effective value, raw_value * scale."""
        return self._raw * self.scale

    @property
    def bounds(self):
        return self._bounds

    @bounds.setter
    def bounds(self, bounds):
        if bounds is None:
            self._bounds = None
            return
        lo, hi = float(bounds[0]), float(bounds[1])
        if not lo < hi:
            raise ValueError(
                "parameter %r: bounds lower limit must be below upper" % self.name
            )
        if self._raw < lo or self._raw > hi:
            raise ValueError(
                "parameter %r: raw value %g outside bounds [%g, %g]"
                % (self.name, self._raw, lo, hi)
            )
        self._bounds = (lo, hi)

    def _collect(self, params, variables, seen):
        if id(self) not in seen:
            seen.add(id(self))
            params.append(self)

    def _eval(self, ctx):
        override = ctx.param_overrides.get(id(self))
        if override is not None:
            return override
        return self._raw * self.scale

    def to_record(self) -> dict:
        """Serializable snapshot of this parameter's state."""
        return {
            "id": self.uid,
            "name": self.name,
            "raw_value": self._raw,
            "scale": self.scale,
            "error": self.error,
            "fixed": self.fixed,
            "bounds": list(self._bounds) if self._bounds else None,
            "units": self.units,
        }

    def update_from_record(self, record: Mapping) -> None:
        """Restore mutable state (value, bounds, fixed flag, error).

        Value and bounds are validated as a pair, so a record may move both
        even when the new value lies outside the old bounds.
        """
        saved = (self._raw, self._bounds)
        try:
            if "bounds" in record:
                self._bounds = None
            if "raw_value" in record:
                self.raw_value = record["raw_value"]
            if "bounds" in record:
                self.bounds = record["bounds"]
        except ValueError:
            self._raw, self._bounds = saved
            raise
        if "fixed" in record:
            self.fixed = bool(record["fixed"])
        if "error" in record:
            self.error = record["error"]

    def __repr__(self):
        return "<Parameter %r raw=%g scale=%g%s>" % (
            self.name, self._raw, self.scale, " fixed" if self.fixed else "")


class Variable(Expression):
    """A free evaluation coordinate.

    The slot index (0..4) defines the positional calling convention of any
    functor the variable appears in.
    """

    __slots__ = ("name", "slot")

    def __init__(self, name, slot=0):
        slot = int(slot)
        if not 0 <= slot < MAX_ARITY:
            raise ValueError("variable slot must be in 0..%d" % (MAX_ARITY - 1))
        self.name = str(name)
        self.slot = slot

    def _collect(self, params, variables, seen):
        if id(self) not in seen:
            seen.add(id(self))
            variables.append(self)

    def _eval(self, ctx):
        try:
            return ctx.var_values[id(self)]
        except KeyError:
            raise ValueError("variable %r has no bound coordinates" % self.name)

    def __repr__(self):
        return "<Variable %r slot=%d>" % (self.name, self.slot)


_BINARY_FN: dict = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": np.true_divide,
    "^": np.power,
}


class BinaryOp(Expression):
    __slots__ = ("op", "_children")

    def __init__(self, op, a, b):
        self.op = op
        self._children = (a, b)

    def _eval(self, ctx):
        a = self._children[0]._eval(ctx)
        b = self._children[1]._eval(ctx)
        with np.errstate(all="ignore"):
            return _BINARY_FN[self.op](a, b)


def _np_re(x):
    return np.real(x) + 0.0


def _np_im(x):
    return np.imag(x) + 0.0


from scipy import special as _special  # noqa: E402  (after numpy; used below)

_UNARY_FN: dict = {
    "neg": np.negative,
    "abs": np.abs,
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "arcsin": np.arcsin,
    "arccos": np.arccos,
    "arctan": np.arctan,
    "sinh": np.sinh,
    "cosh": np.cosh,
    "tanh": np.tanh,
    "exp": np.exp,
    "log": np.log,
    "log10": np.log10,
    "sqrt": np.sqrt,
    "erf": _special.erf,
    "conj": np.conj,
    "re": _np_re,
    "im": _np_im,
}


class UnaryOp(Expression):
    __slots__ = ("op", "_children")

    def __init__(self, op, a):
        self.op = op
        self._children = (a,)

    def _eval(self, ctx):
        with np.errstate(all="ignore"):
            return _UNARY_FN[self.op](self._children[0]._eval(ctx))


# -- public constructors ----------------------------------------------------

def par(name, value, scale=1.0, bounds=None, fixed=False, units="", uid=None):
    """Create an independent parameter with effective value ``value*scale``."""
    return Parameter(name, value, scale=scale, bounds=bounds, fixed=fixed,
                     units=units, uid=uid)


def var(name, slot=None):
    """Create one variable, or several with consecutive slots.

    ``var("q")`` gives a single slot-0 variable; ``var(["qx", "qy", "qz"])``
    gives three variables on slots 0, 1, 2.
    """
    if isinstance(name, (list, tuple)):
        if slot is not None:
            raise ValueError("slot is implied by position when creating several")
        if len(name) > MAX_ARITY:
            raise ValueError("at most %d variables per functor" % MAX_ARITY)
        return [Variable(n, i) for i, n in enumerate(name)]
    return Variable(name, 0 if slot is None else slot)


def constant(value) -> Constant:
    return Constant(value)


def _unary_factory(op):
    def fn(x):
        node = _wrap(x)
        if node is None:
            raise TypeError("expected an expression or number, got %r" % (x,))
        return UnaryOp(op, node)
    fn.__name__ = op
    return fn


sin = _unary_factory("sin")
cos = _unary_factory("cos")
tan = _unary_factory("tan")
arcsin = _unary_factory("arcsin")
arccos = _unary_factory("arccos")
arctan = _unary_factory("arctan")
sinh = _unary_factory("sinh")
cosh = _unary_factory("cosh")
tanh = _unary_factory("tanh")
exp = _unary_factory("exp")
log = _unary_factory("log")
log10 = _unary_factory("log10")
sqrt = _unary_factory("sqrt")
erf = _unary_factory("erf")
absolute = _unary_factory("abs")
conj = _unary_factory("conj")
re = _unary_factory("re")
im = _unary_factory("im")


def pow(base, exponent):  # noqa: A001  (mirrors the text grammar's pow(a, b))
    node = _binary("^", base, exponent)
    if node is NotImplemented:
        raise TypeError("pow expects expressions or numbers")
    return node


def evaluate(functor, *coords):
    """Evaluate ``functor`` on coordinate arrays; same as calling it."""
    return functor(*coords)


def scalar(value):
    """Evaluate a zero-arity expression (or pass a number through) to a scalar."""
    node = _wrap(value)
    if node is None:
        raise TypeError("expected an expression or number, got %r" % (value,))
    if node.variables():
        raise ValueError("expression still has free variables")
    result = node._eval(EvalContext())
    arr = np.asarray(result)
    if arr.ndim:
        raise ValueError("expression did not evaluate to a scalar")
    value = arr[()]
    if np.iscomplexobj(arr):
        return complex(value)
    return float(value)


# -- text form ---------------------------------------------------------------

class ParseError(ValueError):
    """Raised for malformed expression text; carries the 0-based offset."""

    def __init__(self, message, position):
        super().__init__("%s (at offset %d)" % (message, position))
        self.position = position


_FUNCTIONS_1 = {
    "sin", "cos", "tan", "arcsin", "arccos", "arctan", "sinh", "cosh",
    "tanh", "exp", "log", "log10", "sqrt", "erf", "abs", "conj", "re", "im",
}

_CONSTANTS = {"pi": math.pi, "e": math.e}


def _tokenize(text):
    tokens = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch in "+-*/^(),":
            tokens.append((ch, ch, i))
            i += 1
            continue
        if ch.isdigit() or ch == ".":
            j = i
            while j < n and (text[j].isdigit() or text[j] == "."):
                j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            lexeme = text[i:j]
            try:
                value = float(lexeme)
            except ValueError:
                raise ParseError("malformed number %r" % lexeme, i)
            tokens.append(("num", value, i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("name", text[i:j], i))
            i = j
            continue
        raise ParseError("unexpected character %r" % ch, i)
    tokens.append(("end", None, n))
    return tokens


class _Parser:
    def __init__(self, text, env):
        self.text = text
        self.env = env
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind):
        tok = self.advance()
        if tok[0] != kind:
            raise ParseError("expected %r" % kind, tok[2])
        return tok

    def parse(self):
        node = self.expression()
        tok = self.peek()
        if tok[0] != "end":
            raise ParseError("unexpected trailing input", tok[2])
        return node

    def expression(self):
        node = self.term()
        while self.peek()[0] in ("+", "-"):
            op = self.advance()[0]
            rhs = self.term()
            node = BinaryOp(op, node, rhs)
        return node

    def term(self):
        node = self.unary()
        while self.peek()[0] in ("*", "/"):
            op = self.advance()[0]
            rhs = self.unary()
            node = BinaryOp(op, node, rhs)
        return node

    def unary(self):
        if self.peek()[0] == "-":
            self.advance()
            return UnaryOp("neg", self.unary())
        if self.peek()[0] == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "^":
            self.advance()
            return BinaryOp("^", base, self.unary())
        return base

    def atom(self):
        tok = self.advance()
        kind, value, pos = tok
        if kind == "num":
            return Constant(value)
        if kind == "(":
            node = self.expression()
            self.expect(")")
            return node
        if kind == "name":
            if self.peek()[0] == "(":
                return self.call(value, pos)
            if value in self.env:
                bound = _wrap(self.env[value])
                if bound is None:
                    raise ParseError("name %r is not an expression" % value, pos)
                return bound
            if value in _CONSTANTS:
                return Constant(_CONSTANTS[value])
            raise ParseError("unknown name %r" % value, pos)
        raise ParseError("expected a value", pos)

    def call(self, fname, pos):
        self.expect("(")
        args = [self.expression()]
        while self.peek()[0] == ",":
            self.advance()
            args.append(self.expression())
        self.expect(")")
        if fname == "pow":
            if len(args) != 2:
                raise ParseError("pow takes two arguments", pos)
            return BinaryOp("^", args[0], args[1])
        if fname in _FUNCTIONS_1:
            if len(args) != 1:
                raise ParseError("%s takes one argument" % fname, pos)
            return UnaryOp(fname, args[0])
        raise ParseError("unknown function %r" % fname, pos)


def parse(text: str, env: Mapping[str, Expression] | None = None) -> Expression:
    """Parse arithmetic text into an expression graph.

    Identifiers resolve through ``env``; ``pi`` and ``e`` are built in unless
    shadowed.  Syntax and resolution errors raise :class:`ParseError` with
    the offending offset.
    """
    node = _Parser(text, env or {}).parse()
    if node.arity > MAX_ARITY:
        raise ValueError("composition exceeds %d free variables" % MAX_ARITY)
    return node


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 3}


def _fmt(node) -> tuple[str, int]:
    """Format a node, returning (text, precedence level)."""
    if isinstance(node, Constant):
        if isinstance(node.value, complex):
            raise TypeError("complex constants have no text form")
        text = repr(node.value)
        if node.value < 0:
            return text, 1
        return text, 9
    if isinstance(node, (Parameter, Variable)):
        return node.name, 9
    if isinstance(node, UnaryOp):
        inner, prec = _fmt(node._children[0])
        if node.op == "neg":
            if prec < 2:
                inner = "(%s)" % inner
            return "-%s" % inner, 1
        return "%s(%s)" % (node.op, inner), 9
    if isinstance(node, BinaryOp):
        op = node.op
        p = _PREC[op]
        left, lp = _fmt(node._children[0])
        right, rp = _fmt(node._children[1])
        if op == "^":
            if lp <= p:
                left = "(%s)" % left
            if rp < p:
                right = "(%s)" % right
            return "%s^%s" % (left, right), p
        if lp < p:
            left = "(%s)" % left
        if rp < p or (rp == p and op in ("-", "/")):
            right = "(%s)" % right
        if p == 1:
            return "%s %s %s" % (left, op, right), p
        return "%s%s%s" % (left, op, right), p
    raise TypeError("%s has no text form" % type(node).__name__)


def to_text(node: Expression) -> str:
    """Render an arithmetic expression back to parseable text.

    Only arithmetic nodes, parameters and variables have a text form;
    specialized nodes (integrals, reflectivity, form factors) raise
    ``TypeError``.
    """
    text, _ = _fmt(node)
    return text
