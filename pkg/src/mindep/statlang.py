"""A small expression language for canonical statistics.

Grammar (EBNF, version 1)::

    expr    = term { ("+" | "-") term } ;
    term    = unary { ("*" | "/") unary } ;
    unary   = "-" unary | power ;
    power   = atom [ "^" integer ] ;
    atom    = number | var | func "(" expr ")" | ind | "(" expr ")" ;
    ind     = "ind" "(" var "==" ( number | string ) ")" ;
    func    = "cos" | "sin" | "exp" | "log" | "abs" | "sqrt" ;
    var     = "x" integer ;                  (* 1-based column index *)
    string  = "'" chars "'" | '"' chars '"' ;

Precedence from tight to loose: ``^``, unary minus, ``* /``, ``+ -``.
Binary operators associate to the left. Exponents are non-negative integer
literals, so every statistic built from ``+ - * ^`` is a polynomial.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .core import CATEGORICAL, CIRCULAR, CONTINUOUS, COUNT, CanonicalStatistic, ColumnType
from .exceptions import MindepError, StatisticDomainError

GRAMMAR_VERSION = 1
FUNCTIONS = ("cos", "sin", "exp", "log", "abs", "sqrt")


class StatlangSyntaxError(MindepError, ValueError):
    """Parse or type error; ``offset`` is the byte offset into the source."""

    def __init__(self, message, offset=None, source=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} at byte {offset}"
        super().__init__(message)
        self.source = source


# --------------------------------------------------------------------------
# AST
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 0-based


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: int


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expr"


@dataclass(frozen=True)
class Ind:
    var: Var
    value: Union[float, str]


Expr = Union[Num, Var, Neg, BinOp, Pow, Call, Ind]


# --------------------------------------------------------------------------
# lexer / parser
# --------------------------------------------------------------------------

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<str>'[^']*'|"[^"]*")
  | (?P<op>==|[-+*/^(),])
""", re.VERBOSE)


def _tokenize(source: str):
    pos = 0
    out = []
    while pos < len(source):
        m = _TOKEN.match(source, pos)
        if m is None:
            raise StatlangSyntaxError(f"unexpected character {source[pos]!r}",
                                      len(source[:pos].encode()), source)
        kind = m.lastgroup
        if kind != "ws":
            out.append((kind, m.group(), len(source[:pos].encode())))
        pos = m.end()
    out.append(("end", "", len(source.encode())))
    return out


class _Parser:
    def __init__(self, source, d):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0
        self.d = d

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, msg, tok=None):
        tok = tok or self.peek()
        return StatlangSyntaxError(msg, tok[2], self.source)

    def expect(self, text):
        tok = self.next()
        if tok[1] != text:
            found = tok[1] or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}", tok)
        return tok

    def parse(self):
        if self.peek()[0] == "end":
            raise self.error("empty expression")
        node = self.expr()
        if self.peek()[0] != "end":
            raise self.error(f"unexpected {self.peek()[1]!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.next()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.next()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[1] == "-":
            self.next()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^":
            self.next()
            tok = self.next()
            if tok[0] != "num" or not re.fullmatch(r"\d+", tok[1]):
                raise self.error("exponent must be a non-negative integer literal", tok)
            base = Pow(base, int(tok[1]))
            if self.peek()[1] == "^":
                raise self.error("chained exponents need parentheses")
        return base

    def var(self, tok):
        m = re.fullmatch(r"x(\d+)", tok[1])
        if not m:
            raise self.error(f"unknown name {tok[1]!r}", tok)
        idx = int(m.group(1))
        if idx < 1 or (self.d is not None and idx > self.d):
            raise self.error(f"variable {tok[1]} out of range for d={self.d}", tok)
        return Var(idx - 1)

    def atom(self):
        tok = self.next()
        kind, text, _ = tok
        if kind == "num":
            return Num(float(text))
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "name":
            if text == "ind":
                self.expect("(")
                v = self.var(self.next())
                self.expect("==")
                lit = self.next()
                if lit[0] == "num":
                    value = float(lit[1])
                elif lit[0] == "str":
                    value = lit[1][1:-1]
                else:
                    raise self.error("ind() compares against a number or a quoted level", lit)
                self.expect(")")
                return Ind(v, value)
            if text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(text, arg)
            if self.peek()[1] == "(":
                raise self.error(f"unknown function {text!r}", tok)
            return self.var(tok)
        raise self.error(f"unexpected {text or 'end of input'!r}", tok)


def parse(source: str, d: int | None = None) -> Expr:
    """Parse ``source`` into an expression tree; ``d`` bounds variable indices."""
    return _Parser(source, d).parse()


# --------------------------------------------------------------------------
# printer
# --------------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _fmt_num(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def to_source(node: Expr, _parent: int = 0) -> str:
    """Canonical text of ``node``; ``parse(to_source(e)) == e``."""
    if isinstance(node, Num):
        return _fmt_num(node.value)
    if isinstance(node, Var):
        return f"x{node.index + 1}"
    if isinstance(node, Ind):
        v = node.value
        lit = f"'{v}'" if isinstance(v, str) else _fmt_num(v)
        return f"ind(x{node.var.index + 1} == {lit})"
    if isinstance(node, Call):
        return f"{node.func}({to_source(node.arg)})"
    if isinstance(node, Pow):
        s = f"{to_source(node.base, 4)}^{node.exponent}"
        return f"({s})" if _parent > 3 else s
    if isinstance(node, Neg):
        s = "-" + to_source(node.operand, 3)
        return f"({s})" if _parent > 3 else s
    if isinstance(node, BinOp):
        p = _PREC[node.op]
        s = f"{to_source(node.left, p)} {node.op} {to_source(node.right, p + 1)}"
        return f"({s})" if _parent > p else s
    raise TypeError(node)


# --------------------------------------------------------------------------
# type checking
# --------------------------------------------------------------------------

def _vars(node):
    """Variables used arithmetically (ind() arguments excluded)."""
    if isinstance(node, Var):
        yield node
    for child in _children(node):
        yield from _vars(child)


def _check(node, types: Sequence[ColumnType], src: str):
    def fail(msg):
        raise StatlangSyntaxError(f"{msg} in {src!r}")

    def visit(n):
        if isinstance(n, Var):
            if n.index >= len(types):
                fail(f"variable x{n.index + 1} out of range for d={len(types)}")
            ct = types[n.index]
            if ct.kind == CATEGORICAL and not ct.quantify:
                fail(f"categorical x{n.index + 1} may only appear inside ind()")
        elif isinstance(n, Ind):
            if n.var.index >= len(types):
                fail(f"variable x{n.var.index + 1} out of range for d={len(types)}")
            ct = types[n.var.index]
            if ct.kind == CATEGORICAL:
                if isinstance(n.value, str) and n.value not in ct.levels:
                    fail(f"{n.value!r} is not a level of x{n.var.index + 1}")
            elif ct.kind == COUNT:
                if isinstance(n.value, str):
                    fail(f"count column x{n.var.index + 1} compared with a label")
            else:
                fail(f"ind() needs a categorical or count column, x{n.var.index + 1} is {ct.kind}")
        elif isinstance(n, Call):
            if n.func in ("cos", "sin"):
                for v in _vars(n.arg):
                    if v.index < len(types) and types[v.index].kind not in (CIRCULAR, CONTINUOUS):
                        fail(f"{n.func}() needs circular or continuous columns, "
                             f"x{v.index + 1} is {types[v.index].kind}")
            visit(n.arg)
        elif isinstance(n, Neg):
            visit(n.operand)
        elif isinstance(n, BinOp):
            visit(n.left)
            visit(n.right)
        elif isinstance(n, Pow):
            visit(n.base)

    visit(node)


def _ind_value(node: Ind, types) -> float:
    if isinstance(node.value, str):
        return float(types[node.var.index].level_index(node.value))
    return float(node.value)


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------

def _ipow(a, k):
    if k == 0:
        return np.ones_like(a)
    out = a
    for _ in range(k - 1):
        out = out * a
    return out


def _log(a):
    if np.any(a <= 0):
        raise StatisticDomainError("log of a non-positive argument")
    return np.log(a)


_UFUNC = {"cos": np.cos, "sin": np.sin, "exp": np.exp, "log": _log,
          "abs": np.abs, "sqrt": np.sqrt}


def interpret(node: Expr, X: np.ndarray, types=None) -> np.ndarray:
    """Evaluate ``node`` by walking the tree; ``X`` has shape (m, d)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return _interp(node, X, types)


def _interp(n, X, types):
    if isinstance(n, Num):
        return np.full(X.shape[0], n.value)
    if isinstance(n, Var):
        return X[:, n.index]
    if isinstance(n, Neg):
        return -_interp(n.operand, X, types)
    if isinstance(n, BinOp):
        a, b = _interp(n.left, X, types), _interp(n.right, X, types)
        if n.op == "+":
            return a + b
        if n.op == "-":
            return a - b
        if n.op == "*":
            return a * b
        return a / b
    if isinstance(n, Pow):
        return _ipow(_interp(n.base, X, types), n.exponent)
    if isinstance(n, Call):
        return _UFUNC[n.func](_interp(n.arg, X, types))
    if isinstance(n, Ind):
        value = _ind_value(n, types) if types is not None else float(n.value)
        return (X[:, n.var.index] == value).astype(float)
    raise TypeError(n)


def _codegen(n, types, scalar: bool) -> str:
    """Python source for ``n``; ``scalar`` selects the numba row form."""
    g = lambda m: _codegen(m, types, scalar)  # noqa: E731
    if isinstance(n, Num):
        return repr(n.value) if scalar else f"_full(X.shape[0], {n.value!r})"
    if isinstance(n, Var):
        return f"x[{n.index}]" if scalar else f"X[:, {n.index}]"
    if isinstance(n, Neg):
        return f"(-{g(n.operand)})"
    if isinstance(n, BinOp):
        return f"({g(n.left)} {n.op} {g(n.right)})"
    if isinstance(n, Pow):
        if scalar:
            if n.exponent == 0:
                return "1.0"
            return "(" + " * ".join([g(n.base)] * n.exponent) + ")"
        return f"_ipow({g(n.base)}, {n.exponent})"
    if isinstance(n, Call):
        return f"_{n.func}({g(n.arg)})"
    if isinstance(n, Ind):
        value = _ind_value(n, types)
        if scalar:
            return f"(1.0 if x[{n.var.index}] == {value!r} else 0.0)"
        return f"(X[:, {n.var.index}] == {value!r}).astype(float)"
    raise TypeError(n)


def _compile_numpy(exprs, types):
    body = ", ".join(_codegen(e, types, scalar=False) for e in exprs)
    src = ("def _h(X):\n"
           "    with _errstate(divide='ignore', invalid='ignore', over='ignore'):\n"
           f"        return _stack([{body}], axis=1)\n")
    ns = {"_full": np.full, "_ipow": _ipow, "_stack": np.stack, "_errstate": np.errstate,
          "_cos": np.cos, "_sin": np.sin, "_exp": np.exp, "_log": _log, "_abs": np.abs,
          "_sqrt": np.sqrt}
    exec(compile(src, "<statlang>", "exec"), ns)
    return ns["_h"], src


_KERNEL_CACHE: dict = {}


def _compile_kernel(exprs, types):
    """Return a numba row kernel ``k(x, out)``; cached by generated source."""
    lines = ["def _k(x, out):"]
    for k, e in enumerate(exprs):
        lines.append(f"    out[{k}] = {_codegen(e, types, scalar=True)}")
    src = "\n".join(lines) + "\n"
    if src in _KERNEL_CACHE:
        return _KERNEL_CACHE[src]
    import numba

    @numba.njit(cache=False)
    def _nb_log(a):
        if a <= 0.0:
            raise ValueError("log of a non-positive argument")
        return math.log(a)

    ns = {"_cos": math.cos, "_sin": math.sin, "_exp": math.exp, "_log": _nb_log,
          "_abs": abs, "_sqrt": math.sqrt}
    exec(compile(src, "<statlang-kernel>", "exec"), ns)
    kern = numba.njit(cache=False, nogil=True)(ns["_k"])
    _KERNEL_CACHE[src] = kern
    return kern


class CompiledStatistic(CanonicalStatistic):
    """Canonical statistic compiled from statlang expressions.

    The numba row kernel is built lazily on first access of ``kernel``.
    """

    def __init__(self, exprs, types):
        self.types = tuple(types)
        func, self.source = _compile_numpy(exprs, self.types)
        super().__init__(func, len(exprs), vectorized=True,
                         names=[to_source(e) for e in exprs], exprs=tuple(exprs),
                         d=len(self.types))
        self._kernel = None

    @property
    def kernel(self):
        if self._kernel is None:
            self._kernel = _compile_kernel(self.exprs, self.types)
        return self._kernel

    @kernel.setter
    def kernel(self, value):
        self._kernel = value

    def interpret(self, X) -> np.ndarray:
        """Tree-walking reference evaluation, shape (m, K)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.stack([interpret(e, X, self.types) for e in self.exprs], axis=1)


def compile_statistic(exprs, types: Sequence[ColumnType]) -> CompiledStatistic:
    """Type-check ``exprs`` against ``types`` and compile them.

    ``exprs`` may mix parsed trees and source strings.
    """
    types = list(types)
    if not exprs:
        raise StatlangSyntaxError("at least one expression is required")
    trees = []
    for e in exprs:
        tree = parse(e, len(types)) if isinstance(e, str) else e
        _check(tree, types, to_source(tree))
        trees.append(tree)
    return CompiledStatistic(trees, types)


def statistic(sources: Sequence[str] | str, types=None, d=None) -> CompiledStatistic:
    """Shorthand: parse and compile; ``types`` default to ``d`` continuous columns."""
    if isinstance(sources, str):
        sources = [sources]
    if types is None:
        if d is None:
            d = max((v.index + 1 for s in sources for v in _all_vars(parse(s))), default=1)
        types = [ColumnType.continuous()] * d
    return compile_statistic(list(sources), types)


def _all_vars(node):
    """Every variable referenced by ``node``, including those inside ind()."""
    if isinstance(node, Var):
        yield node
    elif isinstance(node, Ind):
        yield node.var
    for child in _children(node):
        yield from _all_vars(child)


def _children(node):
    if isinstance(node, Neg):
        return [node.operand]
    if isinstance(node, BinOp):
        return [node.left, node.right]
    if isinstance(node, Pow):
        return [node.base]
    if isinstance(node, Call):
        return [node.arg]
    return []
