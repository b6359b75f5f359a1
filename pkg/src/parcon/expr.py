"""Coefficient-function mini-language.

A descriptor is a finite sum of terms ``coef * space_factor * time_factor``.
Space factors are normalized sine modes ``sin(k)`` (``sqrt(2/L) sin(k pi x/L)``),
polynomials ``poly(a1, ..., an)`` (``sum_j a_j x**j``, no constant part) and
tabulated node values ``table(...)``.  Time factors are powers ``t^n``,
``exp(a)`` (meaning ``a * e**t``) and ``piecewise{[t0, t1): expr; ...}``.
Plain numbers, ``pi``, ``log(c)`` and ``sqrt(c)`` fold into coefficients.

>>> fd = parse_function("poly(1,-1)*2")
>>> float(evaluate(fd, 0.5))
0.5
>>> parse_function(render(fd)) == fd
True
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import NotDifferentiable, OutOfDomain, ParseError

_DOMAIN_SLACK = 1e-12


@dataclass(frozen=True)
class Sine:
    k: int


@dataclass(frozen=True)
class Poly:
    coeffs: tuple  # coeffs[j] multiplies x**(j+1)


@dataclass(frozen=True)
class Table:
    """Node values on the uniform grid of [0, L] (rows over [0, T] if 2-D)."""

    rows: tuple  # tuple of tuples; one row is a space-only table

    @property
    def time_dependent(self):
        return len(self.rows) > 1

    def array(self):
        return np.asarray(self.rows, dtype=float)


@dataclass(frozen=True)
class TPow:
    n: int


@dataclass(frozen=True)
class ExpT:
    pass


@dataclass(frozen=True)
class Piecewise:
    breakpoints: tuple
    pieces: tuple  # FunctionDescriptor per interval, time-only

    def __post_init__(self):
        if len(self.breakpoints) != len(self.pieces) + 1:
            raise ValueError("piecewise needs one more breakpoint than pieces")


SpaceAtom = Union[Sine, Poly, Table]
TimeAtom = Union[TPow, ExpT, Piecewise]


@dataclass(frozen=True)
class Term:
    coef: float
    space: Optional[SpaceAtom] = None
    time: Optional[TimeAtom] = None


@dataclass(frozen=True)
class FunctionDescriptor:
    terms: tuple = ()

    @property
    def kind(self):
        spaces = [t.space for t in self.terms if t.space is not None]
        if not spaces:
            return "constant"
        if any(isinstance(s, Table) for s in spaces):
            return "tabulated"
        if all(isinstance(s, Sine) for s in spaces):
            return "sine-series"
        if all(isinstance(s, Poly) for s in spaces):
            return "polynomial"
        return "mixed"

    @property
    def time_dependent(self):
        return any(
            t.time is not None or (isinstance(t.space, Table) and t.space.time_dependent)
            for t in self.terms
        )

    @property
    def space_dependent(self):
        return any(t.space is not None for t in self.terms)

    @property
    def tables(self):
        return [t.space for t in self.terms if isinstance(t.space, Table)]

    @property
    def breakpoints(self):
        out = set()
        for t in self.terms:
            if isinstance(t.time, Piecewise):
                out.update(t.time.breakpoints)
        return tuple(sorted(out))

    def __str__(self):
        return render(self)


def constant(value):
    return _normalize([Term(float(value))])


def sine(k, coef=1.0):
    return _normalize([Term(float(coef), Sine(int(k)))])


# ---------------------------------------------------------------- normalization

def _key(term):
    if isinstance(term.space, Poly):
        return ("poly", term.time)
    return (term.space, term.time)


def _normalize(terms):
    merged = {}
    order = []
    for term in terms:
        if isinstance(term.space, Poly):
            coeffs = np.asarray(term.space.coeffs, dtype=float) * term.coef
            term = Term(1.0, Poly(tuple(coeffs)), term.time)
        k = _key(term)
        if k not in merged:
            merged[k] = term
            order.append(k)
            continue
        old = merged[k]
        if isinstance(term.space, Poly):
            a, b = old.space.coeffs, term.space.coeffs
            n = max(len(a), len(b))
            c = [(a[i] if i < len(a) else 0.0) + (b[i] if i < len(b) else 0.0) for i in range(n)]
            merged[k] = Term(1.0, Poly(tuple(c)), term.time)
        else:
            merged[k] = Term(old.coef + term.coef, old.space, old.time)
    out = []
    for k in order:
        term = merged[k]
        if isinstance(term.space, Poly):
            c = list(term.space.coeffs)
            while c and c[-1] == 0.0:
                c.pop()
            if not c:
                continue
            term = Term(1.0, Poly(tuple(float(v) for v in c)), term.time)
        elif term.coef == 0.0:
            continue
        out.append(Term(float(term.coef), term.space, term.time))
    return FunctionDescriptor(tuple(out))


# ---------------------------------------------------------------- rendering

def _fmt(v):
    return repr(float(v))


def _render_space(s):
    if isinstance(s, Sine):
        return f"sin({s.k})"
    if isinstance(s, Poly):
        return "poly(" + ", ".join(_fmt(c) for c in s.coeffs) + ")"
    rows = [", ".join(_fmt(v) for v in row) for row in s.rows]
    return "table(" + "; ".join(rows) + ")"


def _render_time(tm):
    if isinstance(tm, TPow):
        return f"t^{tm.n}"
    parts = []
    bps = tm.breakpoints
    for j, piece in enumerate(tm.pieces):
        close = "]" if j == len(tm.pieces) - 1 else ")"
        parts.append(f"[{_fmt(bps[j])}, {_fmt(bps[j + 1])}{close}: {render(piece)}")
    return "piecewise{" + "; ".join(parts) + "}"


def _render_term(term):
    if isinstance(term.time, ExpT):
        head = f"exp({_fmt(term.coef)})"
        return head if term.space is None else f"{head}*{_render_space(term.space)}"
    factors = []
    if not (isinstance(term.space, Poly) and term.time is None):
        factors.append(_fmt(term.coef))
    if term.space is not None:
        factors.append(_render_space(term.space))
    if term.time is not None:
        factors.append(_render_time(term.time))
    return "*".join(factors)


def render(fd):
    """Canonical text of a descriptor; ``parse_function(render(fd)) == fd``."""
    if not fd.terms:
        return "0.0"
    return " + ".join(_render_term(t) for t in fd.terms)


# ---------------------------------------------------------------- parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),;{}\[\]:]))"
)
_FUNCS = {"sin", "poly", "exp", "log", "sqrt", "piecewise", "table"}
_NAMES = _FUNCS | {"pi", "t", "x"}
_ATOM_START = ("number", "pi", "t", "x", "sin", "poly", "exp", "log", "sqrt", "piecewise", "table", "(", "-", "+")


class _Tokens:
    def __init__(self, text):
        self.text = text
        self.items = []
        pos = 0
        while True:
            m = _TOKEN.match(text, pos)
            if not m or m.end() == pos:
                rest = text[pos:]
                if rest.strip():
                    off = pos + len(rest) - len(rest.lstrip())
                    raise ParseError(f"unexpected character {text[off]!r}", self._byte(off), _ATOM_START)
                break
            start = m.start(m.lastgroup)
            if m.lastgroup == "num":
                self.items.append(("number", m.group("num"), start))
            elif m.lastgroup == "name":
                self.items.append(("name", m.group("name"), start))
            else:
                self.items.append((m.group("op"), m.group("op"), start))
            pos = m.end()
        self.items.append(("end", "", len(text)))
        self.i = 0

    def _byte(self, off):
        return len(self.text[:off].encode("utf-8"))

    def peek(self):
        return self.items[self.i]

    def next(self):
        tok = self.items[self.i]
        self.i += 1
        return tok

    def error(self, message, expected):
        kind, val, off = self.peek()
        shown = val if kind != "end" else "end of input"
        raise ParseError(f"{message}, got {shown!r}", self._byte(off), expected)

    def expect(self, kind, what=None):
        if self.peek()[0] != kind:
            self.error(f"expected {what or kind!r}", (kind,))
        return self.next()


def _mul(a, b, tokens, off):
    out = []
    for x in a:
        for y in b:
            coef = x.coef * y.coef
            if x.space is not None and y.space is not None:
                if isinstance(x.space, Poly) and isinstance(y.space, Poly):
                    px = np.concatenate([[0.0], x.space.coeffs])
                    py = np.concatenate([[0.0], y.space.coeffs])
                    prod = np.convolve(px, py)[1:]
                    space = Poly(tuple(float(v) for v in prod))
                else:
                    raise ParseError("product of two spatial factors is not representable",
                                     tokens._byte(off), ("+", "-"))
            else:
                space = x.space if x.space is not None else y.space
            if x.time is not None and y.time is not None:
                if isinstance(x.time, TPow) and isinstance(y.time, TPow):
                    tm = TPow(x.time.n + y.time.n)
                else:
                    raise ParseError("product of two time factors is not representable",
                                     tokens._byte(off), ("+", "-"))
            else:
                tm = x.time if x.time is not None else y.time
            if isinstance(tm, TPow) and tm.n == 0:
                tm = None
            out.append(Term(coef, space, tm))
    return out


def _const_value(terms):
    if any(t.space is not None or t.time is not None for t in terms):
        return None
    return float(sum(t.coef for t in terms))


class _Parser:
    def __init__(self, text):
        self.tok = _Tokens(text)

    def parse(self):
        terms = self.expr()
        if self.tok.peek()[0] != "end":
            self.tok.error("trailing input", ("+", "-", "*", "/", "^", "end"))
        return terms

    def expr(self):
        terms = list(self.term())
        while self.tok.peek()[0] in ("+", "-"):
            op = self.tok.next()[0]
            rhs = self.term()
            if op == "-":
                rhs = [Term(-t.coef, t.space, t.time) for t in rhs]
            terms.extend(rhs)
        return terms

    def term(self):
        terms = self.signed()
        while self.tok.peek()[0] in ("*", "/"):
            op, _, off = self.tok.next()
            rhs = self.signed()
            if op == "/":
                c = _const_value(rhs)
                if c is None:
                    raise ParseError("divisor must be a constant", self.tok._byte(off), ("number",))
                if c == 0.0:
                    raise ParseError("division by zero", self.tok._byte(off), ("number",))
                rhs = [Term(1.0 / c)]
            terms = _mul(terms, rhs, self.tok, off)
        return terms

    def signed(self):
        kind = self.tok.peek()[0]
        if kind in ("-", "+"):
            self.tok.next()
            inner = self.signed()
            if kind == "-":
                inner = [Term(-t.coef, t.space, t.time) for t in inner]
            return inner
        return self.power()

    def power(self):
        base = self.atom()
        if self.tok.peek()[0] == "^":
            _, _, off = self.tok.next()
            kind, val, voff = self.tok.peek()
            if kind != "number" or not val.isdigit():
                self.tok.error("exponent must be a nonnegative integer", ("integer",))
            self.tok.next()
            n = int(val)
            c = _const_value(base)
            if c is not None:
                return [Term(c ** n)]
            out = [Term(1.0)]
            for _ in range(n):
                out = _mul(out, base, self.tok, off)
            return out
        return base

    def cexpr(self):
        _, _, off = self.tok.peek()
        terms = self.expr()
        c = _const_value(terms)
        if c is None:
            raise ParseError("expected a constant expression", self.tok._byte(off), ("number", "pi"))
        return c

    def atom(self):
        kind, val, off = self.tok.peek()
        if kind == "number":
            self.tok.next()
            return [Term(float(val))]
        if kind == "(":
            self.tok.next()
            inner = self.expr()
            self.tok.expect(")")
            return inner
        if kind != "name" or val not in _NAMES:
            self.tok.error("expected a term", _ATOM_START)
        self.tok.next()
        if val == "pi":
            return [Term(math.pi)]
        if val == "t":
            return [Term(1.0, None, TPow(1))]
        if val == "x":
            return [Term(1.0, Poly((1.0,)))]
        if val == "piecewise":
            return self.piecewise()
        self.tok.expect("(")
        if val == "sin":
            kind, num, noff = self.tok.peek()
            if kind != "number" or not num.isdigit() or int(num) < 1:
                self.tok.error("sine mode must be an integer >= 1", ("integer",))
            self.tok.next()
            out = [Term(1.0, Sine(int(num)))]
        elif val == "poly":
            coeffs = [self.cexpr()]
            while self.tok.peek()[0] == ",":
                self.tok.next()
                coeffs.append(self.cexpr())
            out = [Term(1.0, Poly(tuple(coeffs)))]
        elif val == "table":
            out = [Term(1.0, self.table())]
        else:
            c = self.cexpr()
            if val == "exp":
                out = [Term(c, None, ExpT())]
            elif val == "log":
                if c <= 0:
                    raise ParseError("log of a nonpositive constant", self.tok._byte(off), ("number",))
                out = [Term(math.log(c))]
            else:
                if c < 0:
                    raise ParseError("sqrt of a negative constant", self.tok._byte(off), ("number",))
                out = [Term(math.sqrt(c))]
        self.tok.expect(")")
        return out

    def table(self):
        rows = [[self.cexpr()]]
        while self.tok.peek()[0] in (",", ";"):
            sep = self.tok.next()[0]
            if sep == ";":
                rows.append([])
            rows[-1].append(self.cexpr())
        widths = {len(r) for r in rows}
        if len(widths) != 1:
            self.tok.error("table rows must have equal length", (")",))
        if len(rows[0]) < 2:
            self.tok.error("a table needs at least two nodes", (",",))
        return Table(tuple(tuple(r) for r in rows))

    def piecewise(self):
        self.tok.expect("{")
        bps, pieces = [], []
        while True:
            _, _, off = self.tok.peek()
            self.tok.expect("[")
            t0 = self.cexpr()
            self.tok.expect(",")
            t1 = self.cexpr()
            kind = self.tok.peek()[0]
            if kind not in (")", "]"):
                self.tok.error("expected interval close", (")", "]"))
            self.tok.next()
            self.tok.expect(":")
            body = self.expr()
            if any(t.space is not None or isinstance(t.time, Piecewise) for t in body):
                raise ParseError("piecewise pieces must be functions of t only",
                                 self.tok._byte(off), ("number", "t", "exp"))
            if not t1 > t0:
                raise ParseError("piecewise interval must be nonempty", self.tok._byte(off), ("number",))
            if bps and t0 != bps[-1]:
                raise ParseError("piecewise intervals must be contiguous", self.tok._byte(off), ("number",))
            if not bps:
                bps.append(t0)
            bps.append(t1)
            pieces.append(_normalize(body))
            if self.tok.peek()[0] == ";":
                self.tok.next()
                if self.tok.peek()[0] == "}":
                    break
                continue
            break
        self.tok.expect("}")
        return [Term(1.0, None, Piecewise(tuple(bps), tuple(pieces)))]


def parse_function(text):
    """Parse ``text`` into a normalized :class:`FunctionDescriptor`.

    Raises
    ------
    ParseError
        With the byte offset of the failure and the set of acceptable tokens.
    """
    return _normalize(_Parser(text).parse())


def parse_constant(text):
    """Parse a constant expression such as ``pi^2 + 1``."""
    fd = parse_function(text)
    if fd.space_dependent or fd.time_dependent:
        raise ParseError("expected a constant expression", 0, ("number", "pi"))
    return float(sum(t.coef for t in fd.terms))


# ---------------------------------------------------------------- evaluation

def _interp_table(table, x, t, L, T):
    vals = table.array()
    nx = vals.shape[1]
    xs = np.linspace(0.0, L, nx)
    if vals.shape[0] == 1:
        return np.interp(x, xs, vals[0])
    if T is None:
        raise OutOfDomain("space-time table evaluated without a horizon T")
    ts = np.linspace(0.0, T, vals.shape[0])
    x, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
    # bilinear on the uniform node lattice
    fx = np.clip(x / L * (nx - 1), 0, nx - 1)
    ft = np.clip(t / T * (len(ts) - 1), 0, len(ts) - 1)
    i0 = np.minimum(np.floor(fx).astype(int), nx - 2)
    j0 = np.minimum(np.floor(ft).astype(int), len(ts) - 2)
    wx = fx - i0
    wt = ft - j0
    v00 = vals[j0, i0]
    v01 = vals[j0, i0 + 1]
    v10 = vals[j0 + 1, i0]
    v11 = vals[j0 + 1, i0 + 1]
    return (1 - wt) * ((1 - wx) * v00 + wx * v01) + wt * ((1 - wx) * v10 + wx * v11)


def _space_value(s, x, t, L, T, order=0):
    x = np.asarray(x, dtype=float)
    if s is None:
        return np.ones_like(x) if order == 0 else np.zeros_like(x)
    if isinstance(s, Sine):
        w = s.k * math.pi / L
        amp = math.sqrt(2.0 / L)
        if order == 0:
            return amp * np.sin(w * x)
        if order == 1:
            return amp * w * np.cos(w * x)
        return -amp * w * w * np.sin(w * x)
    if isinstance(s, Poly):
        full = np.concatenate([[0.0], s.coeffs])
        p = np.polynomial.polynomial.Polynomial(full)
        if order:
            p = p.deriv(order)
        return p(x)
    if order:
        raise NotDifferentiable("tabulated descriptors have no analytic derivative")
    return _interp_table(s, x, t, L, T)


def _time_value(tm, t):
    t = np.asarray(t, dtype=float)
    if tm is None:
        return np.ones_like(t)
    if isinstance(tm, TPow):
        return t ** tm.n
    if isinstance(tm, ExpT):
        return np.exp(t)
    bps = np.asarray(tm.breakpoints)
    lo, hi = bps[0], bps[-1]
    if np.any(t < lo - _DOMAIN_SLACK) or np.any(t > hi + _DOMAIN_SLACK):
        raise OutOfDomain(f"t outside piecewise range [{lo}, {hi}]")
    idx = np.clip(np.searchsorted(bps, t, side="right") - 1, 0, len(tm.pieces) - 1)
    out = np.zeros_like(t)
    for j, piece in enumerate(tm.pieces):
        mask = idx == j
        if np.any(mask):
            out = np.where(mask, evaluate(piece, 0.0, t), out)
    return out


def evaluate(fd, x, t=None, L=1.0, T=None, order=0):
    """Vectorized evaluation of ``fd`` (or its ``order``-th x-derivative).

    ``x`` and ``t`` broadcast against each other.  ``t`` may be omitted for
    time-independent descriptors.
    """
    if fd.time_dependent and t is None:
        raise OutOfDomain("time-dependent descriptor evaluated without t")
    x = np.asarray(x, dtype=float)
    tt = np.asarray(0.0 if t is None else t, dtype=float)
    shape = np.broadcast_shapes(x.shape, tt.shape)
    total = np.zeros(shape)
    for term in fd.terms:
        sv = _space_value(term.space, x, tt, L, T, order)
        if order and term.space is None:
            continue
        total = total + term.coef * sv * _time_value(term.time, tt)
    return total


def eval_function(fd, x, t=None, L=1.0, T=None):
    """Scalar evaluation with domain checks (``x`` in [0, L], ``t`` in [0, T])."""
    if x < -_DOMAIN_SLACK or x > L + _DOMAIN_SLACK:
        raise OutOfDomain(f"x = {x} outside [0, {L}]")
    if t is not None and T is not None and (t < -_DOMAIN_SLACK or t > T + _DOMAIN_SLACK):
        raise OutOfDomain(f"t = {t} outside [0, {T}]")
    return float(evaluate(fd, x, t, L=L, T=T))


def differentiable(fd):
    return not any(isinstance(t.space, Table) for t in fd.terms)


def laplacian_descriptor(fd, L=1.0):
    """Exact second x-derivative when it stays inside the grammar, else None.

    Sine modes map to multiples of themselves and polynomials to polynomials;
    tabulated factors return None.
    """
    out = []
    for term in fd.terms:
        s = term.space
        if s is None:
            continue
        if isinstance(s, Sine):
            w = s.k * math.pi / L
            out.append(Term(-w * w * term.coef, s, term.time))
        elif isinstance(s, Poly):
            full = np.polynomial.polynomial.Polynomial(np.concatenate([[0.0], s.coeffs])).deriv(2).coef
            out.append(Term(term.coef * float(full[0]), None, term.time))
            if len(full) > 1:
                out.append(Term(term.coef, Poly(tuple(full[1:])), term.time))
        else:
            return None
    return _normalize(out)
