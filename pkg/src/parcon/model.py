"""Problem description, space-time grid and validation.

Fields on the grid are plain ``(n_t + 1, n_x)`` arrays of interior-node
values; the Dirichlet boundary values are identically zero and never stored.
Controls are ``(m, n_t)`` arrays, one value per time step.
"""

from __future__ import annotations

import configparser
import functools
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import expr
from .errors import (
    BoundaryViolation,
    BoundOrder,
    DimensionMismatch,
    GridMismatch,
    NegativeGamma,
    ParseError,
    SchemaError,
    ValidationError,
)
from .expr import FunctionDescriptor, parse_constant, parse_function, render

BOUNDARY_TOL = 1e-12


@dataclass(frozen=True)
class SpaceTimeGrid:
    n_x: int
    n_t: int
    L: float = 1.0
    T: float = 1.0

    def __post_init__(self):
        if self.n_x < 3 or self.n_t < 2:
            raise ValidationError(f"grid too coarse: n_x={self.n_x} (>=3), n_t={self.n_t} (>=2)")
        if not (self.L > 0 and self.T > 0):
            raise ValidationError("grid needs L > 0 and T > 0")

    @property
    def h(self):
        return self.L / (self.n_x + 1)

    @property
    def dt(self):
        return self.T / self.n_t

    @property
    def x(self):
        """Interior node coordinates."""
        return self.h * np.arange(1, self.n_x + 1)

    @property
    def x_full(self):
        return np.linspace(0.0, self.L, self.n_x + 2)

    @property
    def t(self):
        return np.linspace(0.0, self.T, self.n_t + 1)

    @property
    def t_mid(self):
        return (np.arange(self.n_t) + 0.5) * self.dt

    @property
    def field_shape(self):
        return (self.n_t + 1, self.n_x)

    def node_weights(self):
        """Trapezoid weights in time for the ``n_t + 1`` nodes."""
        w = np.full(self.n_t + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w

    def check_field(self, values, name="field"):
        values = np.asarray(values, dtype=float)
        if values.shape != self.field_shape:
            raise GridMismatch(f"{name} has shape {values.shape}, grid expects {self.field_shape}")
        return values

    def check_control(self, u, m, name="control"):
        u = np.asarray(u, dtype=float)
        if u.ndim == 1 and m == 1:
            u = u[None, :]
        if u.shape != (m, self.n_t):
            raise GridMismatch(f"{name} has shape {u.shape}, expected {(m, self.n_t)}")
        return u


@dataclass(frozen=True)
class ProblemSpec:
    """An instance of the state-constrained bilinear heat control problem.

    ``b`` holds ``m + 1`` spatial coefficients; ``b[0]`` multiplies the
    fixed control ``u_0 = 1``.
    """

    L: float
    T: float
    gamma: float
    b: tuple
    f: FunctionDescriptor
    y0: FunctionDescriptor
    yd: FunctionDescriptor
    ydT: FunctionDescriptor
    alpha: tuple
    c: tuple
    d: tuple
    u_lo: tuple
    u_hi: tuple
    validated: bool = field(default=False, compare=False)

    @property
    def m(self):
        return len(self.b) - 1

    @property
    def q(self):
        return len(self.c)

    def grid(self, n_x, n_t):
        return SpaceTimeGrid(int(n_x), int(n_t), self.L, self.T)

    # -- sampling on a grid ------------------------------------------------

    def space_values(self, fd, grid, order=0):
        return expr.evaluate(fd, grid.x, None, L=self.L, T=self.T, order=order)

    def b_nodes(self, grid):
        return np.stack([np.broadcast_to(self.space_values(bi, grid), (grid.n_x,)) for bi in self.b])

    def c_nodes(self, grid):
        if not self.c:
            return np.zeros((0, grid.n_x))
        return np.stack([np.broadcast_to(self.space_values(cj, grid), (grid.n_x,)) for cj in self.c])

    def spacetime_values(self, fd, grid, times):
        times = np.asarray(times, dtype=float)
        if not fd.time_dependent:
            row = self.space_values(fd, grid)
            return np.broadcast_to(row, (times.size, grid.n_x)).copy()
        return expr.evaluate(fd, grid.x[None, :], times[:, None], L=self.L, T=self.T)

    def control_bounds(self, grid):
        lo = np.broadcast_to(np.asarray(self.u_lo, float)[:, None], (self.m, grid.n_t))
        hi = np.broadcast_to(np.asarray(self.u_hi, float)[:, None], (self.m, grid.n_t))
        return lo, hi

    def midpoint_control(self, grid):
        lo, hi = self.control_bounds(grid)
        return 0.5 * (lo + hi)


@dataclass(frozen=True, eq=False)
class Sampled:
    """Grid samples of the problem data, shared read-only between solves."""

    b: np.ndarray
    c: np.ndarray
    f: np.ndarray
    y0: np.ndarray
    yd_mid: np.ndarray
    ydT: np.ndarray


def _readonly(a):
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@functools.lru_cache(maxsize=32)
def sampled(spec, grid):
    """Sample every coefficient of ``spec`` on ``grid`` once and cache it."""
    f = (np.zeros(grid.field_shape) if not spec.f.terms
         else spec.spacetime_values(spec.f, grid, grid.t))
    return Sampled(
        b=_readonly(spec.b_nodes(grid)), c=_readonly(spec.c_nodes(grid)), f=_readonly(f),
        y0=_readonly(np.broadcast_to(spec.space_values(spec.y0, grid), (grid.n_x,))),
        yd_mid=_readonly(spec.spacetime_values(spec.yd, grid, grid.t_mid)),
        ydT=_readonly(np.broadcast_to(spec.space_values(spec.ydT, grid), (grid.n_x,))),
    )


def _check_tables(fd, name, spec_grid):
    for table in fd.tables:
        rows = table.array()
        if spec_grid is None:
            continue
        n_nodes = spec_grid.n_x + 2
        if rows.shape[1] != n_nodes:
            raise DimensionMismatch(f"{name}: table has {rows.shape[1]} space nodes, grid has {n_nodes}")
        if rows.shape[0] > 1 and rows.shape[0] != spec_grid.n_t + 1:
            raise DimensionMismatch(
                f"{name}: table has {rows.shape[0]} time rows, grid has {spec_grid.n_t + 1}"
            )


def _boundary_ok(spec, fd, name, grid):
    tol = BOUNDARY_TOL
    if fd.kind == "tabulated":
        h = spec.L / (grid.n_x + 1) if grid is not None else spec.L / 100
        tol = h * h
    ts = [0.0] if not fd.time_dependent else np.linspace(0.0, spec.T, 7)
    for t in ts:
        tt = None if not fd.time_dependent else t
        vals = expr.evaluate(fd, np.array([0.0, spec.L]), tt, L=spec.L, T=spec.T)
        if np.max(np.abs(vals)) > tol:
            raise BoundaryViolation(
                f"{name} must vanish at x=0 and x=L (values {vals[0]:.3e}, {vals[1]:.3e})"
            )


def validate(spec, grid=None):
    """Confirm the invariants of ``spec`` and return it marked as validated.

    ``grid`` is only needed to check tabulated descriptors.
    """
    if not (spec.L > 0 and spec.T > 0):
        raise ValidationError("L and T must be positive")
    if spec.gamma < 0:
        raise NegativeGamma(f"gamma = {spec.gamma} < 0")
    m = spec.m
    if m < 1:
        raise ValidationError("at least one control is required")
    for name, seq in (("alpha", spec.alpha), ("u_lo", spec.u_lo), ("u_hi", spec.u_hi)):
        if len(seq) != m:
            raise DimensionMismatch(f"{name} has {len(seq)} entries, expected m = {m}")
    if len(spec.d) != spec.q:
        raise DimensionMismatch(f"d has {len(spec.d)} entries, expected q = {spec.q}")
    for i, (lo, hi) in enumerate(zip(spec.u_lo, spec.u_hi), start=1):
        if not lo < hi:
            raise BoundOrder(f"control {i}: lower bound {lo} must be below upper bound {hi}")
    for name, fd in [(f"b{i}", bi) for i, bi in enumerate(spec.b)] + [
        ("f", spec.f), ("y0", spec.y0), ("yd", spec.yd), ("ydT", spec.ydT),
    ] + [(f"c{j + 1}", cj) for j, cj in enumerate(spec.c)]:
        _check_tables(fd, name, grid)
        if fd.kind == "tabulated" and grid is None:
            raise DimensionMismatch(f"{name}: tabulated descriptors need a grid to validate against")
        for bp in fd.breakpoints:
            if bp < -BOUNDARY_TOL or bp > spec.T + BOUNDARY_TOL:
                raise ValidationError(f"{name}: breakpoint {bp} outside [0, T]")
    for name in ("b", "y0", "ydT", "c"):
        for fd in (spec.b if name == "b" else spec.c if name == "c" else [getattr(spec, name)]):
            if fd.time_dependent:
                raise ValidationError(f"{name} must not depend on time")
    _boundary_ok(spec, spec.y0, "y0", grid)
    for j, cj in enumerate(spec.c, start=1):
        _boundary_ok(spec, cj, f"c{j}", grid)
    if spec.validated:
        return spec
    return replace(spec, validated=True)


def make_spec(L=1.0, T=1.0, gamma=0.0, b=("0", "1"), f="0", y0="0", yd="0", ydT="0",
              alpha=None, c=(), d=(), u_lo=None, u_hi=None):
    """Convenience constructor accepting expression strings or descriptors."""

    def fd(v):
        return v if isinstance(v, FunctionDescriptor) else parse_function(str(v))

    bs = tuple(fd(v) for v in b)
    m = len(bs) - 1
    return ProblemSpec(
        L=float(L), T=float(T), gamma=float(gamma), b=bs, f=fd(f), y0=fd(y0), yd=fd(yd),
        ydT=fd(ydT),
        alpha=tuple(float(a) for a in (alpha if alpha is not None else [0.0] * m)),
        c=tuple(fd(v) for v in c), d=tuple(float(v) for v in d),
        u_lo=tuple(float(v) for v in (u_lo if u_lo is not None else [-1.0] * m)),
        u_hi=tuple(float(v) for v in (u_hi if u_hi is not None else [1.0] * m)),
    )


# ---------------------------------------------------------------- problem files

def _scalar(section, key, default=None):
    if key not in section:
        if default is None:
            raise SchemaError(f"missing key {key!r} in [{section.name}]")
        return default
    return parse_constant(section[key])


def _func(section, key, default=None):
    if key not in section:
        if default is None:
            raise SchemaError(f"missing key {key!r} in [{section.name}]")
        return parse_function(default)
    return parse_function(section[key])


def loads_problem(text):
    """Parse problem-file text into ``(ProblemSpec, grid or None)``."""
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",),
                                   inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise SchemaError(f"malformed problem file: {exc}") from exc
    for name in ("problem", "controls"):
        if name not in cp:
            raise SchemaError(f"missing section [{name}]")
    pr, co = cp["problem"], cp["controls"]
    _check_keys(cp)
    try:
        m = int(_scalar(co, "m"))
        b = [_func(pr, "b0", "0")] + [_func(co, f"b{i}") for i in range(1, m + 1)]
        alpha = [_scalar(co, f"alpha{i}", 0.0) for i in range(1, m + 1)]
        u_lo = [_scalar(co, f"u_lo{i}") for i in range(1, m + 1)]
        u_hi = [_scalar(co, f"u_hi{i}") for i in range(1, m + 1)]
        c, d = [], []
        if "constraints" in cp:
            cs = cp["constraints"]
            q = int(_scalar(cs, "q", 0.0))
            c = [_func(cs, f"c{j}") for j in range(1, q + 1)]
            d = [_scalar(cs, f"d{j}") for j in range(1, q + 1)]
        spec = ProblemSpec(
            L=_scalar(pr, "l", 1.0), T=_scalar(pr, "t"), gamma=_scalar(pr, "gamma", 0.0),
            b=tuple(b), f=_func(pr, "f", "0"), y0=_func(pr, "y0"), yd=_func(pr, "yd", "0"),
            ydT=_func(pr, "ydt", "0"), alpha=tuple(alpha), c=tuple(c), d=tuple(d),
            u_lo=tuple(u_lo), u_hi=tuple(u_hi),
        )
        grid = None
        if "grid" in cp:
            g = cp["grid"]
            grid = spec.grid(int(_scalar(g, "nx")), int(_scalar(g, "nt")))
    except ParseError as exc:
        raise SchemaError(f"bad expression in problem file: {exc}") from exc
    return spec, grid


_KEYS = {
    "problem": re.compile(r"(l|t|gamma|b0|f|y0|yd|ydt)$"),
    "controls": re.compile(r"(m|b[1-9]\d*|alpha[1-9]\d*|u_lo[1-9]\d*|u_hi[1-9]\d*)$"),
    "constraints": re.compile(r"(q|c[1-9]\d*|d[1-9]\d*)$"),
    "grid": re.compile(r"(nx|nt)$"),
}


def _check_keys(cp):
    for name in cp.sections():
        if name not in _KEYS:
            raise SchemaError(f"unknown section [{name}]")
        for key in cp[name]:
            if not _KEYS[name].match(key):
                raise SchemaError(f"unknown key {key!r} in [{name}]")


def load_problem(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such problem file: {path}")
    return loads_problem(path.read_text())


def dumps_problem(spec, grid=None):
    lines = ["[problem]", f"L = {spec.L!r}", f"T = {spec.T!r}", f"gamma = {spec.gamma!r}",
             f"b0 = {render(spec.b[0])}", f"f = {render(spec.f)}", f"y0 = {render(spec.y0)}",
             f"yd = {render(spec.yd)}", f"ydT = {render(spec.ydT)}", "", "[controls]", f"m = {spec.m}"]
    for i in range(1, spec.m + 1):
        lines += [f"b{i} = {render(spec.b[i])}", f"alpha{i} = {spec.alpha[i - 1]!r}",
                  f"u_lo{i} = {spec.u_lo[i - 1]!r}", f"u_hi{i} = {spec.u_hi[i - 1]!r}"]
    lines += ["", "[constraints]", f"q = {spec.q}"]
    for j in range(1, spec.q + 1):
        lines += [f"c{j} = {render(spec.c[j - 1])}", f"d{j} = {spec.d[j - 1]!r}"]
    if grid is not None:
        lines += ["", "[grid]", f"nx = {grid.n_x}", f"nt = {grid.n_t}"]
    return "\n".join(lines) + "\n"


def benchmark_text():
    return (Path(__file__).parent / "data" / "benchmark.prob").read_text()


def benchmark_spec():
    """The scalar-reducible benchmark instance with a known optimum."""
    return loads_problem(benchmark_text())

