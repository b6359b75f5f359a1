"""Cost, discrete-adjoint gradient and the augmented-Lagrangian solver.

The state constraints are imposed at every time node.  For nodal multiplier
estimates ``lam`` and penalty ``rho`` the inner objective is

    J(u) + sum_{j,k} w_k (max(0, lam + rho g)^2 - lam^2) / (2 rho),

with trapezoid weights ``w_k``.  Its gradient is the switching function
computed with effective atoms ``w_k max(0, lam + rho g)``, so the same
backward solve serves the optimizer and the verifier.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import pdesolve
from .model import sampled
from .errors import LineSearchStall, MaxIterations

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolveOptions:
    rho0: float = 10.0
    rho_growth: float = 5.0
    rho_max: float = 1e6
    outer_iters: int = 40
    inner_iters: int = 4000
    grad_tol: float = 1e-6
    constraint_tol: float = 1e-8
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    inner: str = "lbfgsb"
    memory: int = 100
    seed: int = 0

    def __post_init__(self):
        if not self.rho0 > 0:
            raise ValueError("rho0 must be positive")
        if not self.rho_growth > 1:
            raise ValueError("rho_growth must exceed 1")
        if not (self.grad_tol > 0 and self.constraint_tol > 0):
            raise ValueError("tolerances must be positive")
        if not (0 < self.armijo < 1 and 0 < self.backtrack < 1):
            raise ValueError("line-search constants must lie in (0, 1)")
        if self.inner not in ("lbfgsb", "spg"):
            raise ValueError("inner must be 'lbfgsb' or 'spg'")


@dataclass
class Trajectory:
    u: np.ndarray
    y: np.ndarray


@dataclass
class MultiplierBundle:
    p: np.ndarray
    p1: np.ndarray
    mu_weights: np.ndarray
    beta: float = 1.0

    @property
    def mu(self):
        return pdesolve.mu_from_weights(self.mu_weights)

    @property
    def mass(self):
        return self.mu_weights.sum(axis=1)


@dataclass
class ConvergenceLog:
    outer: list = field(default_factory=list)
    converged: bool = False
    message: str = ""

    def to_dict(self):
        return {"converged": self.converged, "message": self.message, "outer": self.outer}


# ---------------------------------------------------------------- building blocks

def pg_norm(u, G, lo, hi):
    """Sup norm of the projected-gradient step ``P(u - G) - u``."""
    return float(np.max(np.abs(project(u - G, lo, hi) - u), initial=0.0))


def time_norm(v, grid):
    """L2(0, T) norm of a step-wise control, summed over components."""
    return float(np.sqrt(grid.dt * np.sum(np.asarray(v) ** 2)))


def cost(spec, grid, u, y):
    """Tracking, terminal and linear control terms of the objective."""
    u = grid.check_control(u, spec.m)
    y = grid.check_field(y, "y")
    e = pdesolve.tracking_residual(spec, grid, y)
    track = 0.5 * grid.dt * float(np.sum(pdesolve.inner(e, e, grid)))
    rT = pdesolve.terminal_residual(spec, grid, y)
    terminal = 0.5 * float(pdesolve.inner(rT, rT, grid))
    linear = grid.dt * float(np.sum(np.asarray(spec.alpha)[:, None] * u))
    return track + terminal + linear


def constraint_values(spec, grid, y):
    """``g_j(y(., t_k)) = int c_j y + d_j``; shape (q, n_t + 1)."""
    C = sampled(spec, grid).c
    return grid.h * C @ np.asarray(y).T + np.asarray(spec.d)[:, None]


def adjoint_sweep(spec, grid, u, mu_weights, y=None):
    """State, costates and switching function for given atoms ``mu_weights``."""
    if y is None:
        y = pdesolve.solve_state(spec, grid, u)
    p1, p = pdesolve.solve_alt_costate(spec, grid, y, u, mu_weights)
    return y, p1, p, pdesolve.switching(spec, grid, y, p)


def reduced_gradient(spec, grid, u, mu_weights):
    """Switching function sampled per time step.

    ``dt * Psi`` is the exact gradient in ``u`` of the discrete Lagrangian
    ``J + sum_{j,k} mu_weights[j, k] g_j(y^k)``.
    """
    return adjoint_sweep(spec, grid, u, mu_weights)[3]


def lagrangian(spec, grid, u, mu_weights, y=None):
    if y is None:
        y = pdesolve.solve_state(spec, grid, u)
    g = constraint_values(spec, grid, y)
    return cost(spec, grid, u, y) + float(np.sum(np.asarray(mu_weights) * g))


def complementarity_residual(spec, grid, y, mu_weights):
    """``|sum_k W_jk g_j(y^k)|`` for each constraint."""
    g = constraint_values(spec, grid, y)
    return np.abs(np.sum(np.asarray(mu_weights).reshape(g.shape) * g, axis=1))


def project(u, lo, hi):
    return np.minimum(np.maximum(u, lo), hi)


# ---------------------------------------------------------------- augmented Lagrangian

class _Augmented:
    """Value and gradient of the inner objective at fixed ``lam``, ``rho``."""

    def __init__(self, spec, grid, lam, rho):
        self.spec, self.grid, self.lam, self.rho = spec, grid, lam, rho
        self.w = grid.node_weights()[None, :]
        self.evals = 0

    def value(self, u):
        self.evals += 1
        y = pdesolve.solve_state(self.spec, self.grid, u)
        g = constraint_values(self.spec, self.grid, y)
        shifted = np.maximum(0.0, self.lam + self.rho * g)
        pen = float(np.sum(self.w * (shifted ** 2 - self.lam ** 2))) / (2.0 * self.rho)
        return cost(self.spec, self.grid, u, y) + pen, y, g

    def gradient(self, u, y, g):
        weights = self.w * np.maximum(0.0, self.lam + self.rho * g)
        return adjoint_sweep(self.spec, self.grid, u, weights, y=y)[3]


def _spg(obj, u, lo, hi, opts, tol, max_iter):
    """Spectral projected gradient with monotone Armijo backtracking.

    Works in the L2(0, T) metric, where the gradient is the switching
    function itself.
    """
    grid = obj.grid
    dt = grid.dt
    f, y, g = obj.value(u)
    G = obj.gradient(u, y, g)
    step = 1.0 / max(np.max(np.abs(G)), 1e-12)
    it = 0
    pg = pg_norm(u, G, lo, hi)
    history = [f]
    while it < max_iter and pg > tol:
        d = project(u - step * G, lo, hi) - u
        slope = dt * float(np.sum(G * d))
        theta = 1.0
        for _ in range(opts.max_backtracks):
            u_new = project(u + theta * d, lo, hi)
            f_new, y_new, g_new = obj.value(u_new)
            if f_new <= f + opts.armijo * theta * slope:
                break
            theta *= opts.backtrack
        else:
            if abs(slope) > 1e-13 * max(1.0, abs(f)):
                raise LineSearchStall(f"no sufficient decrease after {opts.max_backtracks} "
                                      f"backtracks (projected gradient {pg:.3e})")
            # predicted decrease is below rounding of the objective
            break
        G_new = obj.gradient(u_new, y_new, g_new)
        s = u_new - u
        yv = G_new - G
        sy = float(np.sum(s * yv))
        step = float(np.sum(s * s)) / sy if sy > 0 else 1e3 * step
        step = min(max(step, 1e-10), 1e10)
        u, f, y, g, G = u_new, f_new, y_new, g_new, G_new
        history.append(f)
        pg = pg_norm(u, G, lo, hi)
        it += 1
    return u, y, g, G, pg, it, history


def _lbfgsb(obj, u, lo, hi, opts, tol, max_iter):
    """Bound-constrained limited-memory BFGS on the same objective.

    The Euclidean gradient in the step values is ``dt * Psi``.
    """
    grid = obj.grid
    shape = u.shape
    cache = {}
    history = []

    def fun(x):
        uu = x.reshape(shape)
        f, y, g = obj.value(uu)
        G = obj.gradient(uu, y, g)
        cache["last"] = (x.copy(), f, y, g, G)
        return f, grid.dt * G.ravel()

    def accepted(x):
        history.append(cache["last"][1])

    res = optimize.minimize(
        fun, u.ravel(), jac=True, method="L-BFGS-B",
        bounds=optimize.Bounds(lo.ravel(), hi.ravel()), callback=accepted,
        options={"maxiter": max_iter, "maxfun": 4 * max_iter, "maxcor": opts.memory,
                 "ftol": 1e-16, "gtol": tol * grid.dt},
    )
    u = project(res.x.reshape(shape), lo, hi)
    f, y, g = obj.value(u)
    G = obj.gradient(u, y, g)
    history.append(f)
    pg = pg_norm(u, G, lo, hi)
    return u, y, g, G, pg, int(res.nit), history


def solve_ocp(spec, grid, opts=None, u0=None):
    """Solve the discretized problem by augmented Lagrangian outer iterations.

    Returns
    -------
    Trajectory, MultiplierBundle, ConvergenceLog

    Raises
    ------
    MaxIterations
        When the outer budget runs out; ``exc.result`` holds the last
        ``(Trajectory, MultiplierBundle, ConvergenceLog)``.
    """
    opts = opts or SolveOptions()
    lo, hi = spec.control_bounds(grid)
    u = project(spec.midpoint_control(grid) if u0 is None else np.array(u0, dtype=float), lo, hi)
    lam = np.zeros((spec.q, grid.n_t + 1))
    rho = opts.rho0
    w = grid.node_weights()[None, :]
    clog = ConvergenceLog()
    prev_viol = np.inf
    inner_tol = max(opts.grad_tol, 1e-3)
    y = None
    for outer in range(opts.outer_iters):
        obj = _Augmented(spec, grid, lam, rho)
        inner_solver = _lbfgsb if opts.inner == "lbfgsb" else _spg
        u, y, g, G, pg, inner, hist = inner_solver(obj, u, lo, hi, opts, inner_tol, opts.inner_iters)
        lam = np.maximum(0.0, lam + rho * g)
        viol = float(np.max(g, initial=0.0)) if spec.q else 0.0
        comp = float(np.max(np.abs(np.minimum(lam, -g)), initial=0.0)) if spec.q else 0.0
        J = cost(spec, grid, u, y)
        clog.outer.append({
            "outer": outer, "rho": rho, "inner_iters": inner, "evaluations": obj.evals,
            "augmented": hist[-1], "cost": J, "max_violation": viol, "complementarity": comp,
            "projected_gradient": pg, "inner_tol": inner_tol,
            "mu_mass": [float(v) for v in (w * lam).sum(axis=1)],
        })
        log.info("outer %d: J=%.10f viol=%.2e comp=%.2e pg=%.2e rho=%.1e inner=%d",
                 outer, J, viol, comp, pg, rho, inner)
        done = (pg <= opts.grad_tol and max(viol, comp) <= opts.constraint_tol)
        if done:
            clog.converged = True
            clog.message = f"converged after {outer + 1} outer iterations"
            break
        if viol > opts.constraint_tol and viol > 0.25 * prev_viol:
            rho = min(rho * opts.rho_growth, opts.rho_max)
        prev_viol = viol
        inner_tol = max(opts.grad_tol, 0.1 * inner_tol)
    result = _package(spec, grid, u, y, w * lam, clog)
    if not clog.converged:
        clog.message = f"no convergence within {opts.outer_iters} outer iterations"
        raise MaxIterations(clog.message, result=result)
    return result


def _package(spec, grid, u, y, mu_weights, clog):
    p1, p = pdesolve.solve_alt_costate(spec, grid, y, u, mu_weights)
    return Trajectory(u=u, y=y), MultiplierBundle(p=p, p1=p1, mu_weights=mu_weights), clog
