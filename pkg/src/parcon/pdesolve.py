"""Finite-difference solvers for the state, linearized and adjoint equations.

The scheme is backward Euler in time with the standard three-point
Laplacian in space.  Time step ``k`` (from ``t_k`` to ``t_{k+1}``) uses the
control value ``u[:, k]`` and evaluates all other data at ``t_{k+1}``.  The
adjoint solver is the exact transpose of the linearized solver, so
discrete duality identities hold to rounding error.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from . import _kernels
from .model import sampled
from .errors import GridMismatch, NegativeWeight, NewtonDivergence, NonFiniteState

NEWTON_MAXIT = 20
NEWTON_TOL = 1e-12


def inner(a, b, grid):
    """Discrete L2(Omega) inner product along the last axis."""
    return grid.h * np.sum(np.asarray(a) * np.asarray(b), axis=-1)


def norm(a, grid):
    return np.sqrt(inner(a, a, grid))


def control_source(spec, grid, u):
    """``S[k] = b_0 + sum_i u_i[k] b_i`` for every time step."""
    u = grid.check_control(u, spec.m)
    B = sampled(spec, grid).b
    return B[0][None, :] + u.T @ B[1:]


def _forcing(spec, grid):
    return sampled(spec, grid).f


def solve_state(spec, grid, u, y0=None, f=None):
    """Solve the controlled semilinear heat equation.

    Parameters
    ----------
    spec : ProblemSpec
    grid : SpaceTimeGrid
    u : array_like, shape (m, n_t)
    y0, f : optional overrides of the initial state (n_x,) and the forcing
        sampled at time nodes (n_t + 1, n_x).

    Returns
    -------
    ndarray, shape (n_t + 1, n_x)
    """
    S = control_source(spec, grid, u)
    if not np.all(np.isfinite(S)):
        raise NonFiniteState("control contains non-finite values")
    y0 = sampled(spec, grid).y0 if y0 is None else np.asarray(y0, float)
    F = _forcing(spec, grid) if f is None else grid.check_field(f, "f")
    Y, status, step, res = _kernels.forward_state(
        np.ascontiguousarray(y0, dtype=float), np.ascontiguousarray(F), np.ascontiguousarray(S),
        float(spec.gamma), grid.dt, grid.h, NEWTON_MAXIT, NEWTON_TOL,
    )
    if status == 1:
        raise NewtonDivergence(int(step), float(res))
    if status == 2:
        raise NonFiniteState(f"state became non-finite at time step {step}")
    return Y


def linearized_source(spec, grid, ybar, v):
    """``Phi[k] = sum_i v_i[k] b_i ybar^{k+1}``."""
    v = grid.check_control(v, spec.m, "v")
    B = sampled(spec, grid).b[1:]
    return (v.T @ B) * ybar[1:]


def solve_linearized(spec, grid, ybar, ubar, v):
    """Solve the state equation linearized at ``(ybar, ubar)`` in direction ``v``."""
    ybar = grid.check_field(ybar, "ybar")
    S = control_source(spec, grid, ubar)
    Phi = linearized_source(spec, grid, ybar, v)
    return _kernels.forward_linear(ybar, S, float(spec.gamma), np.ascontiguousarray(Phi),
                                   grid.dt, grid.h)


def solve_backward(spec, grid, ybar, ubar, source, terminal):
    """Backward solve of the adjoint scheme.

    ``source`` has shape (n_t + 1, n_x); row ``k`` is paired with ``z^k`` and
    row 0 is ignored.
    """
    ybar = grid.check_field(ybar, "ybar")
    source = grid.check_field(source, "source")
    S = control_source(spec, grid, ubar)
    return _kernels.backward_adjoint(ybar, S, float(spec.gamma), np.ascontiguousarray(source),
                                     np.ascontiguousarray(terminal, dtype=float), grid.dt, grid.h)


def tracking_residual(spec, grid, y):
    """Midpoint tracking error ``e_k = (y^k + y^{k+1})/2 - y_d(t_{k+1/2})``."""
    return 0.5 * (y[:-1] + y[1:]) - sampled(spec, grid).yd_mid


def tracking_source(spec, grid, y):
    """Gradient of the tracking integral with respect to ``y^k``, divided by ``dt``."""
    e = tracking_residual(spec, grid, y)
    R = np.zeros(grid.field_shape)
    R[1:] += 0.5 * e
    R[1:-1] += 0.5 * e[1:]
    return R


def terminal_residual(spec, grid, y):
    return y[-1] - sampled(spec, grid).ydT


def mu_from_weights(weights):
    """Right-continuous ``mu`` with ``mu(T) = 0`` from nodal atoms.

    ``mu[:, k] = -sum_{l > k} weights[:, l]``.
    """
    W = np.atleast_2d(np.asarray(weights, dtype=float))
    tail = np.cumsum(W[:, ::-1], axis=1)[:, ::-1]
    mu = np.zeros_like(W)
    mu[:, :-1] = -tail[:, 1:]
    return mu


def apply_A(spec, grid, ybar, ubar, z, k):
    """Apply ``A = -Delta + 3 gamma ybar^2 - sum_i ubar_i b_i`` at time node ``k``.

    Node ``k >= 1`` pairs with the control on the step ending there; node 0
    uses the first step.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (grid.n_x,):
        raise GridMismatch(f"slice has shape {z.shape}, expected ({grid.n_x},)")
    S = control_source(spec, grid, ubar)[max(k - 1, 0)]
    out = np.empty_like(z)
    _kernels.laplace_apply(np.ascontiguousarray(z), grid.h, out)
    return out + 3.0 * spec.gamma * ybar[k] ** 2 * z - S * z


def A_of_c(spec, grid, ybar, ubar):
    """``A^k c_j`` for all nodes; shape (q, n_t + 1, n_x)."""
    C = sampled(spec, grid).c
    S = control_source(spec, grid, ubar)
    S_nodes = np.vstack([S[:1], S])
    out = np.empty((spec.q,) + grid.field_shape)
    Kc = np.empty(grid.n_x)
    for j in range(spec.q):
        _kernels.laplace_apply(np.ascontiguousarray(C[j]), grid.h, Kc)
        out[j] = Kc[None, :] + (3.0 * spec.gamma * ybar ** 2 - S_nodes) * C[j][None, :]
    return out


def solve_alt_costate(spec, grid, ybar, ubar, mu_weights):
    """Backward solve for the absolutely continuous costate ``p1``.

    Parameters
    ----------
    mu_weights : array_like, shape (q, n_t + 1)
        Nonnegative atoms of the state-constraint measure at time nodes.

    Returns
    -------
    p1, p : ndarray, shape (n_t + 1, n_x)
        ``p = p1 - sum_j c_j mu_j`` with ``mu`` rebuilt by :func:`mu_from_weights`.
    """
    W = np.asarray(mu_weights, dtype=float).reshape(spec.q, grid.n_t + 1)
    if np.any(W < 0):
        raise NegativeWeight(f"mu weights must be nonnegative (min {W.min():.3e})")
    ybar = grid.check_field(ybar, "ybar")
    mu = mu_from_weights(W)
    R = tracking_source(spec, grid, ybar)
    if spec.q:
        AC = A_of_c(spec, grid, ybar, ubar)
        # node k >= 1 gets mu(t_{k-1}) A^k c_j
        R[1:] += np.einsum("jk,jkx->kx", mu[:, :-1], AC[:, 1:])
    p1 = solve_backward(spec, grid, ybar, ubar, R, terminal_residual(spec, grid, ybar))
    p = p1 - mu.T @ sampled(spec, grid).c
    return p1, p


def switching(spec, grid, ybar, p):
    """``Psi_i[k] = alpha_i + <b_i ybar^{k+1}, p^k>``; shape (m, n_t)."""
    B = sampled(spec, grid).b[1:]
    alpha = np.asarray(spec.alpha)[:, None]
    return alpha + grid.h * np.einsum("ix,kx->ik", B, ybar[1:] * p[:-1])


# ---------------------------------------------------------------- a priori bounds

def _sigma(spec, grid, u):
    u = grid.check_control(u, spec.m)
    binf = np.max(np.abs(sampled(spec, grid).b), axis=1)
    return binf[0] + np.abs(u).T @ binf[1:]


def energy_bound(spec, grid, u, y0=None, f=None):
    """Gronwall-type bound on ``||y^k||`` for every time node.

    Pairing the scheme with ``y^{k+1}`` gives
    ``||y^{k+1}|| (1 - dt s_k) <= ||y^k|| + dt ||f^{k+1}||`` with
    ``s_k = sum_i |u_i[k]| ||b_i||_inf`` (including ``b_0``).
    """
    s = _sigma(spec, grid, u)
    y0 = sampled(spec, grid).y0 if y0 is None else np.asarray(y0, float)
    F = _forcing(spec, grid) if f is None else np.asarray(f, float)
    fn = norm(F, grid)
    out = np.empty(grid.n_t + 1)
    out[0] = norm(y0, grid)
    for k in range(grid.n_t):
        damp = 1.0 - grid.dt * s[k]
        out[k + 1] = np.inf if damp <= 0 else (out[k] + grid.dt * fn[k + 1]) / damp
    return out


def linearized_bound(spec, grid, ybar, ubar, v):
    """Right side of ``max_k ||z^k|| <= M1 sum_i ||b_i||_inf ||v_i||_1``.

    Returns ``(bound, M1)``.
    """
    s = _sigma(spec, grid, ubar)
    damp = 1.0 - grid.dt * s
    if np.any(damp <= 0):
        return np.inf, np.inf
    M1 = np.max(norm(ybar, grid)) / np.prod(damp)
    v = grid.check_control(v, spec.m, "v")
    binf = np.max(np.abs(sampled(spec, grid).b[1:]), axis=1)
    total = float(np.sum(binf * grid.dt * np.sum(np.abs(v), axis=1)))
    return M1 * total, M1


# ---------------------------------------------------------------- CSV export

def write_field_csv(path, grid, values):
    values = grid.check_field(values)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "value"])
        for k, t in enumerate(grid.t):
            for i, x in enumerate(grid.x):
                w.writerow([repr(float(t)), repr(float(x)), repr(float(values[k, i]))])


def read_field_csv(path, grid):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape != ((grid.n_t + 1) * grid.n_x, 3):
        raise GridMismatch(f"{Path(path).name}: {data.shape[0]} rows do not match the grid")
    return data[:, 2].reshape(grid.field_shape)


def write_control_csv(path, grid, u):
    u = np.atleast_2d(u)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"u{i + 1}" for i in range(u.shape[0])])
        for k in range(grid.n_t):
            w.writerow([repr(float(grid.t[k]))] + [repr(float(v)) for v in u[:, k]])


def read_control_csv(path, grid, m):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape != (grid.n_t, m + 1):
        raise GridMismatch(f"{Path(path).name}: shape {data.shape} does not match the grid")
    return data[:, 1:].T.copy()
