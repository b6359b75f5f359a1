"""Sine-mode Galerkin reduction and the closed-form benchmark solution.

For ``gamma = 0`` the state equation projected on the orthonormal sine basis
``phi_k = sqrt(2/L) sin(k pi x / L)`` becomes the linear ODE system

    y_k' + lambda_k y_k = sum_i u_i (B^(i) y)_k + f_k.

All projections use composite Simpson quadrature on a fixed fine mesh that
is unrelated to the finite-difference grid, so the modal solution is an
independent check of the FD solver.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate

from . import expr
from .errors import GammaUnsupported, NonFiniteState

SIMPSON_PANELS = 4096


def simpson_weights(a, b, panels=SIMPSON_PANELS):
    """Nodes and weights of composite Simpson's rule (``panels`` even)."""
    x = np.linspace(a, b, panels + 1)
    w = np.ones(panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return x, w * (b - a) / (3.0 * panels)


def sine_basis(N, x, L):
    k = np.arange(1, N + 1)[:, None]
    return math.sqrt(2.0 / L) * np.sin(k * np.pi * np.asarray(x)[None, :] / L)


@dataclass(frozen=True, eq=False)
class ModalSystem:
    """Galerkin data for the first ``N`` sine modes.

    Attributes
    ----------
    eigenvalues : ndarray (N,)
    B : ndarray (m + 1, N, N)
        ``B[i, k, l] = int b_i phi_k phi_l``.
    y0, ydT : ndarray (N,)
    c : ndarray (q, N)
    """

    N: int
    L: float
    T: float
    eigenvalues: np.ndarray
    B: np.ndarray
    y0: np.ndarray
    ydT: np.ndarray
    c: np.ndarray
    spec: object

    @cached_property
    def _quad(self):
        x, w = simpson_weights(0.0, self.L)
        return x, w, sine_basis(self.N, x, self.L)

    def project(self, fd, t=None):
        """Modal coefficients of a descriptor at time ``t``."""
        x, w, phi = self._quad
        vals = expr.evaluate(fd, x, t, L=self.L, T=self.T)
        return phi @ (w * np.broadcast_to(vals, x.shape))

    def f(self, t):
        if not self.spec.f.terms:
            return np.zeros(self.N)
        return self.project(self.spec.f, t)

    def yd(self, t):
        return self.project(self.spec.yd, t)

    def to_nodes(self, coeffs, x):
        """Evaluate modal coefficients (..., N) at points ``x``."""
        return np.asarray(coeffs) @ sine_basis(self.N, x, self.L)


def build_modal(spec, N):
    """Project ``spec`` onto ``N`` sine modes (``gamma = 0`` only)."""
    if spec.gamma > 0:
        raise GammaUnsupported("the modal reduction is exact only for gamma = 0")
    if N < 1:
        raise ValueError("need at least one mode")
    x, w = simpson_weights(0.0, spec.L)
    phi = sine_basis(N, x, spec.L)
    lam = (np.arange(1, N + 1) * np.pi / spec.L) ** 2
    B = np.empty((spec.m + 1, N, N))
    for i, bi in enumerate(spec.b):
        bx = np.broadcast_to(expr.evaluate(bi, x, None, L=spec.L, T=spec.T), x.shape)
        B[i] = (phi * (w * bx)) @ phi.T

    def proj(fd):
        vals = np.broadcast_to(expr.evaluate(fd, x, None, L=spec.L, T=spec.T), x.shape)
        return phi @ (w * vals)

    c = np.array([proj(cj) for cj in spec.c]).reshape(spec.q, N)
    return ModalSystem(N, spec.L, spec.T, lam, B, proj(spec.y0), proj(spec.ydT), c, spec)


def solve_state_modal(ms, u, n_t):
    """Classical RK4 with ``n_t`` steps; ``u`` is constant on each step.

    Returns
    -------
    ndarray, shape (n_t + 1, N)
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if u.shape != (ms.B.shape[0] - 1, n_t):
        raise ValueError(f"control shape {u.shape} does not match (m, n_t)")
    if not np.all(np.isfinite(u)):
        raise NonFiniteState("control contains non-finite values")
    dt = ms.T / n_t
    Y = np.empty((n_t + 1, ms.N))
    Y[0] = ms.y0
    has_f = bool(ms.spec.f.terms)
    for k in range(n_t):
        M = ms.B[0] + np.tensordot(u[:, k], ms.B[1:], axes=1) - np.diag(ms.eigenvalues)
        t = k * dt

        def rhs(s, y):
            return M @ y + (ms.f(s) if has_f else 0.0)

        y = Y[k]
        k1 = rhs(t, y)
        k2 = rhs(t + dt / 2, y + dt / 2 * k1)
        k3 = rhs(t + dt / 2, y + dt / 2 * k2)
        k4 = rhs(t + dt, y + dt * k3)
        Y[k + 1] = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return Y


def project_field(Y, grid, N):
    """Modal coefficients of an FD field using the discrete inner product."""
    phi = sine_basis(N, grid.x, grid.L)
    return grid.h * Y @ phi.T


# ---------------------------------------------------------------- benchmark

_LN2 = math.log(2.0)
_PI2 = math.pi ** 2


@dataclass(frozen=True)
class AnalyticExample:
    """Closed-form optimum of the bundled benchmark instance.

    Every field is a multiple of the first sine mode, so the evaluators
    return scalar mode coefficients.
    """

    T: float = 3.0
    u_lo: float = -1.0
    u_hi: float = _PI2 + 1.0
    junctions: tuple = (0.0, _LN2, 2.0, 3.0)

    @staticmethod
    def yd_hat(t):
        t = np.asarray(t, dtype=float)
        return np.where(t < _LN2, 1.5 * np.exp(t), np.where(t < 1.0, 3.0, 4.0 - t))

    @staticmethod
    def y1(t):
        t = np.asarray(t, dtype=float)
        return np.where(t < _LN2, np.exp(t), np.where(t < 2.0, 2.0, 4.0 - t))

    def u(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            tail = _PI2 - 1.0 / (4.0 - np.minimum(t, 3.0))
        return np.where(t < _LN2, self.u_hi, np.where(t < 2.0, _PI2, tail))

    @staticmethod
    def p1(t):
        t = np.asarray(t, dtype=float)
        return np.where(t < _LN2, np.exp(t) / 4.0 - np.exp(-t), 0.0)

    def psi(self, t):
        return self.p1(t) * self.y1(t)

    def mu_dot(self, t):
        t = np.asarray(t, dtype=float)
        on_arc = (t >= _LN2) & (t < 2.0)
        return np.where(on_arc, self.yd_hat(t) - self.y1(t), 0.0)

    @staticmethod
    def mu(t):
        """``mu(t) = -int_t^T mu_dot``; nondecreasing with ``mu(T) = 0``."""
        t = np.clip(np.asarray(t, dtype=float), 0.0, 3.0)
        a = np.maximum(t, _LN2)
        part1 = np.where(a < 1.0, 1.0 - a, 0.0)
        b = np.clip(a, 1.0, 2.0)
        part2 = 0.5 * (2.0 - b) ** 2
        return -(part1 + part2)

    @property
    def mu_mass(self):
        return (1.0 - _LN2) + 0.5

    @cached_property
    def J(self):
        """Optimal cost by adaptive quadrature over the smooth pieces."""
        def integrand(t):
            return 0.5 * float(self.y1(t) - self.yd_hat(t)) ** 2

        edges = [0.0, _LN2, 1.0, 2.0, 3.0]
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            val, _ = integrate.quad(integrand, a, b, epsabs=1e-14, epsrel=1e-13)
            total += val
        terminal = 0.5 * float(self.y1(3.0) - 1.0) ** 2
        return total + terminal

    def to_csv(self, path, times):
        """Sample every evaluator on ``times`` and write a CSV table."""
        times = np.asarray(times, dtype=float)
        cols = {
            "u": self.u(times), "y1": self.y1(times), "yd": self.yd_hat(times),
            "p1": self.p1(times), "mu_dot": self.mu_dot(times), "mu": self.mu(times),
        }
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + list(cols))
            for k, t in enumerate(times):
                w.writerow([repr(float(t))] + [repr(float(c[k])) for c in cols.values()])


def analytic_example():
    return AnalyticExample()
