"""Second-order verification on sampled strict critical directions.

The quadratic form uses the same discrete pairings as the cost and the
adjoint, which makes the Lagrangian expansion exact for ``gamma = 0``:

    L(u + tau v) - L(u) = dt sum Psi (tau v) + Q(y[u + tau v] - y[u], tau v) / 2.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, optim, pdesolve
from .errors import ControllabilityRequired
from .foc import check_controllability, default_eps, detect_arcs
from .model import sampled

COVERAGE_NOTE = ("Nonnegativity is tested on a finite random sample of strict critical "
                 "directions; a pass does not exclude violations outside the sample.")


@dataclass
class CriticalDirection:
    v: np.ndarray
    z: np.ndarray
    in_C: bool = False
    in_Cs: bool = False
    quasi_radial_screened: bool = False
    seed: int | None = None


@dataclass
class SocReport:
    passed: bool
    min_Q: float
    argmin: int | None
    values: list
    tolerance: float
    message: str = ""
    note: str = COVERAGE_NOTE
    minimizer: np.ndarray | None = field(default=None, repr=False)
    coverage: dict = field(default_factory=dict)

    def to_dict(self):
        return {"passed": self.passed, "min_Q": self.min_Q, "argmin": self.argmin,
                "tolerance": self.tolerance, "message": self.message, "note": self.note,
                "directions": self.values, "coverage": self.coverage}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_minimizer(self, path, grid):
        if self.minimizer is not None:
            pdesolve.write_control_csv(path, grid, self.minimizer)

    def summary(self):
        head = f"second-order report: {'PASS' if self.passed else 'FAIL'}"
        if self.argmin is None:
            return f"{head} ({self.message})\n  note: {self.note}"
        return (f"{head}\n  {len(self.values)} directions, min Q = {self.min_Q:.6e} "
                f"(direction {self.argmin})\n  {self.message}\n  note: {self.note}")


def kappa(spec, ybar, p):
    """``1 - 6 gamma ybar p`` pointwise."""
    return 1.0 - 6.0 * spec.gamma * np.asarray(ybar) * np.asarray(p)


def quadratic_form(spec, grid, p, z, v, ybar=None):
    """Second variation of the Lagrangian in direction ``(z, v)``.

    The ``z^2`` term uses the midpoint rule of the cost; the cubic
    correction and the bilinear term pair ``p^n`` with ``z^{n+1}`` as the
    adjoint scheme does.
    """
    z = grid.check_field(z, "z")
    p = grid.check_field(p, "p")
    v = grid.check_control(v, spec.m, "v")
    zm = 0.5 * (z[:-1] + z[1:])
    q = grid.dt * float(np.sum(zm * zm)) * grid.h + grid.h * float(np.sum(z[-1] ** 2))
    if spec.gamma:
        if ybar is None:
            raise ValueError("ybar is required when gamma > 0")
        q -= 6.0 * spec.gamma * grid.dt * grid.h * float(np.sum(ybar[1:] * p[:-1] * z[1:] ** 2))
    B = sampled(spec, grid).b[1:]
    q += 2.0 * grid.dt * grid.h * float(np.sum(p[:-1] * (v.T @ B) * z[1:]))
    return q


def expansion_terms(spec, grid, u, mu_weights, v, tau):
    """Both sides of the second-order Lagrangian expansion.

    Returns ``(dL, linear, half_Q)`` where ``dL`` is computed from two
    nonlinear solves and the others from the costate at ``u``.
    """
    u = grid.check_control(u, spec.m)
    y, p1, p, psi = optim.adjoint_sweep(spec, grid, u, mu_weights)
    u_t = u + tau * np.asarray(v)
    y_t = pdesolve.solve_state(spec, grid, u_t)
    dL = optim.lagrangian(spec, grid, u_t, mu_weights, y_t) - optim.lagrangian(spec, grid, u, mu_weights, y)
    linear = grid.dt * float(np.sum(psi * tau * np.asarray(v)))
    half_Q = 0.5 * quadratic_form(spec, grid, p, y_t - y, tau * np.asarray(v), ybar=y)
    return dL, linear, half_Q


# ---------------------------------------------------------------- cone membership

def _active_nodes(arcs, q, n_nodes):
    mask = np.zeros((q, n_nodes), dtype=bool)
    for arc in arcs.arcs:
        for j in arc.active:
            mask[j, arc.start:arc.stop + 1] = True
    return mask


def _contact_steps(arcs, m, n_t):
    lower = np.zeros((m, n_t), dtype=bool)
    upper = np.zeros((m, n_t), dtype=bool)
    for arc in arcs.arcs:
        for i in arc.lower:
            lower[i, arc.start:arc.stop] = True
        for i in arc.upper:
            upper[i, arc.start:arc.stop] = True
    return lower | arcs.lower_mask, upper | arcs.upper_mask


def is_critical(spec, grid, direction, psi, arcs, tol=1e-8, psi_tol=None):
    """Critical-cone and strict-cone membership flags ``(in_C, in_Cs)``.

    ``tol`` is relative to the size of the direction; ``psi_tol`` bounds
    ``|v_i Psi_i|`` relative to ``max|v|`` and defaults to ``1e-4 max|Psi|``.
    """
    v = grid.check_control(direction.v, spec.m, "v")
    z = direction.z
    psi = np.atleast_2d(psi)
    vmax = max(float(np.max(np.abs(v), initial=0.0)), 1e-300)
    zmax = max(float(np.max(np.abs(z), initial=0.0)), 1e-300)
    if psi_tol is None:
        psi_tol = 1e-4 * float(np.max(np.abs(psi), initial=0.0))
    lower, upper = _contact_steps(arcs, spec.m, grid.n_t)
    lin = grid.h * sampled(spec, grid).c @ z.T
    act = _active_nodes(arcs, spec.q, grid.n_t + 1)
    cz_tol = tol * max(zmax, vmax)
    in_C = (
        np.all(np.abs(v * psi) <= psi_tol * vmax + 1e-300)
        and np.all(v[lower] >= -tol * vmax)
        and np.all(v[upper] <= tol * vmax)
        and np.all(lin[act] <= cz_tol)
    )
    in_Cs = bool(in_C and np.all(np.abs(v[lower | upper]) <= tol * vmax)
                 and np.all(np.abs(lin[act]) <= cz_tol))
    return bool(in_C), in_Cs


# ---------------------------------------------------------------- sampling

def _mollified(rng, m, n_t):
    raw = rng.uniform(-1.0, 1.0, size=(m, n_t))
    padded = np.pad(raw, ((0, 0), (1, 1)), mode="edge")
    return (padded[:, :-2] + padded[:, 1:-1] + padded[:, 2:]) / 3.0


class _Stepper:
    """Implicit linearized steps at ``(ybar, ubar)`` with reusable factors."""

    def __init__(self, spec, grid, ybar, ubar):
        self.grid = grid
        self.ybar = ybar
        S = pdesolve.control_source(spec, grid, ubar)
        h, dt = grid.h, grid.dt
        self.off = -1.0 / (h * h)
        self.diag = 1.0 / dt + 2.0 / (h * h) + 3.0 * spec.gamma * ybar[1:] ** 2 - S
        self.B = sampled(spec, grid).b[1:]
        self.C = sampled(spec, grid).c
        self.work = np.empty(grid.n_x)

    def solve(self, n, rhs):
        out = np.empty(self.grid.n_x)
        _kernels.thomas(self.off, np.ascontiguousarray(self.diag[n]), np.ascontiguousarray(rhs),
                        out, self.work)
        return out


def sample_direction(spec, grid, arcs, ybar, ubar, M, rng):
    """One strict critical direction built by a causal closed-loop sweep.

    Free components are mollified uniform noise; on steps ending at an
    active-constraint node the components in the range of ``M`` are solved
    for so that ``int c_j z`` stays zero there, which is the arc identity
    ``sum_i v_i M_ij = int c_j A z`` at the new node.
    """
    m = spec.m
    st = _Stepper(spec, grid, ybar, ubar)
    act = _active_nodes(arcs, spec.q, grid.n_t + 1)
    noise = _mollified(rng, m, grid.n_t)
    v = np.zeros((m, grid.n_t))
    z = np.zeros(grid.field_shape)
    h = grid.h
    for n in range(grid.n_t):
        arc = arcs.arc_of_step(n)
        free = arc.free(m)
        Cn = np.flatnonzero(act[:, n + 1])
        r = np.zeros(m)
        r[free] = noise[free, n]
        z0 = st.solve(n, z[n] / grid.dt)
        if len(Cn) and free:
            Mb = M[n + 1][np.ix_(free, Cn)]
            rf = r[free]
            # project the noise onto the kernel of Mb^T
            proj = Mb @ np.linalg.solve(Mb.T @ Mb, Mb.T @ rf)
            v0 = rf - proj
            zeta = np.array([st.solve(n, st.B[i] * ybar[n + 1]) for i in free])
            cz = h * zeta @ st.C[Cn].T  # (len(free), len(Cn))
            base = h * st.C[Cn] @ z0 + cz.T @ v0
            P = cz.T @ Mb
            eta = np.linalg.solve(P, -base)
            vf = v0 + Mb @ eta
            v[free, n] = vf
            z[n + 1] = z0 + vf @ zeta
        else:
            v[:, n] = r
            if free:
                z[n + 1] = z0 + st.solve(n, (r @ st.B) * ybar[n + 1])
            else:
                z[n + 1] = z0
    return v, z


def _workers():
    try:
        return max(1, int(os.environ.get("PARCON_THREADS", "1")))
    except ValueError:
        return 1


def sample_strict_critical(spec, grid, arcs, ybar, ubar, count, seed=0, psi=None, alpha_tol=1e-6):
    """Draw ``count`` strict critical directions.

    Direction ``k`` uses its own generator seeded with ``seed + k``, so the
    result does not depend on how the work is spread over threads.
    """
    if count <= 0:
        return []
    M = np.stack([grid.h * (sampled(spec, grid).b[1:] * ybar[k]) @ sampled(spec, grid).c.T
                  for k in range(grid.n_t + 1)])
    for sigma, ok in check_controllability(arcs, M, spec.m, alpha_tol):
        if not ok:
            raise ControllabilityRequired(
                f"an active arc fails the controllability test (sigma_min = {sigma:.3e})")
    if psi is None:
        psi = np.zeros((spec.m, grid.n_t))

    def one(k):
        v, z = sample_direction(spec, grid, arcs, ybar, ubar, M, np.random.default_rng(seed + k))
        d = CriticalDirection(v=v, z=z, seed=seed + k)
        d.in_C, d.in_Cs = is_critical(spec, grid, d, psi, arcs)
        return d

    with ThreadPoolExecutor(max_workers=_workers()) as pool:
        return list(pool.map(one, range(count)))


def arc_identity_residual(spec, grid, arcs, ybar, ubar, direction):
    """Residual of ``sum_i v_i M_ij = int c_j A z`` on active nodes.

    Scaled by ``max|v| max|M|`` over the whole horizon.
    """
    act = _active_nodes(arcs, spec.q, grid.n_t + 1)
    S = sampled(spec, grid)
    M = grid.h * np.einsum("ix,kx,jx->kij", S.b[1:], ybar, S.c)
    scale = float(np.max(np.abs(direction.v), initial=0.0)) * float(np.max(np.abs(M), initial=0.0))
    worst = 0.0
    for k in range(1, grid.n_t + 1):
        for j in np.flatnonzero(act[:, k] & act[:, k - 1]):
            lhs = float(direction.v[:, k - 1] @ M[k, :, j])
            Az = pdesolve.apply_A(spec, grid, ybar, ubar, direction.z[k], k)
            worst = max(worst, abs(lhs - grid.h * float(S.c[j] @ Az)))
    return worst / scale if scale > 0 else worst


# ---------------------------------------------------------------- screening

def screen_quasi_radial(spec, grid, direction, ubar, ybar, tau_list=(1e-1, 1e-2, 1e-3),
                        min_exponent=1.8, eps_g=None):
    """Numerical screen of the quasi-radial conditions for one direction.

    The decay of ``max_t (g_j + tau g_j' z)^+`` over ``tau_list`` must fit an
    exponent of at least ``min_exponent``; nodes within ``eps_g`` of the
    constraint count as exactly active.  ``ubar + tau v`` must stay in the
    box for the smallest ``tau``.
    """
    v = grid.check_control(direction.v, spec.m, "v")
    lo, hi = spec.control_bounds(grid)
    tmin = min(tau_list)
    ut = ubar + tmin * v
    if np.any(ut < lo - 1e-14) or np.any(ut > hi + 1e-14):
        return False
    if not spec.q:
        return True
    if eps_g is None:
        eps_g = default_eps(spec)[1]
    g = optim.constraint_values(spec, grid, ybar)
    g = np.where(g >= -np.asarray(eps_g)[:, None], 0.0, g)
    lin = grid.h * sampled(spec, grid).c @ direction.z.T
    taus = np.asarray(sorted(tau_list, reverse=True), dtype=float)
    peaks = np.array([np.max(np.maximum(g + tau * lin, 0.0), axis=1) for tau in taus])
    floor = 1e-12 * max(1.0, float(np.max(np.abs(lin), initial=0.0)))
    for j in range(spec.q):
        col = peaks[:, j]
        if np.all(col <= floor * taus ** 2 / taus[0] ** 2 + floor):
            continue
        if np.any(col <= 0):
            # vanishes for small tau after being positive: faster than any power
            if col[-1] <= floor:
                continue
        slope = np.polyfit(np.log(taus), np.log(np.maximum(col, 1e-300)), 1)[0]
        if slope < min_exponent:
            return False
    return True


# ---------------------------------------------------------------- report

def check_second_order(spec, grid, p, directions, ybar=None, soc_tol=1e-6):
    """Evaluate ``Q`` on every direction; pass iff none is clearly negative."""
    if not directions:
        return SocReport(True, float("nan"), None, [], soc_tol, message="no directions")
    values = []
    worst, arg = np.inf, None
    ok = True
    for k, d in enumerate(directions):
        q = quadratic_form(spec, grid, p, d.z, d.v, ybar=ybar)
        size = grid.dt * float(np.sum(d.v ** 2)) + grid.dt * grid.h * float(np.sum(d.z ** 2))
        passed = q >= -soc_tol * size
        ok &= passed
        values.append({"index": k, "seed": d.seed, "Q": q, "size": size, "passed": bool(passed),
                       "in_C": d.in_C, "in_Cs": d.in_Cs,
                       "quasi_radial": d.quasi_radial_screened})
        if q < worst:
            worst, arg = q, k
    msg = ("Q is nonnegative on every sampled direction" if ok else
           "necessary condition violated: the candidate is not optimal or the multiplier is inaccurate")
    return SocReport(bool(ok), float(worst), arg, values, soc_tol, message=msg,
                     minimizer=directions[arg].v)


def verify_second_order(spec, grid, u, y, mu_weights, count=64, seed=0, soc_tol=1e-6,
                        eps_u=None, eps_g=None, alpha_tol=1e-6):
    """Sample, classify, screen and evaluate strict critical directions."""
    y, p1, p, psi = optim.adjoint_sweep(spec, grid, u, mu_weights, y=y)
    arcs = detect_arcs(spec, grid, u, y, eps_u, eps_g)
    dirs = sample_strict_critical(spec, grid, arcs, y, u, count, seed=seed, psi=psi,
                                  alpha_tol=alpha_tol)
    for d in dirs:
        d.quasi_radial_screened = screen_quasi_radial(spec, grid, d, u, y, eps_g=eps_g)
    report = check_second_order(spec, grid, p, dirs, ybar=y, soc_tol=soc_tol)
    report.coverage = {"count": count, "seed": seed,
                          "in_Cs": int(sum(d.in_Cs for d in dirs)),
                          "quasi_radial": int(sum(d.quasi_radial_screened for d in dirs))}
    return report
