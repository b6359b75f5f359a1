"""First-order verification: arcs, switching signs, junctions, multiplier density.

Time-step quantities (controls, switching values) are indexed by step
``n`` covering ``[t_n, t_{n+1}]``; node quantities (state, costate,
multiplier) by node ``k``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, expr, optim, pdesolve
from .errors import ControllabilityRequired, NotDifferentiable, SingularNormalMatrix
from .model import sampled

LAMBDA_NOTE = ("Conditions quantified over the whole multiplier set are checked "
               "against the single computed multiplier only.")


@dataclass(frozen=True)
class Arc:
    start: int
    stop: int
    t0: float
    t1: float
    lower: frozenset
    upper: frozenset
    active: frozenset

    def free(self, m):
        """Controls strictly between their bounds on this arc (0-based)."""
        return sorted(set(range(m)) - self.lower - self.upper)

    @property
    def steps(self):
        return range(self.start, self.stop)

    def interior_nodes(self):
        return range(self.start + 1, self.stop)


@dataclass
class ArcStructure:
    arcs: list
    lower_mask: np.ndarray
    upper_mask: np.ndarray
    active_nodes: np.ndarray
    merged: list = field(default_factory=list)
    dt: float = 0.0

    @property
    def junctions(self):
        return tuple([self.arcs[0].t0] + [a.t1 for a in self.arcs])

    @property
    def junction_nodes(self):
        return tuple(a.start for a in self.arcs[1:])

    def arc_of_step(self, n):
        for a in self.arcs:
            if a.start <= n < a.stop:
                return a
        raise IndexError(n)


@dataclass(frozen=True)
class FocOptions:
    eps_u: float | None = None
    eps_g: float | None = None
    sign_tol: float | None = None
    jump_tol: float = 1e-4
    jump_method: str = "mean"
    alpha_tol: float = 1e-6
    complementarity_tol: float = 1e-6
    density_tol: float = 5e-2


@dataclass
class FocReport:
    checks: list
    note: str = LAMBDA_NOTE
    data: dict = field(default_factory=dict, repr=False)

    @property
    def passed(self):
        return all(c["passed"] for c in self.checks)

    def check(self, name):
        for c in self.checks:
            if c["name"] == name:
                return c
        raise KeyError(name)

    def to_dict(self):
        return {"passed": self.passed, "note": self.note, "checks": self.checks}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def summary(self):
        lines = [f"first-order report: {'PASS' if self.passed else 'FAIL'}"]
        for c in self.checks:
            lines.append(f"  {'ok  ' if c['passed'] else 'FAIL'} {c['name']}: "
                         f"residual {c['residual']:.3e} (tol {c['tolerance']:.3e})")
        lines.append(f"  note: {self.note}")
        return "\n".join(lines)


def _entry(name, passed, residual, tolerance, locations=(), **extra):
    rec = {"name": name, "passed": bool(passed), "residual": float(residual),
           "tolerance": float(tolerance), "locations": [float(v) for v in locations]}
    rec.update(extra)
    return rec


# ---------------------------------------------------------------- arcs

def default_eps(spec):
    eps_u = 1e-6 * (np.asarray(spec.u_hi) - np.asarray(spec.u_lo))
    eps_g = 1e-6 * np.maximum(1.0, np.abs(np.asarray(spec.d, dtype=float)))
    return eps_u, eps_g


def detect_arcs(spec, grid, u, y, eps_u=None, eps_g=None):
    """Split ``[0, T]`` into maximal arcs of constant active sets.

    A step is in the lower (upper) contact set of control ``i`` when its value
    is within ``eps_u`` of the bound; constraint ``j`` is active on a step
    when both end nodes satisfy ``g_j >= -eps_g``.  Runs shorter than two
    steps are merged into the preceding arc (the following one at ``t = 0``).
    """
    u = grid.check_control(u, spec.m)
    du, dg = default_eps(spec)
    eps_u = du if eps_u is None else np.broadcast_to(np.asarray(eps_u, float), (spec.m,))
    eps_g = dg if eps_g is None else np.broadcast_to(np.asarray(eps_g, float), (spec.q,))
    lo, hi = spec.control_bounds(grid)
    lower = u <= lo + eps_u[:, None]
    upper = (u >= hi - eps_u[:, None]) & ~lower
    g = optim.constraint_values(spec, grid, y)
    nodes = g >= -eps_g[:, None]
    steps = nodes[:, :-1] & nodes[:, 1:]

    def label(n):
        return (frozenset(np.flatnonzero(lower[:, n]).tolist()),
                frozenset(np.flatnonzero(upper[:, n]).tolist()),
                frozenset(np.flatnonzero(steps[:, n]).tolist()))

    runs = []
    for n in range(grid.n_t):
        lab = label(n)
        if runs and runs[-1][2] == lab:
            runs[-1][1] = n + 1
        else:
            runs.append([n, n + 1, lab])
    merged = []
    changed = True
    while changed and len(runs) > 1:
        changed = False
        for idx, (a, b, lab) in enumerate(runs):
            if b - a < 2:
                merged.append((a, b))
                if idx == 0:
                    runs[1][0] = a
                else:
                    runs[idx - 1][1] = b
                del runs[idx]
                changed = True
                break
        # fuse neighbours that now share a label
        fused = [runs[0]]
        for r in runs[1:]:
            if r[2] == fused[-1][2]:
                fused[-1][1] = r[1]
            else:
                fused.append(r)
        runs = fused
    arcs = [Arc(a, b, float(grid.t[a]), float(grid.t[b]), *lab) for a, b, lab in runs]
    return ArcStructure(arcs, lower, upper, nodes, sorted(merged), grid.dt)


# ---------------------------------------------------------------- constraint derivative

def m_matrix(spec, grid, y, k):
    """``M_ij = int b_i c_j y(., t_k)`` for ``i = 1..m``; shape (m, q)."""
    S = sampled(spec, grid)
    return grid.h * (S.b[1:] * y[k]) @ S.c.T


def _m_all(spec, grid, y):
    S = sampled(spec, grid)
    return grid.h * np.einsum("ix,kx,jx->kij", S.b, y, S.c)


def _laplacian_pairing(spec, grid, y):
    """``int c_j Delta y`` at every node; shape (q, n_t + 1)."""
    S = sampled(spec, grid)
    out = np.empty((spec.q, grid.n_t + 1))
    for j, cj in enumerate(spec.c):
        lap = expr.laplacian_descriptor(cj, spec.L) if expr.differentiable(cj) else None
        if lap is not None:
            vals = np.broadcast_to(spec.space_values(lap, grid), (grid.n_x,))
            out[j] = grid.h * y @ vals
        else:
            Kc = np.empty(grid.n_x)
            _kernels.laplace_apply(np.ascontiguousarray(S.c[j]), grid.h, Kc)
            out[j] = -grid.h * y @ Kc
    return out


def g_dot_all(spec, grid, u, y):
    """Constraint values and their time derivative along the state equation.

    Returns arrays of shape (q, n_t + 1).  Node ``k >= 1`` uses the control
    of the step ending at ``t_k``.
    """
    u = grid.check_control(u, spec.m)
    S = sampled(spec, grid)
    g = optim.constraint_values(spec, grid, y)
    src = S.f - spec.gamma * y ** 3
    gd = grid.h * S.c @ src.T + _laplacian_pairing(spec, grid, y)
    M = _m_all(spec, grid, y)
    u_nodes = np.hstack([u[:, :1], u])
    gd += M[:, 0, :].T + np.einsum("kij,ik->jk", M[:, 1:, :], u_nodes)
    return g, gd


def g_value_and_dot(spec, grid, u, y, k):
    g, gd = g_dot_all(spec, grid, u, y)
    return g[:, k], gd[:, k]


# ---------------------------------------------------------------- controllability

def check_controllability(arcs, M, m, alpha_tol=1e-6):
    """Smallest singular value of the free-rows/active-columns block per arc.

    ``M`` has shape (n_t + 1, m, q).  Returns a list of ``(sigma, passed)``.
    """
    out = []
    for arc in arcs.arcs:
        C = sorted(arc.active)
        Bf = arc.free(m)
        if not C:
            out.append((np.inf, True))
            continue
        if len(C) > len(Bf):
            out.append((0.0, False))
            continue
        nodes = list(arc.interior_nodes()) or [arc.start]
        sig = min(np.linalg.svd(M[k][np.ix_(Bf, C)], compute_uv=False)[-1] for k in nodes)
        out.append((float(sig), bool(sig > alpha_tol)))
    return out


# ---------------------------------------------------------------- multiplier density

def _grad_x(v, h):
    """Central-difference x-derivative with zero boundary values."""
    padded = np.pad(v, [(0, 0)] * (v.ndim - 1) + [(1, 1)])
    return (padded[..., 2:] - padded[..., :-2]) / (2.0 * h)


def compute_a_all(spec, grid, u, y, p1, mu):
    """The field ``a_i(t_k)`` for every node; shape (m, n_t + 1)."""
    for i, bi in enumerate(spec.b[1:], start=1):
        if not expr.differentiable(bi):
            raise NotDifferentiable(f"b{i} is tabulated; its gradient is unavailable")
    S = sampled(spec, grid)
    mu = np.atleast_2d(mu)
    yd = spec.spacetime_values(spec.yd, grid, grid.t)
    dens = S.f * p1 + 2.0 * spec.gamma * y ** 3 * p1 - y * (y - yd)
    if spec.q:
        AC = pdesolve.A_of_c(spec, grid, y, u)
        dens = dens - np.einsum("jk,jkx->kx", mu, AC) * y
    a = grid.h * np.einsum("ix,kx->ik", S.b[1:], dens)
    db = np.stack([np.broadcast_to(spec.space_values(bi, grid, order=1), (grid.n_x,))
                   for bi in spec.b[1:]])
    flux = p1 * _grad_x(y, grid.h) - y * _grad_x(p1, grid.h)
    a -= grid.h * np.einsum("ix,kx->ik", db, flux)
    if spec.q:
        M = _m_all(spec, grid, y)[:, 1:, :]
        Mdot = np.gradient(M, grid.dt, axis=0)
        a -= np.einsum("kij,jk->ik", Mdot, mu)
    return a


def compute_a(spec, grid, u, y, p1, mu, k):
    return compute_a_all(spec, grid, u, y, p1, mu)[:, k]


def mu_density(arcs, a, M, m):
    """Least-squares density of the multiplier on constrained arcs.

    ``a`` has shape (m, n_t + 1) and ``M`` shape (n_t + 1, m, q).  Returns
    (q, n_t + 1) with NaN where no constraint is active.
    """
    q = M.shape[2]
    out = np.full((q, M.shape[0]), np.nan)
    for arc in arcs.arcs:
        C = sorted(arc.active)
        if not C:
            continue
        Bf = arc.free(m)
        for k in arc.interior_nodes():
            Mb = M[k][np.ix_(Bf, C)]
            N = Mb.T @ Mb
            if Mb.size == 0 or np.linalg.cond(N) > 1e14:
                raise SingularNormalMatrix(f"normal matrix singular at node {k}")
            out[C, k] = np.linalg.solve(N, Mb.T @ a[Bf, k])
    return out


# ---------------------------------------------------------------- sign and jump checks

def check_sign_conditions(psi, arcs, tol, t_steps=None):
    """Switching-sign conditions against the per-step contact sets."""
    psi = np.atleast_2d(psi)
    bad_pos = (psi > tol) & ~arcs.lower_mask
    bad_neg = (psi < -tol) & ~arcs.upper_mask
    bad = bad_pos | bad_neg
    resid_pos = np.where(~arcs.lower_mask, np.maximum(psi, 0.0), 0.0)
    resid_neg = np.where(~arcs.upper_mask, np.maximum(-psi, 0.0), 0.0)
    residual = float(np.max(np.maximum(resid_pos, resid_neg), initial=0.0))
    steps = np.flatnonzero(bad.any(axis=0))
    t_steps = np.arange(psi.shape[1]) * arcs.dt if t_steps is None else t_steps
    return [_entry("sign_conditions", not bad.any(), residual, tol, t_steps[steps],
                   violations=int(bad.sum()))]


def _one_sided(values, times, idx, tau, method):
    if method == "mean":
        return float(np.mean(values[idx]))
    A = np.vstack([np.ones(len(idx)), times[idx] - tau]).T
    coef = np.linalg.lstsq(A, values[idx], rcond=None)[0]
    return float(coef[0])


def junction_limits(values, times, j, tau, method="mean", width=3, node_based=True):
    """Left and right limits at junction node ``j``.

    Node quantities use nodes ``j-width..j-1`` and ``j+1..j+width``; step
    quantities skip the step on each side that touches node ``j``.
    """
    n = values.shape[-1]
    if node_based:
        left = np.arange(j - width, j)
        right = np.arange(j + 1, j + 1 + width)
    else:
        left = np.arange(j - 1 - width, j - 1)
        right = np.arange(j + 1, j + 1 + width)
    left = left[(left >= 0) & (left < n)]
    right = right[(right >= 0) & (right < n)]
    if not len(left) or not len(right):
        return np.nan, np.nan
    return (_one_sided(values, times, left, tau, method),
            _one_sided(values, times, right, tau, method))


def check_junction_jumps(arcs, psi, u, gdot, mu, grid, tol=1e-4, method="mean"):
    """Jump products at interior junctions, scaled by the quantities' sizes."""
    psi, u = np.atleast_2d(psi), np.atleast_2d(u)
    gdot, mu = np.atleast_2d(gdot), np.atleast_2d(mu)
    t_mid, t = grid.t_mid, grid.t
    psi_scale = max(np.max(np.abs(psi), initial=0.0) * np.max(np.abs(u), initial=0.0), 1e-300)
    gm_scale = max(np.max(np.abs(gdot), initial=0.0) * np.max(np.abs(mu), initial=0.0), 1e-300)
    pu, gm = [], []
    for j in arcs.junction_nodes:
        tau = t[j]
        worst = 0.0
        for i in range(psi.shape[0]):
            pl, pr = junction_limits(psi[i], t_mid, j, tau, method, node_based=False)
            ul, ur = junction_limits(u[i], t_mid, j, tau, "mean", node_based=False)
            worst = max(worst, abs((pr - pl) * (ur - ul)))
        pu.append(worst)
        worst = 0.0
        for k in range(gdot.shape[0]):
            gl, gr = junction_limits(gdot[k], t, j, tau, method)
            ml, mr = junction_limits(mu[k], t, j, tau, method)
            worst = max(worst, abs((gr - gl) * (mr - ml)))
        gm.append(worst)
    taus = np.array([t[j] for j in arcs.junction_nodes])
    pu, gm = np.nan_to_num(np.array(pu)), np.nan_to_num(np.array(gm))
    tol_pu, tol_gm = tol * psi_scale, tol * gm_scale
    return [
        _entry("junction_psi_u", np.all(pu <= tol_pu), np.max(pu, initial=0.0), tol_pu,
               taus[pu > tol_pu], per_junction=pu.tolist(), method=method),
        _entry("junction_g_mu", np.all(gm <= tol_gm), np.max(gm, initial=0.0), tol_gm,
               taus[gm > tol_gm], per_junction=gm.tolist(), method=method),
    ]


# ---------------------------------------------------------------- full report

def _trim(arc, margin):
    return range(arc.start + margin, arc.stop - margin + 1)


def check_first_order(spec, grid, u, y, mu_weights, opts=None):
    """Run every first-order check on a candidate and its multiplier."""
    opts = opts or FocOptions()
    u = grid.check_control(u, spec.m)
    W = np.asarray(mu_weights, dtype=float).reshape(spec.q, grid.n_t + 1)
    y, p1, p, psi = optim.adjoint_sweep(spec, grid, u, W, y=y)
    mu = pdesolve.mu_from_weights(W)
    arcs = detect_arcs(spec, grid, u, y, opts.eps_u, opts.eps_g)
    sign_tol = opts.sign_tol if opts.sign_tol is not None else 1e-4 * max(np.max(np.abs(psi)), 1e-300)
    checks = []

    g, gd = g_dot_all(spec, grid, u, y)
    _, eps_g = default_eps(spec)
    if opts.eps_g is not None:
        eps_g = np.broadcast_to(np.asarray(opts.eps_g, float), (spec.q,))
    viol = np.max(g - eps_g[:, None], initial=-np.inf, axis=None) if spec.q else -np.inf
    checks.append(_entry("primal_feasibility", viol <= 0, max(float(np.max(g, initial=0.0)), 0.0),
                         float(np.max(eps_g, initial=0.0)),
                         grid.t[np.flatnonzero((g > eps_g[:, None]).any(axis=0))]))
    checks.append(_entry("multiplier_sign", np.all(W >= 0), max(0.0, -float(np.min(W, initial=0.0))),
                         0.0))
    comp = optim.complementarity_residual(spec, grid, y, W)
    mass = W.sum(axis=1)
    ctol = opts.complementarity_tol * mass
    checks.append(_entry("complementarity", np.all(comp <= ctol + 1e-300),
                         float(np.max(comp, initial=0.0)), float(np.max(ctol, initial=0.0)),
                         mass=mass.tolist()))
    checks += check_sign_conditions(psi, arcs, sign_tol, grid.t_mid)
    checks += check_junction_jumps(arcs, psi, u, gd, mu, grid, opts.jump_tol, opts.jump_method)

    M = _m_all(spec, grid, y)[:, 1:, :]
    ctl = check_controllability(arcs, M, spec.m, opts.alpha_tol)
    sig = [s for s, _ in ctl if np.isfinite(s)]
    checks.append(_entry("controllability", all(ok for _, ok in ctl), min(sig) if sig else np.inf,
                         opts.alpha_tol, [a.t0 for a, (_, ok) in zip(arcs.arcs, ctl) if not ok],
                         per_arc=[None if not np.isfinite(s) else s for s, _ in ctl]))

    density = np.full((spec.q, grid.n_t + 1), np.nan)
    a = None
    try:
        a = compute_a_all(spec, grid, u, y, p1, mu)
        if all(ok for _, ok in ctl):
            density = mu_density(arcs, a, M, spec.m)
    except (NotDifferentiable, SingularNormalMatrix) as exc:
        checks.append(_entry("multiplier_density", False, np.inf, opts.density_tol, reason=str(exc)))
    else:
        empirical = W / grid.dt
        diffs, locs = [], []
        for arc in arcs.arcs:
            for k in _trim(arc, 3):
                for jj in arc.active:
                    if 0 < k < grid.n_t and np.isfinite(density[jj, k]):
                        diffs.append(abs(density[jj, k] - empirical[jj, k]))
                        locs.append(grid.t[k])
        diffs = np.array(diffs)
        scale = max(1.0, float(np.nanmax(np.abs(density), initial=0.0)) if np.isfinite(density).any() else 1.0)
        tol = opts.density_tol * scale
        checks.append(_entry("multiplier_density", np.all(diffs <= tol),
                             float(np.max(diffs, initial=0.0)), tol,
                             np.array(locs)[diffs > tol] if len(diffs) else ()))
    report = FocReport(checks)
    report.data = {"arcs": arcs, "psi": psi, "p": p, "p1": p1, "mu": mu, "g": g, "gdot": gd,
                   "a": a, "density": density, "M": M, "sign_tol": sign_tol}
    report.checks.insert(0, _entry("arc_structure", True, 0.0, 0.0, arcs.junctions,
                                   arcs=[_arc_dict(x) for x in arcs.arcs],
                                   merged=[[grid.t[a], grid.t[b]] for a, b in arcs.merged]))
    return report


def _arc_dict(arc):
    return {"t0": arc.t0, "t1": arc.t1, "lower": sorted(i + 1 for i in arc.lower),
            "upper": sorted(i + 1 for i in arc.upper), "active": sorted(j + 1 for j in arc.active)}


def require_controllable(arcs, M, m, alpha_tol=1e-6):
    for sigma, ok in check_controllability(arcs, M, m, alpha_tol):
        if not ok:
            raise ControllabilityRequired(f"controllability fails (sigma_min = {sigma:.3e})")
