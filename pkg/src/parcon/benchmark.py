"""Comparison of a computed solution with the closed-form benchmark optimum."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import foc, optim, pdesolve
from .model import sampled
from .spectral import analytic_example

# acceptance thresholds
THRESHOLDS = {
    "u_rel_l2": 2e-2,
    "y1_sup": 1e-2,
    "p1_at_0": 1e-2,
    "p1_sup_after": 1e-2,
    "mu_dot_sup": 5e-2,
    "J": 1e-3,
}


@dataclass
class Comparison:
    """``rows`` maps each quantity to ``(error, threshold, ok)``."""

    rows: dict
    series: dict = field(default_factory=dict, repr=False)

    @property
    def ok(self):
        return all(r[2] for r in self.rows.values())

    def to_dict(self):
        return {k: {"error": e, "threshold": t, "ok": ok} for k, (e, t, ok) in self.rows.items()}


def away_from(t, points, width):
    t = np.asarray(t)
    keep = np.ones(t.shape, dtype=bool)
    for s in points:
        keep &= np.abs(t - s) > width
    return keep


def compare(spec, grid, u, y, mu_weights):
    """Errors of a computed optimum against the benchmark evaluators.

    Returns a :class:`Comparison`; ``series`` holds the computed curves.
    """
    ref = analytic_example()
    ln2 = math.log(2.0)
    dt = grid.dt
    c1 = sampled(spec, grid).c[0]
    y_, p1f, p, psi = optim.adjoint_sweep(spec, grid, u, mu_weights, y=y)
    y1 = pdesolve.inner(y, c1, grid)
    pmode = pdesolve.inner(p, c1, grid)
    t, tm = grid.t, grid.t_mid

    keep = away_from(tm, (ln2, 2.0), dt)
    uref = ref.u(tm)
    u_err = math.sqrt(dt * np.sum(((u[0] - uref) ** 2)[keep]))
    u_rel = u_err / math.sqrt(dt * np.sum(uref ** 2))

    y1_sup = float(np.max(np.abs(y1 - ref.y1(t))))
    p1_at_0 = abs(float(pmode[0]) - float(ref.p1(0.0)))
    after = t > ln2 + dt
    p1_sup = float(np.max(np.abs(pmode[after])))

    rep = foc.check_first_order(spec, grid, u, y, mu_weights)
    dens = rep.data["density"][0]
    arc = (t > ln2 + dt) & (t < 2.0 - dt) & np.isfinite(dens)
    mu_sup = float(np.max(np.abs(dens[arc] - ref.mu_dot(t[arc])))) if arc.any() else float("inf")

    J = optim.cost(spec, grid, u, y)
    out = {
        "u_rel_l2": u_rel, "y1_sup": y1_sup, "p1_at_0": p1_at_0, "p1_sup_after": p1_sup,
        "mu_dot_sup": mu_sup, "J": abs(J - ref.J),
    }
    rows = {k: (float(v), THRESHOLDS[k], bool(v <= THRESHOLDS[k])) for k, v in out.items()}
    series = {"t": t, "t_mid": tm, "u": u[0], "y1": y1, "p1": pmode, "mu_dot": dens,
              "J": J, "J_ref": ref.J}
    return Comparison(rows, series)


def format_table(table):
    lines = [f"{'quantity':<14}{'error':>14}{'threshold':>12}  flag"]
    for k, (err, thr, ok) in table.rows.items():
        lines.append(f"{k:<14}{err:>14.6e}{thr:>12.1e}  {'ok' if ok else 'WARNING'}")
    return "\n".join(lines)
