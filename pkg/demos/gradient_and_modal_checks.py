"""Two cheap consistency checks on a small semilinear problem.

First, the adjoint gradient of the augmented Lagrangian is compared with
central differences along random directions. The discrete adjoint is
exact for the scheme, so the agreement is limited only by the
difference quotient. Second, the finite-difference state of a linear
problem is projected onto the first sine modes and compared with the
Galerkin modal solver; the gap shrinks like ``h^2 + dt``.

Run with ``python3 demos/gradient_and_modal_checks.py``.
"""

import numpy as np

from parcon import optim, pdesolve as pd
from parcon.model import SpaceTimeGrid, make_spec, validate
from parcon.spectral import build_modal, project_field, solve_state_modal


def gradient_check(rng):
    spec = validate(make_spec(T=1.0, gamma=1.0, f="sin(2)", y0="sin(1)", yd="0.5*sin(1)",
                              u_lo=[-3], u_hi=[3]))
    grid = SpaceTimeGrid(31, 40, 1.0, 1.0)
    u = rng.uniform(-3, 3, (1, grid.n_t))
    W = np.zeros((spec.q, grid.n_t + 1))
    G = optim.reduced_gradient(spec, grid, u, W)
    print("directional derivative: adjoint vs central difference")
    for _ in range(5):
        e = rng.normal(size=u.shape)
        tau = 1e-5
        fd = (optim.lagrangian(spec, grid, u + tau * e, W)
              - optim.lagrangian(spec, grid, u - tau * e, W)) / (2 * tau)
        exact = grid.dt * float(np.sum(G * e))
        print(f"  {exact:+.10f}  {fd:+.10f}  rel {abs(fd - exact) / abs(exact):.1e}")


def modal_check(rng):
    spec = validate(make_spec(T=1.0, b=("0", "1 + 0.5*sin(2)"), f="sin(1)",
                              y0="sin(1) - 0.3*sin(2)", u_lo=[-2], u_hi=[2]))
    ms = build_modal(spec, 3)
    levels = rng.uniform(-2, 2, 8)
    print("finite differences vs three-mode Galerkin")
    for n in (15, 31, 63):
        nt = 5 * (n + 1) // 2
        grid = SpaceTimeGrid(n, nt, 1.0, 1.0)
        u = np.repeat(levels, nt // 8)[None, :]
        gap = np.max(np.abs(project_field(pd.solve_state(spec, grid, u), grid, 3)
                            - solve_state_modal(ms, u, nt)))
        print(f"  n_x = {n:3d}, n_t = {nt:4d}: max mode gap {gap:.2e}, "
              f"gap / (h^2 + dt) = {gap / (grid.h ** 2 + grid.dt):.2f}")


if __name__ == "__main__":
    rng = np.random.default_rng(0)
    gradient_check(rng)
    modal_check(rng)
