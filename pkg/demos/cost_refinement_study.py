"""How the optimal cost approaches the closed-form value under refinement.

Backward Euler in time makes the discrete optimal cost first-order
accurate in the time step, so the gap to the exact optimum shrinks
roughly in proportion to ``dt`` and only slowly in ``h``. The script
solves the benchmark on a few grids and fits ``J_h - J* = a h^2 + b dt``.

Run with ``python3 demos/cost_refinement_study.py`` (a few minutes).
"""

import numpy as np

from parcon import optim
from parcon.model import SpaceTimeGrid, benchmark_spec
from parcon.spectral import analytic_example


def main():
    J_star = analytic_example().J
    rows = []
    for nx, nt in [(51, 600), (101, 300), (101, 600), (101, 1200)]:
        spec, base = benchmark_spec()
        grid = SpaceTimeGrid(nx, nt, base.L, base.T)
        traj, *_ = optim.solve_ocp(spec, grid)
        gap = optim.cost(spec, grid, traj.u, traj.y) - J_star
        rows.append((grid.h, grid.dt, gap))
        print(f"n_x = {nx:4d}  n_t = {nt:5d}  J_h - J* = {gap:+.3e}")

    h, dt, gap = map(np.array, zip(*rows))
    (a, b), *_ = np.linalg.lstsq(np.column_stack([h ** 2, dt]), gap, rcond=None)
    print(f"fit: J_h - J* ~ {a:+.3f} h^2 {b:+.3f} dt")
    print(f"time step needed for |J_h - J*| < 1e-3 at h = 1/102: "
          f"dt < {(1e-3 - abs(a) / 102 ** 2) / abs(b):.4f}")


if __name__ == "__main__":
    main()
