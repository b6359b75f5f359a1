"""Solve the bundled benchmark problem and verify its optimality conditions.

The benchmark has a closed-form optimum: a bang arc on [0, log 2), a
boundary arc where the first sine mode of the state is held at 2*sqrt(2)
up to t = 2, and an interior arc with zero control afterwards. This script
solves the discretized problem, compares it with the closed form and runs
the first- and second-order checks.

Run with ``python3 demos/benchmark_solve_and_verify.py``.
"""

import time

from parcon import benchmark, foc, optim, soc
from parcon.model import benchmark_spec


def main():
    spec, grid = benchmark_spec()
    print(f"grid: {grid.n_x} interior nodes, {grid.n_t} time steps")

    start = time.perf_counter()
    traj, bundle, clog = optim.solve_ocp(spec, grid)
    print(f"solved in {time.perf_counter() - start:.1f} s, "
          f"{len(clog.outer)} outer iterations")

    # distance from the closed-form optimum
    table = benchmark.compare(spec, grid, traj.u, traj.y, bundle.mu_weights)
    print(benchmark.format_table(table))

    # first-order conditions: sign of the switching function, complementarity,
    # multiplier density and the junction conditions
    rep = foc.check_first_order(spec, grid, traj.u, traj.y, bundle.mu_weights)
    print()
    print(rep.summary())

    # second-order conditions on randomly sampled strict critical directions
    srep = soc.verify_second_order(spec, grid, traj.u, traj.y, bundle.mu_weights, count=16)
    print()
    print(srep.summary())


if __name__ == "__main__":
    main()
