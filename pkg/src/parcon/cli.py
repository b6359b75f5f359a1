"""Command-line entry point.

Exit codes: 0 success, 1 input error, 2 nonconvergence, 3 a condition check
failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import benchmark, foc, io, optim, pdesolve, soc
from .errors import MaxIterations, ParconError, SolverError
from .model import benchmark_spec, load_problem, sampled, validate
from .spectral import analytic_example

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED, EXIT_CHECK = 0, 1, 2, 3

log = logging.getLogger("parcon")


@dataclass
class RunConfig:
    """Parsed command line."""

    subcommand: str
    path: Path | None = None
    out: Path | None = None
    nx: int | None = None
    nt: int | None = None
    seed: int = 0
    solve: dict = field(default_factory=dict)
    foc: dict = field(default_factory=dict)
    soc_tol: float = 1e-6
    directions: int = 64
    plot: bool = False


def _positive_int(text):
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="parcon", description=(
        "Solve and verify state-constrained bilinear control problems for the heat equation."))
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="subcommand", required=True)

    def grid_flags(sp):
        sp.add_argument("--nx", type=_positive_int, help="interior spatial nodes")
        sp.add_argument("--nt", type=_positive_int, help="time steps")

    def solve_flags(sp):
        sp.add_argument("--outer-iters", type=_positive_int)
        sp.add_argument("--inner-iters", type=_positive_int)
        sp.add_argument("--rho0", type=_positive_float)
        sp.add_argument("--inner", choices=("lbfgsb", "spg"))
        sp.add_argument("--tol-grad", type=_positive_float, help="projected-gradient tolerance")
        sp.add_argument("--tol-constraint", type=_positive_float,
                        help="violation and complementarity tolerance")

    def check_flags(sp):
        sp.add_argument("--tol-sign", type=_positive_float)
        sp.add_argument("--tol-jump", type=_positive_float)
        sp.add_argument("--tol-eps-u", type=_positive_float)
        sp.add_argument("--tol-eps-g", type=_positive_float)
        sp.add_argument("--tol-density", type=_positive_float)
        sp.add_argument("--jump-method", choices=("mean", "linear"))

    s = sub.add_parser("solve", help="solve a problem file and write a run directory")
    s.add_argument("problem", type=Path)
    s.add_argument("-o", "--out", type=Path, required=True)
    grid_flags(s)
    solve_flags(s)
    s.add_argument("--seed", type=int, default=0)

    c = sub.add_parser("check-foc", help="first-order checks on a run directory")
    c.add_argument("run", type=Path)
    c.add_argument("-o", "--out", type=Path, help="report directory (default: the run)")
    check_flags(c)

    c2 = sub.add_parser("check-soc", help="second-order checks on a run directory")
    c2.add_argument("run", type=Path)
    c2.add_argument("-o", "--out", type=Path, help="report directory (default: the run)")
    c2.add_argument("--seed", type=int, default=0)
    c2.add_argument("--directions", type=_positive_int, default=64)
    c2.add_argument("--tol-soc", type=_positive_float, default=1e-6)
    c2.add_argument("--tol-eps-u", type=_positive_float)
    c2.add_argument("--tol-eps-g", type=_positive_float)

    e = sub.add_parser("example-b", help="solve the benchmark instance and compare with its closed form")
    e.add_argument("-o", "--out", type=Path, default=Path("example_b"))
    grid_flags(e)
    solve_flags(e)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--plot", action="store_true", help="also emit figure1.gp and its CSVs")

    pl = sub.add_parser("plot", help="emit a gnuplot script and CSVs for a run directory")
    pl.add_argument("run", type=Path)
    pl.add_argument("-o", "--out", type=Path, help="output directory (default: the run)")
    return p


_SOLVE_KEYS = {"outer_iters": "outer_iters", "inner_iters": "inner_iters", "rho0": "rho0",
               "inner": "inner", "tol_grad": "grad_tol", "tol_constraint": "constraint_tol"}
_FOC_KEYS = {"tol_sign": "sign_tol", "tol_jump": "jump_tol", "tol_eps_u": "eps_u",
             "tol_eps_g": "eps_g", "tol_density": "density_tol", "jump_method": "jump_method"}


def parse_config(argv=None):
    ns = build_parser().parse_args(argv)
    d = vars(ns)
    cfg = RunConfig(subcommand=ns.subcommand)
    cfg.path = d.get("problem") or d.get("run")
    cfg.out = d.get("out")
    cfg.nx, cfg.nt = d.get("nx"), d.get("nt")
    cfg.seed = d.get("seed", 0)
    cfg.solve = {v: d[k] for k, v in _SOLVE_KEYS.items() if d.get(k) is not None}
    cfg.foc = {v: d[k] for k, v in _FOC_KEYS.items() if d.get(k) is not None}
    cfg.soc_tol = d.get("tol_soc", 1e-6)
    cfg.directions = d.get("directions", 64)
    cfg.plot = d.get("plot", False)
    if d.get("verbose"):
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    return cfg


def _err(msg):
    print(f"parcon: error: {msg}", file=sys.stderr)


def _grid(cfg, spec, grid):
    base = grid or spec.grid(101, 600)
    return spec.grid(cfg.nx or base.n_x, cfg.nt or base.n_t)


def _solve(spec, grid, cfg, outdir):
    opts = replace(optim.SolveOptions(), seed=cfg.seed, **cfg.solve)
    try:
        traj, bundle, clog = optim.solve_ocp(spec, grid, opts)
    except MaxIterations as exc:
        if exc.result is not None:
            io.write_run(outdir, spec, grid, *exc.result)
        _err(f"{exc} (partial results written to {outdir})")
        return None, EXIT_NONCONVERGED
    io.write_run(outdir, spec, grid, traj, bundle, clog)
    return (traj, bundle, clog), EXIT_OK


def cmd_solve(cfg):
    spec, grid = load_problem(cfg.path)
    spec = validate(spec)
    grid = _grid(cfg, spec, grid)
    result, code = _solve(spec, grid, cfg, cfg.out)
    if result is not None:
        print(f"{result[2].message}; J = {optim.cost(spec, grid, result[0].u, result[0].y):.10f}")
        print(f"run directory: {cfg.out}")
    return code


def _report_dir(cfg):
    out = cfg.out or cfg.path
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_check_foc(cfg):
    spec, grid, u, y, W = io.read_run(cfg.path)
    report = foc.check_first_order(spec, grid, u, y, W, foc.FocOptions(**cfg.foc))
    report.to_json(_report_dir(cfg) / "foc_report.json")
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_CHECK


def cmd_check_soc(cfg):
    spec, grid, u, y, W = io.read_run(cfg.path)
    report = soc.verify_second_order(spec, grid, u, y, W, count=cfg.directions, seed=cfg.seed,
                                     soc_tol=cfg.soc_tol, eps_u=cfg.foc.get("eps_u"),
                                     eps_g=cfg.foc.get("eps_g"))
    out = _report_dir(cfg)
    report.to_json(out / "soc_report.json")
    report.write_minimizer(out / "soc_minimizer.csv", grid)
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_CHECK


def cmd_check(cfg):
    """Both checks in sequence; 0 iff everything passes."""
    a = cmd_check_foc(cfg)
    b = cmd_check_soc(cfg)
    return EXIT_CHECK if EXIT_CHECK in (a, b) else EXIT_OK


def cmd_example_b(cfg):
    spec, grid = benchmark_spec()
    grid = _grid(cfg, spec, grid)
    out = cfg.out
    result, code = _solve(spec, grid, cfg, out)
    if result is None:
        return code
    traj, bundle, _ = result
    table = benchmark.compare(spec, grid, traj.u, traj.y, bundle.mu_weights)
    text = benchmark.format_table(table)
    (out / "comparison.txt").write_text(text + "\n")
    payload = {"grid": {"nx": grid.n_x, "nt": grid.n_t}, "errors": table.to_dict(),
               "warning": not table.ok,
               "J": table.series["J"], "J_reference": table.series["J_ref"]}
    with open(out / "comparison.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(text)
    if payload["warning"]:
        print("warning: some errors exceed the acceptance thresholds", file=sys.stderr)
    if cfg.plot:
        write_plot(out, spec, grid, traj.u, traj.y, bundle.mu_weights, reference=True)
    return EXIT_OK


def cmd_plot(cfg):
    spec, grid, u, y, W = io.read_run(cfg.path)
    out = _report_dir(cfg)
    ref = spec.m == 1 and spec.q == 1 and _is_benchmark(spec)
    write_plot(out, spec, grid, u, y, W, reference=ref)
    print(f"wrote {out / 'figure1.gp'}")
    return EXIT_OK


def _is_benchmark(spec):
    return spec == benchmark_spec()[0]


# ---------------------------------------------------------------- plotting

GNUPLOT = """\
# two panels: optimal control (left), constraint mode and multipliers (right)
# run with: gnuplot figure1.gp   (writes figure1.svg)
set terminal svg size 1100,420 dynamic
set output 'figure1.svg'
set datafile separator ','
set key top right
set multiplot layout 1,2
set title 'control'
set xlabel 't'
plot 'plot_control.csv' using 1:2 with lines lw 2 title 'u computed'{uref}
set title 'constraint mode and multipliers'
plot 'plot_modes.csv' using 1:2 with lines lw 2 title '<y,c>',\\
     'plot_modes.csv' using 1:3 with lines lw 2 title '<p,c>',\\
     'plot_modes.csv' using 1:4 with lines lw 2 title 'mu'{mref}
unset multiplot
"""


def write_plot(out, spec, grid, u, y, W, reference=False):
    """Write ``figure1.gp`` plus the CSVs it reads; returns the script path."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    y, p1, p, psi = optim.adjoint_sweep(spec, grid, u, W, y=y)
    c = sampled(spec, grid).c
    mu = pdesolve.mu_from_weights(W)
    ym = grid.h * y @ c[0] if spec.q else np.zeros(grid.n_t + 1)
    pm = grid.h * p @ c[0] if spec.q else np.zeros(grid.n_t + 1)
    mm = mu[0] if spec.q else np.zeros(grid.n_t + 1)
    ex = analytic_example() if reference else None
    with open(out / "plot_control.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "u"] + (["u_exact"] if reference else []))
        for k, t in enumerate(grid.t_mid):
            w.writerow([repr(float(t)), repr(float(u[0, k]))]
                       + ([repr(float(ex.u(t)))] if reference else []))
    with open(out / "plot_modes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        head = ["t", "y1", "p1", "mu"]
        if reference:
            head += ["y1_exact", "p1_exact", "mu_exact"]
        w.writerow(head)
        for k, t in enumerate(grid.t):
            row = [t, ym[k], pm[k], mm[k]]
            if reference:
                row += [ex.y1(t), ex.p1(t), ex.mu(t)]
            w.writerow([repr(float(v)) for v in row])
    uref = (",\\\n     'plot_control.csv' using 1:3 with lines dt 2 title 'u exact'"
            if reference else "")
    mref = (",\\\n     'plot_modes.csv' using 1:5 with lines dt 2 title '<y,c> exact',\\\n"
            "     'plot_modes.csv' using 1:6 with lines dt 2 title '<p,c> exact',\\\n"
            "     'plot_modes.csv' using 1:7 with lines dt 2 title 'mu exact'"
            if reference else "")
    script = out / "figure1.gp"
    script.write_text(GNUPLOT.format(uref=uref, mref=mref))
    return script


COMMANDS = {"solve": cmd_solve, "check-foc": cmd_check_foc, "check-soc": cmd_check_soc,
            "example-b": cmd_example_b, "plot": cmd_plot}


def main(argv=None):
    try:
        cfg = parse_config(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return COMMANDS[cfg.subcommand](cfg)
    except FileNotFoundError as exc:
        _err(str(exc))
        return EXIT_INPUT
    except SolverError as exc:
        _err(f"solver failure: {exc}")
        return EXIT_NONCONVERGED
    except ParconError as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
