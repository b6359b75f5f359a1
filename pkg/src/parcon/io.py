"""Run directories: everything needed to re-check a solution later."""

from __future__ import annotations

import csv
import json
import time
from pathlib import Path

import numpy as np

from . import pdesolve
from .errors import GridMismatch, ParseError, SchemaError
from .model import dumps_problem, load_problem

RUN_FILES = ("spec.prob", "control.csv", "state.csv", "costate.csv", "mu.csv")


def write_mu_csv(path, grid, weights, mu):
    q = weights.shape[0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"weight_{j + 1}" for j in range(q)] + [f"mu_{j + 1}" for j in range(q)])
        for k, t in enumerate(grid.t):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in weights[:, k]]
                       + [repr(float(v)) for v in mu[:, k]])


def read_mu_csv(path, grid, q):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if q == 0:
        return np.zeros((0, grid.n_t + 1))
    if data.shape != (grid.n_t + 1, 1 + 2 * q):
        raise GridMismatch(f"{Path(path).name}: shape {data.shape} does not match the grid")
    return data[:, 1:1 + q].T.copy()


def write_run(outdir, spec, grid, traj, bundle, clog, timestamp=True):
    """Write a run directory; returns its path."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "spec.prob").write_text(dumps_problem(spec, grid))
    pdesolve.write_control_csv(out / "control.csv", grid, traj.u)
    pdesolve.write_field_csv(out / "state.csv", grid, traj.y)
    pdesolve.write_field_csv(out / "costate.csv", grid, bundle.p)
    pdesolve.write_field_csv(out / "costate_alt.csv", grid, bundle.p1)
    write_mu_csv(out / "mu.csv", grid, bundle.mu_weights, bundle.mu)
    payload = clog.to_dict()
    if timestamp:
        payload["metadata"] = {"timestamp": time.strftime("%Y-%m-%dT%H:%M:%S")}
    with open(out / "log.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def read_run(rundir):
    """Load ``(spec, grid, u, y, mu_weights)`` from a run directory."""
    rd = Path(rundir)
    if not rd.is_dir():
        raise SchemaError(f"not a run directory: {rd}")
    missing = [f for f in RUN_FILES if not (rd / f).is_file()]
    if missing:
        raise SchemaError(f"run directory {rd} lacks {', '.join(missing)}")
    try:
        spec, grid = load_problem(rd / "spec.prob")
    except ParseError as exc:
        raise SchemaError(f"spec.prob: {exc}") from exc
    if grid is None:
        raise SchemaError("spec.prob has no [grid] section")
    try:
        u = pdesolve.read_control_csv(rd / "control.csv", grid, spec.m)
        y = pdesolve.read_field_csv(rd / "state.csv", grid)
        W = read_mu_csv(rd / "mu.csv", grid, spec.q)
    except (GridMismatch, ValueError) as exc:
        raise SchemaError(f"malformed run directory: {exc}") from exc
    return spec, grid, u, y, W
