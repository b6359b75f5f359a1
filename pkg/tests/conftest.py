import time

import numpy as np
import pytest

from parcon import optim
from parcon.model import benchmark_spec

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def bench_timed():
    """Converged benchmark solve on the default 101 x 600 grid and its wall time."""
    spec, grid = benchmark_spec()
    start = time.perf_counter()
    traj, bundle, clog = optim.solve_ocp(spec, grid)
    return (spec, grid, traj, bundle, clog), time.perf_counter() - start


@pytest.fixture(scope="session")
def bench(bench_timed):
    return bench_timed[0]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
