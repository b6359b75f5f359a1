import itertools
import math

import numpy as np
import pytest
from scipy import optimize

from parcon import optim, pdesolve as pd
from parcon.errors import MaxIterations
from parcon.model import SpaceTimeGrid, benchmark_spec, make_spec, sampled, validate
from parcon.spectral import analytic_example

from test_pdesolve import full_nodes, table_fd

LN2 = math.log(2)


def tracking_spec_for(y_target, grid, **kw):
    yfull = full_nodes(y_target)
    return validate(make_spec(yd=table_fd(yfull), ydT=table_fd(yfull[-1]), **kw), grid)


class TestCost:
    def test_benchmark_optimum_on_grid(self):
        spec, grid = benchmark_spec()
        ref = analytic_example()
        c1 = sampled(spec, grid).c[0]
        y = ref.y1(grid.t)[:, None] * c1[None, :]
        J = optim.cost(spec, grid, ref.u(grid.t_mid)[None, :], y)
        assert J == pytest.approx(ref.J, abs=2e-4)

    def test_perfect_tracking(self, rng):
        grid = SpaceTimeGrid(15, 20, 1.0, 1.0)
        Y = rng.normal(size=grid.field_shape)
        spec = tracking_spec_for(Y, grid)
        assert optim.cost(spec, grid, np.zeros((1, grid.n_t)), Y) == pytest.approx(0.0, abs=1e-28)

    def test_linear_control_term(self):
        spec = validate(make_spec(T=3.0, alpha=[2.0], u_lo=[0.0], u_hi=[2.0]))
        grid = spec.grid(7, 30)
        J = optim.cost(spec, grid, np.ones((1, grid.n_t)), np.zeros(grid.field_shape))
        assert J == pytest.approx(6.0, abs=1e-13)


class TestGradient:
    @pytest.mark.parametrize("gamma", [0.0, 1.0])
    def test_central_differences(self, gamma, rng):
        spec = validate(make_spec(T=1.0, gamma=gamma, b=("0.5", "1 + poly(1)", "sin(2)"),
                                  f="sin(1)", y0="sin(1)", yd="exp(1)*sin(1)", ydT="sin(2)",
                                  alpha=[0.1, -0.2], c=["sin(1)"], d=[-0.5],
                                  u_lo=[-2, -2], u_hi=[2, 2]))
        grid = spec.grid(31, 40)
        u = rng.uniform(-2, 2, (2, grid.n_t))
        W = rng.uniform(0, 0.1, (1, grid.n_t + 1))
        G = optim.reduced_gradient(spec, grid, u, W)
        for _ in range(5):
            e = rng.normal(size=u.shape)
            tau = 1e-5
            fd = (optim.lagrangian(spec, grid, u + tau * e, W)
                  - optim.lagrangian(spec, grid, u - tau * e, W)) / (2 * tau)
            exact = grid.dt * np.sum(G * e)
            assert abs(fd - exact) <= 1e-5 * abs(exact)

    def test_zero_costate_gives_alpha(self, rng):
        grid = SpaceTimeGrid(15, 20, 1.0, 1.0)
        base = validate(make_spec(gamma=1.0, y0="sin(1)", alpha=[0.7]))
        u = rng.uniform(-1, 1, (1, grid.n_t))
        Y = pd.solve_state(base, grid, u)
        spec = tracking_spec_for(Y, grid, gamma=1.0, y0="sin(1)", alpha=[0.7])
        G = optim.reduced_gradient(spec, grid, u, np.zeros((0, grid.n_t + 1)))
        assert np.allclose(G, 0.7, atol=1e-12)

    def test_benchmark_switching_sign(self, bench):
        spec, grid, traj, bundle, _ = bench
        G = optim.reduced_gradient(spec, grid, traj.u, bundle.mu_weights)[0]
        t = grid.t_mid
        first = t < LN2 - 2 * grid.dt
        assert np.all(G[first] < 0)
        expected = (np.exp(t) / 4 - np.exp(-t)) * np.exp(t)
        assert np.max(np.abs(G[first] - expected[first])) <= 2e-2


class TestComplementarity:
    spec = validate(make_spec(y0="sin(1)", c=["sin(1)"], d=[-1.0]))
    grid = SpaceTimeGrid(15, 10, 1.0, 1.0)

    def test_zero_measure(self):
        y = pd.solve_state(self.spec, self.grid, np.zeros((1, 10)))
        r = optim.complementarity_residual(self.spec, self.grid, y, np.zeros((1, 11)))
        assert r.tolist() == [0.0]

    def test_constructed_violation(self):
        W = np.zeros((1, 11))
        W[0, 4] = 1.0
        r = optim.complementarity_residual(self.spec, self.grid, np.zeros(self.grid.field_shape), W)
        assert r[0] == pytest.approx(1.0)

    def test_benchmark_run(self, bench):
        spec, grid, traj, bundle, _ = bench
        r = optim.complementarity_residual(spec, grid, traj.y, bundle.mu_weights)
        assert r[0] <= optim.SolveOptions().constraint_tol * bundle.mass[0]


class TestSolverInvariants:
    def test_box_and_sign(self, bench):
        spec, grid, traj, bundle, clog = bench
        lo, hi = spec.control_bounds(grid)
        assert np.all(traj.u >= lo - 1e-14) and np.all(traj.u <= hi + 1e-14)
        assert np.all(bundle.mu_weights >= 0)
        assert clog.converged

    def test_feasibility_trend(self, bench):
        viol = [r["max_violation"] for r in bench[4].outer]
        assert all(b <= a + optim.SolveOptions().grad_tol for a, b in zip(viol, viol[1:]))

    @pytest.mark.parametrize("inner", [optim._lbfgsb, optim._spg])
    def test_inner_descent(self, inner):
        spec, _ = benchmark_spec()
        grid = spec.grid(31, 60)
        lam = np.zeros((1, grid.n_t + 1))
        obj = optim._Augmented(spec, grid, lam, 10.0)
        lo, hi = spec.control_bounds(grid)
        u0 = spec.midpoint_control(grid)
        hist = inner(obj, u0, lo, hi, optim.SolveOptions(), 1e-4, 200)[-1]
        assert all(b <= a * (1 + 1e-12) + 1e-15 for a, b in zip(hist, hist[1:]))
        assert hist[-1] < hist[0]

    def test_nonconvergence_carries_result(self):
        spec, _ = benchmark_spec()
        grid = spec.grid(31, 60)
        with pytest.raises(MaxIterations) as exc:
            optim.solve_ocp(spec, grid, optim.SolveOptions(outer_iters=1))
        traj, bundle, clog = exc.value.result
        assert traj.u.shape == (1, 60) and not clog.converged

    @pytest.mark.parametrize("bad", [dict(rho0=0), dict(rho_growth=1), dict(grad_tol=-1),
                                     dict(armijo=2), dict(inner="newton")])
    def test_options_validation(self, bad):
        with pytest.raises(ValueError):
            optim.SolveOptions(**bad)


def test_inactive_constraint_reachable_target(rng):
    """A reachable target with a far-away constraint is tracked to zero cost."""
    grid = SpaceTimeGrid(15, 30, 1.0, 1.0)
    base = validate(make_spec(gamma=1.0, y0="sin(1)", u_lo=[-2], u_hi=[2]))
    u_star = 0.8 * np.sin(2 * np.pi * grid.t_mid)[None, :]
    Y = pd.solve_state(base, grid, u_star)
    spec = tracking_spec_for(Y, grid, gamma=1.0, y0="sin(1)", u_lo=[-2], u_hi=[2],
                             c=["sin(1)"], d=[-1e6])
    traj, bundle, clog = optim.solve_ocp(spec, grid)
    assert optim.cost(spec, grid, traj.u, traj.y) <= 1e-6
    assert np.all(bundle.mu_weights == 0)


def _scalar_problem():
    """One-mode instance: the state stays a multiple of the first sine mode."""
    spec = validate(make_spec(T=1.0, y0="sin(1)", yd="0.6*sin(1)", ydT="0.2*sin(1)",
                              alpha=[0.05], u_lo=[-3.0], u_hi=[3.0]))
    grid = spec.grid(31, 8)
    lam = 4 / grid.h ** 2 * math.sin(math.pi * grid.h / 2) ** 2
    return spec, grid, lam


def _scalar_cost(u, grid, lam):
    y = [1.0]
    for uk in u:
        y.append(y[-1] / (1 + grid.dt * (lam - uk)))
    y = np.array(y)
    mid = 0.5 * (y[:-1] + y[1:])
    return 0.5 * grid.dt * np.sum((mid - 0.6) ** 2) + 0.5 * (y[-1] - 0.2) ** 2 + 0.05 * grid.dt * np.sum(u)


def test_matches_bang_bang_enumeration():
    spec, grid, lam = _scalar_problem()
    lo, hi = -3.0, 3.0
    best = min((np.array(p) for p in itertools.product((lo, hi), repeat=8)),
               key=lambda p: _scalar_cost(p, grid, lam))
    u = best.astype(float)
    for _ in range(50):
        prev = _scalar_cost(u, grid, lam)
        for k in range(8):
            def f(s, k=k):
                w = u.copy()
                w[k] = s
                return _scalar_cost(w, grid, lam)
            u[k] = optimize.minimize_scalar(f, bounds=(lo, hi), method="bounded",
                                            options={"xatol": 1e-12}).x
        if prev - _scalar_cost(u, grid, lam) < 1e-15:
            break
    oracle = _scalar_cost(u, grid, lam)
    traj, _, _ = optim.solve_ocp(spec, grid)
    J = optim.cost(spec, grid, traj.u, traj.y)
    assert J == pytest.approx(oracle, abs=1e-6)
    assert np.max(np.abs(traj.u[0] - u)) <= 1e-2 * (hi - lo)
