import math

import numpy as np
import pytest
from scipy import integrate

from parcon import foc, optim, pdesolve as pd
from parcon.model import SpaceTimeGrid, benchmark_spec, make_spec, sampled, validate
from parcon.spectral import analytic_example

LN2 = math.log(2)


@pytest.fixture(scope="module")
def fo(bench):
    spec, grid, traj, bundle, _ = bench
    rep = foc.check_first_order(spec, grid, traj.u, traj.y, bundle.mu_weights)
    return spec, grid, traj, bundle, rep


def single_arc(n_t, lower=(), upper=(), active=(), dt=0.1):
    arc = foc.Arc(0, n_t, 0.0, n_t * dt, frozenset(lower), frozenset(upper), frozenset(active))
    return foc.ArcStructure([arc], np.zeros((1, n_t), bool), np.zeros((1, n_t), bool),
                            np.zeros((1, n_t + 1), bool), dt=dt)


class TestArcs:
    def test_benchmark_structure(self, fo):
        spec, grid, traj, bundle, rep = fo
        arcs = rep.data["arcs"]
        assert len(arcs.arcs) == 3
        assert arcs.junctions[0] == 0.0 and arcs.junctions[-1] == 3.0
        assert arcs.junctions[1] == pytest.approx(LN2, abs=2 * grid.dt)
        assert arcs.junctions[2] == pytest.approx(2.0, abs=2 * grid.dt)
        first, constrained, last = arcs.arcs
        assert first.upper == {0} and not first.active
        assert constrained.active == {0} and not constrained.upper and not constrained.lower
        assert not (last.active or last.upper or last.lower)

    def test_unconstrained_single_arc(self):
        spec = validate(make_spec(y0="sin(1)", c=["sin(1)"], d=[-5.0], u_lo=[-1], u_hi=[1]))
        grid = SpaceTimeGrid(15, 30, 1.0, 1.0)
        u = 0.5 * np.sin(np.linspace(0, 3, 30))[None, :]
        arcs = foc.detect_arcs(spec, grid, u, pd.solve_state(spec, grid, u))
        assert len(arcs.arcs) == 1
        a = arcs.arcs[0]
        assert not (a.lower or a.upper or a.active)

    def test_synthetic_contact(self):
        spec = validate(make_spec(T=3.0, y0="sin(1)", u_lo=[-1], u_hi=[1]))
        grid = spec.grid(15, 30)
        u = np.full((1, 30), 0.2)
        u[0, 10:20] = 1.0
        arcs = foc.detect_arcs(spec, grid, u, pd.solve_state(spec, grid, u))
        assert arcs.junctions == pytest.approx((0.0, 1.0, 2.0, 3.0))

    def test_stability_under_tighter_eps(self, fo):
        spec, grid, traj, bundle, rep = fo
        eu, eg = foc.default_eps(spec)
        a = foc.detect_arcs(spec, grid, traj.u, traj.y, eu, eg)
        b = foc.detect_arcs(spec, grid, traj.u, traj.y, eu / 2, eg / 2)
        assert len(a.arcs) == len(b.arcs)
        assert np.max(np.abs(np.subtract(a.junctions, b.junctions))) <= 2 * grid.dt


class TestConstraintDerivative:
    def test_benchmark_constrained_arc(self, fo):
        spec, grid, traj, bundle, rep = fo
        g, gd = foc.g_value_and_dot(spec, grid, traj.u, traj.y, int(round(1.5 / grid.dt)))
        # analytic Laplacian of c against the discrete one: O(h^2) mismatch
        assert abs(g[0]) <= 1e-6 and abs(gd[0]) <= 2 * np.pi ** 4 * grid.h ** 2

    def test_zero_state(self):
        spec = validate(make_spec(f="sin(1) + poly(1,-1)", c=["sin(1)"], d=[-0.3]))
        grid = SpaceTimeGrid(63, 10, 1.0, 1.0)
        g, gd = foc.g_value_and_dot(spec, grid, np.ones((1, 10)), np.zeros(grid.field_shape), 4)
        expected = integrate.quad(lambda x: math.sqrt(2) * math.sin(math.pi * x) * (
            math.sqrt(2) * math.sin(math.pi * x) + x - x * x), 0, 1)[0]
        assert g[0] == pytest.approx(-0.3)
        assert gd[0] == pytest.approx(expected, rel=2 * grid.h ** 2)

    spec_td = validate(make_spec(T=1.0, gamma=1.0, b=("0", "1 + poly(1)"), f="sin(2)",
                                 y0="sin(1)", c=["sin(1) + sin(2)"], d=[-5.0]))

    def _g(self, n_x, n_t):
        grid = self.spec_td.grid(n_x, n_t)
        u = np.cos(2 * np.pi * grid.t_mid)[None, :]
        y = pd.solve_state(self.spec_td, grid, u)
        return grid, *foc.g_dot_all(self.spec_td, grid, u, y)

    def test_step_difference_is_spatially_consistent(self):
        errs = []
        for n in (63, 127):
            grid, g, gd = self._g(n, 100)
            errs.append(np.max(np.abs(np.diff(g[0]) / grid.dt - gd[0, 1:])))
        assert errs[1] <= 0.3 * errs[0]
        assert errs[1] <= np.pi ** 4 * (1 / 128) ** 2

    def test_centered_difference_first_order(self):
        errs = []
        for nt in (200, 400):
            grid, g, gd = self._g(255, nt)
            cd = (g[0, 2:] - g[0, :-2]) / (2 * grid.dt)
            keep = grid.t[1:-1] > 0.1
            errs.append(np.max(np.abs(cd - gd[0, 1:-1])[keep]))
        assert errs[1] <= 0.6 * errs[0]


class TestMMatrix:
    def test_benchmark_value(self, fo):
        spec, grid, traj, bundle, rep = fo
        assert foc.m_matrix(spec, grid, traj.y, int(round(1 / grid.dt)))[0, 0] == pytest.approx(2, abs=1e-2)

    def test_zero_coefficient(self):
        spec = validate(make_spec(b=("0", "0"), c=["sin(1)"], d=[-1.0]))
        grid = SpaceTimeGrid(15, 4, 1.0, 1.0)
        assert np.all(foc.m_matrix(spec, grid, np.ones(grid.field_shape), 2) == 0)

    def test_against_refined_quadrature(self):
        spec = validate(make_spec(b=("0", "1 + poly(1)", "sin(2)"), c=["sin(1)", "poly(1,-1)"],
                                  d=[-1.0, -1.0], u_lo=[-1, -1], u_hi=[1, 1]))
        yfun = lambda x: np.sin(np.pi * x) * np.exp(x)
        b = [lambda x: 1 + x, lambda x: math.sqrt(2) * np.sin(2 * np.pi * x)]
        c = [lambda x: math.sqrt(2) * np.sin(np.pi * x), lambda x: x - x * x]
        for n in (31, 63):
            grid = SpaceTimeGrid(n, 2, 1.0, 1.0)
            y = np.tile(yfun(grid.x), (3, 1))
            M = foc.m_matrix(spec, grid, y, 1)
            xf = np.linspace(0, 1, 4 * (n + 1) + 1)
            ref = np.array([[integrate.simpson(bi(xf) * cj(xf) * yfun(xf), x=xf) for cj in c] for bi in b])
            assert np.max(np.abs(M - ref)) <= 2 * grid.h ** 2


class TestControllability:
    def test_benchmark_arc(self, fo):
        ctl = fo[4].check("controllability")
        sig = [s for s in ctl["per_arc"] if s is not None]
        assert ctl["passed"] and sig == pytest.approx([2.0], abs=1e-2)

    def test_no_active_constraint(self):
        arcs = single_arc(4)
        assert foc.check_controllability(arcs, np.ones((5, 1, 1)), 1) == [(np.inf, True)]

    def test_column_matrix(self):
        arcs = single_arc(4, active=[0])
        (sig, ok), = foc.check_controllability(arcs, np.ones((5, 2, 1)), 2)
        assert sig == pytest.approx(math.sqrt(2)) and ok


class TestDensity:
    def test_benchmark_values(self, fo):
        spec, grid, traj, bundle, rep = fo
        a, dens = rep.data["a"], rep.data["density"]
        k15 = int(round(1.5 / grid.dt))
        assert a[0, k15] == pytest.approx(1.0, abs=2e-2)
        assert dens[0, int(round(0.85 / grid.dt))] == pytest.approx(1.0, abs=2e-2)
        assert dens[0, k15] == pytest.approx(0.5, abs=2e-2)

    def test_zero_field(self):
        arcs = single_arc(4, active=[0])
        dens = foc.mu_density(arcs, np.zeros((1, 5)), np.full((5, 1, 1), 2.0), 1)
        assert np.all(dens[0, 1:4] == 0)

    def test_switching_derivative_identity(self, fo):
        spec, grid, traj, bundle, rep = fo
        psi, a, M = rep.data["psi"][0], rep.data["a"][0], rep.data["M"][:, 0, 0]
        dens = np.nan_to_num(rep.data["density"][0])
        dpsi = np.diff(psi) / grid.dt  # at interior nodes 1..n_t-1
        k = np.arange(1, grid.n_t)
        pred = a[k] - M[k] * dens[k]
        t = grid.t[k]
        keep = np.ones_like(t, bool)
        for tj in (LN2, 2.0):
            keep &= np.abs(t - tj) > 5 * grid.dt
        assert np.max(np.abs(dpsi - pred)[keep]) <= 5e-2


class TestSignConditions:
    def test_benchmark_pass(self, fo):
        assert fo[4].check("sign_conditions")["passed"]

    def test_positive_switching_at_lower_bound(self):
        spec = validate(make_spec(y0="sin(1)", alpha=[1.0], u_lo=[-1], u_hi=[1]))
        grid = SpaceTimeGrid(15, 20, 1.0, 1.0)
        u = np.full((1, 20), -1.0)
        arcs = foc.detect_arcs(spec, grid, u, pd.solve_state(spec, grid, u))
        (entry,) = foc.check_sign_conditions(np.ones((1, 20)), arcs, 1e-6, grid.t_mid)
        assert entry["passed"]

    def test_perturbation_off_lower_bound_is_reported(self):
        spec = validate(make_spec(y0="sin(1)", alpha=[1.0], u_lo=[-1], u_hi=[1]))
        grid = SpaceTimeGrid(15, 20, 1.0, 1.0)
        u = np.full((1, 20), -1.0)
        u[0, 8:12] += 0.1
        arcs = foc.detect_arcs(spec, grid, u, pd.solve_state(spec, grid, u))
        (entry,) = foc.check_sign_conditions(np.ones((1, 20)), arcs, 1e-6, grid.t_mid)
        assert not entry["passed"]
        assert entry["locations"] == pytest.approx(grid.t_mid[8:12].tolist())

    def test_variational_inequality_closure(self, fo, rng):
        spec, grid, traj, bundle, rep = fo
        psi, tol = rep.data["psi"], rep.data["sign_tol"]
        lo, hi = spec.control_bounds(grid)
        for _ in range(100):
            w = rng.uniform(lo, hi)
            d = w - traj.u
            assert grid.dt * np.sum(psi * d) >= -tol * grid.dt * np.sum(np.abs(d))


class TestJunctions:
    def test_continuous_multiplier_gives_small_product(self):
        grid = SpaceTimeGrid(7, 40, 1.0, 1.0)
        arcs = single_arc(20, dt=grid.dt)
        arcs.arcs.append(foc.Arc(20, 40, 0.5, 1.0, frozenset(), frozenset(), frozenset([0])))
        gdot = np.where(grid.t < 0.5, 1.0, 0.0)[None, :]
        mu = (-(1 - grid.t) ** 2)[None, :]  # smooth, no atoms
        psi = np.zeros((1, 40))
        u = np.zeros((1, 40))
        _, gm = foc.check_junction_jumps(arcs, psi, u, gdot, mu, grid, method="linear")
        assert gm["residual"] <= 1e-12

    def test_atom_where_derivative_jumps(self):
        grid = SpaceTimeGrid(7, 40, 1.0, 1.0)
        arcs = single_arc(20, dt=grid.dt)
        arcs.arcs.append(foc.Arc(20, 40, 0.5, 1.0, frozenset(), frozenset(), frozenset([0])))
        gdot = np.where(grid.t < 0.5, 1.0, 0.0)[None, :]
        W = np.zeros((1, 41))
        W[0, 20] = 0.5
        mu = pd.mu_from_weights(W)
        _, gm = foc.check_junction_jumps(arcs, np.zeros((1, 40)), np.zeros((1, 40)), gdot, mu, grid)
        assert not gm["passed"] and gm["locations"] == [0.5]

    def test_benchmark_switching_continuity(self, fo):
        assert fo[4].check("junction_psi_u")["passed"]


class TestReport:
    def test_benchmark_core_checks(self, fo):
        rep = fo[4]
        for name in ("primal_feasibility", "multiplier_sign", "complementarity",
                     "sign_conditions", "controllability", "multiplier_density"):
            assert rep.check(name)["passed"], name

    def test_json_is_deterministic(self, fo, tmp_path):
        spec, grid, traj, bundle, rep = fo
        again = foc.check_first_order(spec, grid, traj.u, traj.y, bundle.mu_weights)
        rep.to_json(tmp_path / "a.json")
        again.to_json(tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_wrong_bang_level_fails(self, fo):
        spec, grid, traj, bundle, rep = fo
        u = traj.u.copy()
        u[0, grid.t_mid < LN2] = -1.0
        y = pd.solve_state(spec, grid, u)
        bad = foc.check_first_order(spec, grid, u, y, bundle.mu_weights)
        failed = {c["name"] for c in bad.checks if not c["passed"]}
        assert "sign_conditions" in failed
        assert not bad.passed

    def test_qualification_direction(self, fo):
        spec, grid, traj, bundle, rep = fo
        ref = analytic_example()
        ubar = ref.u(grid.t_mid)[None, :]
        y = pd.solve_state(spec, grid, ubar)
        z = pd.solve_linearized(spec, grid, y, ubar, -1.0 - ubar)
        g = optim.constraint_values(spec, grid, y)[0]
        lin = pd.inner(z, sampled(spec, grid).c[0], grid)
        assert np.max(g + lin) < -1e-3
