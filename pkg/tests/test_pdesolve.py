import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parcon import expr, pdesolve as pd
from parcon.errors import GridMismatch, NegativeWeight
from parcon.model import SpaceTimeGrid, benchmark_spec, make_spec, sampled, validate
from parcon.spectral import analytic_example


def table_fd(values):
    return expr._normalize([expr.Term(1.0, expr.Table(tuple(map(tuple, np.atleast_2d(values)))))])


def full_nodes(field):
    """Pad interior-node values with the zero boundary."""
    field = np.atleast_2d(field)
    z = np.zeros((field.shape[0], 1))
    return np.hstack([z, field, z])


def heat_spec(gamma=0.0, f="0", y0="sin(1)", b1="1", u_lo=-1.0, u_hi=1.0, T=1.0):
    return validate(make_spec(T=T, gamma=gamma, b=("0", b1), f=f, y0=y0, u_lo=[u_lo], u_hi=[u_hi]))


def analytic_control(grid):
    return analytic_example().u(grid.t_mid)[None, :]


class TestStateSolver:
    def test_benchmark_plateau(self):
        spec, grid = benchmark_spec()
        y = pd.solve_state(spec, grid, analytic_control(grid))
        k = int(np.argmin(np.abs(grid.t - math.log(2))))
        i = int(np.argmin(np.abs(grid.x - 0.5)))
        assert grid.x[i] == pytest.approx(0.5, abs=grid.h / 2)
        assert y[k, i] == pytest.approx(2 * math.sqrt(2), rel=1e-2)

    def test_single_mode_decay(self):
        spec = heat_spec()
        grid = SpaceTimeGrid(63, 200, 1.0, 1.0)
        y = pd.solve_state(spec, grid, np.zeros((1, grid.n_t)))
        c1 = sampled(spec, grid).c[0] if spec.q else np.sqrt(2) * np.sin(np.pi * grid.x)
        lam_h = 4 / grid.h ** 2 * np.sin(np.pi * grid.h / 2) ** 2
        discrete = (1 + grid.dt * lam_h) ** -np.arange(grid.n_t + 1)
        assert np.allclose(y, discrete[:, None] * c1[None, :], atol=1e-13)
        exact = np.exp(-np.pi ** 2 * grid.t)[:, None] * c1[None, :]
        assert np.max(np.abs(y - exact)) <= 5 * (grid.h ** 2 + grid.dt) * np.pi ** 2

    def test_cubic_self_convergence_band(self):
        spec = heat_spec(gamma=1.0, f="1", y0="0")
        u = lambda g: np.zeros((1, g.n_t))
        coarse, mid, fine = (SpaceTimeGrid(7, 10, 1, 1), SpaceTimeGrid(15, 20, 1, 1),
                             SpaceTimeGrid(31, 40, 1, 1))
        yc = pd.solve_state(spec, coarse, u(coarse))[-1]
        ym = pd.solve_state(spec, mid, u(mid))[-1][1::2]
        yf = pd.solve_state(spec, fine, u(fine))[-1][3::4]
        # leading-order errors halve at least; coarse error bounded by twice the coarse/mid gap
        assert np.max(np.abs(yc - yf)) <= 2.0 * np.max(np.abs(yc - ym))
        assert np.max(np.abs(ym - yf)) < np.max(np.abs(yc - ym))

    def test_shape_checks(self):
        spec = heat_spec()
        grid = SpaceTimeGrid(7, 5, 1, 1)
        with pytest.raises(GridMismatch):
            pd.solve_state(spec, grid, np.zeros((1, 4)))


@pytest.mark.parametrize("gamma", [0.0, 1.0])
@given(data=st.data())
@settings(max_examples=25, deadline=None)
def test_monotone_in_data(gamma, data):
    """Nonnegative increments of y0 and f never lower the state."""
    seed = data.draw(st.integers(0, 2 ** 31 - 1))
    rng = np.random.default_rng(seed)
    grid = SpaceTimeGrid(15, 20, 1.0, 1.0)
    spec = heat_spec(gamma=gamma, f="sin(1)", u_lo=-3, u_hi=3)
    u = rng.uniform(-3, 3, (1, grid.n_t))
    y0 = sampled(spec, grid).y0 * rng.uniform(-1, 1)
    F = rng.normal(size=grid.field_shape)
    dy0 = rng.uniform(0, 1, grid.n_x)
    dF = rng.uniform(0, 1, grid.field_shape)
    y1 = pd.solve_state(spec, grid, u, y0=y0, f=F)
    y2 = pd.solve_state(spec, grid, u, y0=y0 + dy0, f=F + dF)
    assert np.all(y2 >= y1 - 1e-12)


@given(st.integers(0, 2 ** 31 - 1), st.sampled_from([0.0, 1.0]))
@settings(max_examples=30, deadline=None)
def test_energy_bound_holds(seed, gamma):
    rng = np.random.default_rng(seed)
    grid = SpaceTimeGrid(15, 30, 1.0, 1.0)
    spec = heat_spec(gamma=gamma, f="2*sin(2) + poly(1,-1)", u_lo=-4, u_hi=4)
    u = rng.uniform(-4, 4, (1, grid.n_t))
    y = pd.solve_state(spec, grid, u)
    assert np.all(pd.norm(y, grid) <= pd.energy_bound(spec, grid, u) * (1 + 1e-12))


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=30, deadline=None)
def test_linearized_bound_holds(seed):
    rng = np.random.default_rng(seed)
    grid = SpaceTimeGrid(15, 30, 1.0, 1.0)
    spec = heat_spec(gamma=1.0, b1="sin(1)", u_lo=-3, u_hi=3)
    u = rng.uniform(-3, 3, (1, grid.n_t))
    v = rng.normal(size=(1, grid.n_t))
    y = pd.solve_state(spec, grid, u)
    z = pd.solve_linearized(spec, grid, y, u, v)
    bound, M1 = pd.linearized_bound(spec, grid, y, u, v)
    assert np.max(pd.norm(z, grid)) <= bound * (1 + 1e-12)


class TestLinearized:
    spec = heat_spec(gamma=1.0, f="sin(2)", b1="1 + poly(1)", u_lo=-2, u_hi=2)
    grid = SpaceTimeGrid(31, 40, 1.0, 1.0)

    def base(self, rng):
        u = rng.uniform(-2, 2, (1, self.grid.n_t))
        return u, pd.solve_state(self.spec, self.grid, u)

    def test_zero_direction(self, rng):
        u, y = self.base(rng)
        z = pd.solve_linearized(self.spec, self.grid, y, u, np.zeros_like(u))
        assert np.all(z == 0)

    def test_linearity(self, rng):
        u, y = self.base(rng)
        v, w = rng.normal(size=(2, 1, self.grid.n_t))
        a = 2.7
        lhs = pd.solve_linearized(self.spec, self.grid, y, u, a * v + w)
        rhs = (a * pd.solve_linearized(self.spec, self.grid, y, u, v)
               + pd.solve_linearized(self.spec, self.grid, y, u, w))
        assert np.max(np.abs(lhs - rhs)) <= 1e-12 * np.max(np.abs(lhs))

    def test_directional_derivative(self, rng):
        u, y = self.base(rng)
        v = rng.normal(size=u.shape)
        z = pd.solve_linearized(self.spec, self.grid, y, u, v)
        errs = []
        for tau in (1e-2, 1e-3, 1e-4):
            dy = (pd.solve_state(self.spec, self.grid, u + tau * v) - y) / tau
            errs.append(np.max(np.abs(dy - z)))
        assert errs[1] < 0.2 * errs[0] and errs[2] < 0.2 * errs[1]

    def test_benchmark_qualification_direction(self):
        spec, grid = benchmark_spec()
        ubar = analytic_control(grid)
        y = pd.solve_state(spec, grid, ubar)
        z = pd.solve_linearized(spec, grid, y, ubar, -1.0 - ubar)
        z1 = pd.inner(z, sampled(spec, grid).c[0], grid)
        assert z1[0] == 0 and np.all(z1[1:] < 0)


class TestAdjoint:
    def test_discrete_duality(self, rng):
        spec = heat_spec(gamma=1.0, f="sin(1)", b1="1 + poly(0,1)", u_lo=-2, u_hi=2)
        grid = SpaceTimeGrid(23, 30, 1.0, 1.0)
        u = rng.uniform(-2, 2, (1, grid.n_t))
        y = pd.solve_state(spec, grid, u)
        v = rng.normal(size=u.shape)
        R = rng.normal(size=grid.field_shape)
        pT = rng.normal(size=grid.n_x)
        z = pd.solve_linearized(spec, grid, y, u, v)
        p = pd.solve_backward(spec, grid, y, u, R, pT)
        lhs = grid.dt * np.sum(pd.inner(R[1:], z[1:], grid)) + pd.inner(pT, z[-1], grid)
        rhs = grid.dt * np.sum(pd.inner(p[:-1], pd.linearized_source(spec, grid, y, v), grid))
        assert lhs == pytest.approx(rhs, rel=1e-10)

    def test_perfect_tracking_gives_zero_costate(self, rng):
        grid = SpaceTimeGrid(15, 20, 1.0, 1.0)
        spec0 = heat_spec(gamma=1.0, f="sin(1)")
        u = rng.uniform(-1, 1, (1, grid.n_t))
        y = pd.solve_state(spec0, grid, u)
        yfull = full_nodes(y)
        spec = validate(make_spec(T=1.0, gamma=1.0, f="sin(1)", y0="sin(1)",
                                  yd=table_fd(yfull), ydT=table_fd(yfull[-1])), grid)
        p1, p = pd.solve_alt_costate(spec, grid, y, u, np.zeros((0, grid.n_t + 1)))
        assert np.max(np.abs(p)) <= 1e-12

    def test_negative_weights_rejected(self):
        spec, grid = benchmark_spec()
        u = analytic_control(grid)
        y = pd.solve_state(spec, grid, u)
        W = np.zeros((1, grid.n_t + 1))
        W[0, 5] = -1.0
        with pytest.raises(NegativeWeight):
            pd.solve_alt_costate(spec, grid, y, u, W)

    def test_mu_convention(self):
        W = np.array([[0.0, 1.0, 2.0, 0.5]])
        mu = pd.mu_from_weights(W)
        assert np.allclose(mu, [[-3.5, -2.5, -0.5, 0.0]])
        assert np.all(np.diff(mu) >= 0)


class TestApplyA:
    def test_eigenfunction(self):
        spec = heat_spec()
        for n in (31, 63):
            grid = SpaceTimeGrid(n, 4, 1.0, 1.0)
            c1 = np.sqrt(2) * np.sin(np.pi * grid.x)
            y = np.zeros(grid.field_shape)
            Ac = pd.apply_A(spec, grid, y, np.zeros((1, grid.n_t)), c1, 2)
            assert np.max(np.abs(Ac - np.pi ** 2 * c1)) <= 2 * grid.h ** 2 * np.pi ** 4

    def test_shift_cancels(self):
        spec, grid = benchmark_spec()
        c1 = sampled(spec, grid).c[0]
        ubar = np.full((1, grid.n_t), np.pi ** 2)
        Az = pd.apply_A(spec, grid, np.zeros(grid.field_shape), ubar, c1, 10)
        assert np.max(np.abs(Az)) <= 2 * grid.h ** 2 * np.pi ** 4

    def test_against_dense_matrix(self, rng):
        spec = heat_spec(gamma=1.0, b1="1 + poly(1)")
        grid = SpaceTimeGrid(17, 6, 1.0, 1.0)
        ybar = rng.normal(size=grid.field_shape)
        ubar = rng.normal(size=(1, grid.n_t))
        z = rng.normal(size=grid.n_x)
        k = 3
        n, h = grid.n_x, grid.h
        K = (np.diag(np.full(n, 2.0)) - np.diag(np.ones(n - 1), 1) - np.diag(np.ones(n - 1), -1)) / h ** 2
        b1 = 1 + grid.x
        D = np.diag(3 * ybar[k] ** 2 - ubar[0, k - 1] * b1)
        assert np.allclose(pd.apply_A(spec, grid, ybar, ubar, z, k), (K + D) @ z,
                           rtol=1e-13, atol=1e-13 * np.max(np.abs(K @ z)))

    def test_slice_shape(self):
        spec = heat_spec()
        grid = SpaceTimeGrid(7, 4, 1.0, 1.0)
        with pytest.raises(GridMismatch):
            pd.apply_A(spec, grid, np.zeros(grid.field_shape), np.zeros((1, 4)), np.zeros(6), 1)


def _richardson_rate(coarse, mid, fine):
    return math.log2(np.max(np.abs(coarse - mid)) / np.max(np.abs(mid - fine)))


class TestConvergenceRates:
    spec = heat_spec(gamma=1.0, f="sin(2)", b1="1", u_lo=-1, u_hi=1)

    def test_space_rate(self):
        vals = []
        for n in (15, 31, 63):
            grid = SpaceTimeGrid(n, 50, 1.0, 1.0)
            y = pd.solve_state(self.spec, grid, np.full((1, grid.n_t), 0.5))[-1]
            stride = (n + 1) // 16
            vals.append(y[stride - 1::stride])
        assert _richardson_rate(*vals) >= 1.7

    def test_time_rate(self):
        vals = []
        for nt in (20, 40, 80):
            grid = SpaceTimeGrid(31, nt, 1.0, 1.0)
            vals.append(pd.solve_state(self.spec, grid, np.full((1, nt), 0.5))[-1])
        assert _richardson_rate(*vals) >= 0.8


class TestCsv:
    def test_field_round_trip(self, tmp_path, rng):
        grid = SpaceTimeGrid(5, 3, 1.0, 1.0)
        Y = rng.normal(size=grid.field_shape)
        pd.write_field_csv(tmp_path / "y.csv", grid, Y)
        head = (tmp_path / "y.csv").read_text().splitlines()[0]
        assert head == "t,x,value"
        assert np.array_equal(pd.read_field_csv(tmp_path / "y.csv", grid), Y)

    def test_control_round_trip(self, tmp_path, rng):
        grid = SpaceTimeGrid(5, 3, 1.0, 1.0)
        u = rng.normal(size=(2, grid.n_t))
        pd.write_control_csv(tmp_path / "u.csv", grid, u)
        assert (tmp_path / "u.csv").read_text().startswith("t,u1,u2\n")
        assert np.array_equal(pd.read_control_csv(tmp_path / "u.csv", grid, 2), u)

    def test_wrong_grid(self, tmp_path, rng):
        grid = SpaceTimeGrid(5, 3, 1.0, 1.0)
        pd.write_field_csv(tmp_path / "y.csv", grid, np.zeros(grid.field_shape))
        with pytest.raises(GridMismatch):
            pd.read_field_csv(tmp_path / "y.csv", SpaceTimeGrid(5, 4, 1.0, 1.0))
