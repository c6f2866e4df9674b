import dataclasses

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from relent_lab.errors import DomainError
from relent_lab.solver import (Field, Grid1D, SolverConfig, initial_data, manufactured_forcing,
                               manufactured_residual, semidiscrete_rhs, solve, stable_dt,
                               time_step, traveling_sine)
from relent_lab.systems import make_duct_gas, make_scalar_sanity, make_weighted_burgers



def zero_flux(spec):
    z = lambda U, x, t: 0.0 * np.asarray(U, float)
    zz = lambda U, x, t: np.zeros(np.shape(U) + (np.shape(U)[-1],))
    return dataclasses.replace(spec, f=(z,), df=(zz,), f_x=(z,))


def linear_advection(c=1.0):
    spec = make_scalar_sanity()
    return dataclasses.replace(
        spec, name="advection",
        f=(lambda U, x, t: c * np.asarray(U, float),),
        df=(lambda U, x, t: np.full(np.shape(U) + (1,), c),),
        q=(lambda U, x, t: 0.5 * c * np.asarray(U, float)[..., 0] ** 2,),
        grad_q=(lambda U, x, t: c * np.asarray(U, float),))


def weighted_static():
    """A(u, x) = a(x) u with f = P = 0."""
    spec = zero_flux(make_scalar_sanity())
    a = lambda x: 2.0 + np.sin(np.asarray(x, float))
    return dataclasses.replace(
        spec, name="weighted_static", A_identity=False,
        A=lambda U, x, t: a(x)[..., None] * np.asarray(U, float),
        dA=lambda U, x, t: a(x)[..., None, None] + 0.0 * np.asarray(U)[..., None],
        d2A=lambda U, x, t: np.zeros(np.shape(U) + (1, 1)))


class TestGrid:
    def test_geometry(self):
        g = Grid1D(16, 4.0)
        assert g.dx == 0.25
        assert g.x[0] == 0.125
        assert g.x_half[-1] == pytest.approx(4.0)

    def test_rejects_small_grid(self):
        with pytest.raises(ValueError):
            Grid1D(4)


class TestRHS:
    def test_constant_state_is_steady(self):
        spec = make_duct_gas(1.0, 2.0, None)
        spec = dataclasses.replace(spec, P=lambda U, x, t: 0.0 * np.asarray(U))
        g = Grid1D(32)
        f = Field(g, np.tile([1.3, 0.4], (32, 1)))
        for scheme in ("central", "llf"):
            assert np.max(np.abs(semidiscrete_rhs(spec, f, 0.1, scheme))) == 0.0

    def test_burgers_truncation(self):
        spec = make_scalar_sanity()
        errs = []
        for N in (64, 128):
            g = Grid1D(N)
            rhs = semidiscrete_rhs(spec, Field(g, np.sin(g.x)), 0.0, "central")[:, 0]
            errs.append(np.max(np.abs(rhs + np.sin(g.x) * np.cos(g.x))))
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)

    def test_laplacian_truncation(self):
        spec = zero_flux(make_scalar_sanity())
        errs = []
        for N in (64, 128):
            g = Grid1D(N)
            rhs = semidiscrete_rhs(spec, Field(g, np.sin(g.x)), 1.0, "central")[:, 0]
            errs.append(np.max(np.abs(rhs + np.sin(g.x))))
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)

    def test_bad_cell_reported(self):
        spec = make_duct_gas()
        U = np.tile([1.0, 0.0], (16, 1))
        U[5, 0] = -0.2
        with pytest.raises(DomainError) as exc:
            semidiscrete_rhs(spec, Field(Grid1D(16), U), 0.1)
        assert exc.value.index == 5


class TestStableDt:
    def test_inviscid_burgers(self):
        g = Grid1D(64)
        U = np.sin(g.x) / np.max(np.abs(np.sin(g.x)))
        dt = stable_dt(make_scalar_sanity(), Field(g, U), 0.0, 0.4)
        assert dt == pytest.approx(0.4 * g.dx)

    def test_parabolic_quarters(self):
        spec = zero_flux(make_scalar_sanity())
        dts = [stable_dt(spec, Field(Grid1D(N), np.zeros(N)), 10.0, 0.4) for N in (64, 128)]
        assert dts[0] / dts[1] == pytest.approx(4.0)

    def test_falls_back_to_cap(self):
        spec = zero_flux(make_scalar_sanity())
        assert stable_dt(spec, Field(Grid1D(16), np.zeros(16)), 0.0, 0.4, dt_cap=0.05) == 0.05


class TestTimeStep:
    def test_static_weighted_map_unchanged(self):
        spec = weighted_static()
        g = Grid1D(32)
        U0 = np.cos(g.x)[:, None]
        f = time_step(spec, Field(g, U0), 0.05, SolverConfig(epsilon=0.0))
        np.testing.assert_allclose(f.U, U0, atol=1e-13)
        assert f.t == 0.05

    def test_reversible_when_nothing_moves(self):
        spec = dataclasses.replace(zero_flux(make_scalar_sanity()),
                                   P=lambda U, x, t: 0.0 * np.asarray(U))
        g = Grid1D(32)
        U0 = initial_data({"kind": "gaussian-bump", "base": 0.1, "amplitude": 1.0}, g, 1)
        tr = solve(spec, Field(g, U0), SolverConfig(epsilon=0.0, t_end=1.0, dt=0.1,
                                                    integrator="rk4"))
        for U in tr.states:
            np.testing.assert_array_equal(U, U0)


class TestSolve:
    def test_zero_horizon(self):
        g = Grid1D(16)
        tr = solve(make_scalar_sanity(), Field(g, np.zeros(16)), SolverConfig(t_end=0.0))
        assert tr.times == [0.0] and len(tr.states) == 1

    def test_lands_on_snapshots(self):
        g = Grid1D(32)
        tr = solve(make_scalar_sanity(), Field(g, 0.5 + 0.2 * np.sin(g.x)),
                   SolverConfig(epsilon=0.01, t_end=0.3, snapshots=[0.1, 0.2]))
        assert tr.times == [0.0, 0.1, 0.2, 0.3]

    def test_failure_record(self):
        g = Grid1D(16)
        U = np.tile([1.0, 0.0], (16, 1))
        U[3, 0] = -1.0
        tr = solve(make_duct_gas(), Field(g, U), SolverConfig(epsilon=0.01, t_end=0.1))
        assert not tr.ok
        assert tr.failure["type"] == "DomainError"

    def test_characteristics(self):
        """Pre-shock Burgers against the implicit characteristic solution."""
        u0 = lambda x: 0.5 + 0.25 * np.sin(x)
        T = 0.6

        def exact(x):
            return np.array([brentq(lambda u: u - u0(xi - u * T), -1, 2, xtol=1e-14) for xi in x])

        errs = []
        for N in (128, 256):
            g = Grid1D(N)
            cfg = SolverConfig(epsilon=0.0, t_end=T, dt=0.2 * g.dx, integrator="rk4",
                               n_snapshots=2)
            tr = solve(make_scalar_sanity(), Field(g, u0(g.x)), cfg)
            errs.append(np.sqrt(np.sum((tr.states[-1][:, 0] - exact(g.x)) ** 2) * g.dx))
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.15)

    def test_duct_constant_state_ode(self):
        # with the flux switched off every cell obeys dU/dt = -P(U, x) exactly;
        # with it on, the x-dependent source makes the state nonuniform
        spec = zero_flux(make_duct_gas(1.0, 2.0))
        g = Grid1D(16)
        U0 = np.tile([1.0, 0.5], (16, 1))
        T = 0.2

        def reference():
            out = []
            for x in g.x:
                sol = solve_ivp(lambda t, y: -spec.P(y, x, t), (0, T), U0[0], rtol=1e-12,
                                atol=1e-13, method="DOP853")
                out.append(sol.y[:, -1])
            return np.array(out)

        ref = reference()
        errs = []
        for dt in (1e-2, 5e-3):
            cfg = SolverConfig(epsilon=0.0, t_end=T, dt=dt, n_snapshots=2, scheme="central")
            tr = solve(spec, Field(g, U0), cfg)
            errs.append(np.max(np.abs(tr.states[-1] - ref)))
        assert errs[1] < 1e-5
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.15)

    def test_llf_conservation(self):
        spec = dataclasses.replace(make_duct_gas(1.0, 2.0),
                                   P=lambda U, x, t: 0.0 * np.asarray(U))
        g = Grid1D(64)
        U0 = initial_data({"kind": "sine", "base": [1.0, 0.0], "amplitude": [0.3, 0.3]}, g, 2)
        f = Field(g, U0)
        cfg = SolverConfig(epsilon=0.0, scheme="llf")
        m0 = np.sum(f.U, axis=0) * g.dx
        for _ in range(50):
            f = time_step(spec, f, stable_dt(spec, f, 0.0, 0.4), cfg)
            m1 = np.sum(f.U, axis=0) * g.dx
            assert np.max(np.abs(m1 - m0)) <= 1e-12
            m0 = m1


class TestManufactured:
    def test_constant_target_needs_no_forcing(self):
        tgt = traveling_sine([0.7], [0.0], 1.0)
        F = manufactured_residual(make_scalar_sanity(), tgt, 0.1)
        x = np.linspace(0, 6, 7)
        assert np.max(np.abs(F(x, 0.3))) == 0.0

    def test_inviscid_solution_leaves_viscous_term(self):
        c, eps = 1.3, 0.05
        spec = linear_advection(c)
        tgt = traveling_sine([0.2], [0.4], speed=c, k=2)
        F = manufactured_residual(spec, tgt, eps)
        x = np.linspace(0, 6, 13)
        expected = -eps * (-4 * 0.4 * np.sin(2 * (x - c * 0.7)))
        np.testing.assert_allclose(F(x, 0.7)[:, 0], expected, atol=1e-14)

    def test_weighted_forcing_reproduces_target(self):
        spec = make_weighted_burgers()
        tgt = traveling_sine([0.5], [0.2], speed=0.5)
        eps = 0.05
        forced = manufactured_forcing(spec, tgt, eps)
        errs = []
        for N in (64, 128):
            g = Grid1D(N)
            cfg = SolverConfig(epsilon=eps, t_end=0.5, integrator="rk4", n_snapshots=2,
                               dt=0.1 * g.dx)
            tr = solve(forced, Field(g, tgt.U(g.x, 0.0)), cfg)
            diff = tr.states[-1] - tgt.U(g.x, 0.5)
            errs.append(np.sqrt(np.sum(diff ** 2) * g.dx))
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.25)


def test_initial_data_presets():
    g = Grid1D(32)
    assert np.all(initial_data({"kind": "constant", "value": 2.0}, g, 1) == 2.0)
    s = initial_data({"kind": "sine", "base": 1.0, "amplitude": 0.5}, g, 1)
    np.testing.assert_allclose(s[:, 0], 1.0 + 0.5 * np.sin(g.x))
    two = initial_data({"kind": "two-state-smooth", "left": 0.0, "right": 1.0, "width": 0.1}, g, 1)
    assert two[0, 0] < 1e-3 and two[16, 0] > 0.999
    with pytest.raises(ValueError):
        initial_data({"kind": "square"}, g, 1)
