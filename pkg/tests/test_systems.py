import dataclasses

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import bisect

from relent_lab.errors import DomainError, HistoryGapError, InversionError, QuadratureError
from relent_lab.systems import (AProfile, HistoryBuffer, derivative_consistency, eval_R, eval_Z,
                                invert_A, make_cubic_A, make_duct_gas, make_memory_scalar,
                                make_scalar_sanity, make_selfsimilar, resolvent_kernel,
                                synthesize_derivatives, system_from_config, SystemSpec)

from conftest import builtin_specs, interior_states, make_quartic_x


def unit_profile():
    # a(x) = 2 + sin x, so a'(0)/a(0) = 1/2
    return AProfile(mean=2.0, amplitude=1.0)


class TestEvalR:
    def test_scalar_sanity_zero(self):
        spec = make_scalar_sanity()
        U = np.array([[0.3], [-1.2], [2.0]])
        assert np.all(eval_R(spec, U, np.array([0.1, 1.0, 5.0]), 0.7) == 0.0)

    def test_duct_source_at_origin(self):
        spec = make_duct_gas(1.0, 2.0, unit_profile())
        np.testing.assert_allclose(eval_R(spec, np.array([1.0, 1.0]), 0.0, 0.3), [0.5, 0.5],
                                   rtol=1e-14)

    def test_selfsimilar_wrapper_zero(self):
        spec = make_selfsimilar(make_scalar_sanity())
        assert np.all(eval_R(spec, np.array([[0.4], [1.5]]), 0.2, 1.0) == 0.0)

    def test_inadmissible_density_names_component(self):
        spec = make_duct_gas()
        with pytest.raises(DomainError) as exc:
            eval_R(spec, np.array([-0.1, 0.0]), 0.0, 0.0)
        assert exc.value.component == "rho"


class TestEvalZ:
    def test_scalar_sanity_zero(self):
        assert float(eval_Z(make_scalar_sanity(), np.array([1.7]), 0.4, 2.0)) == 0.0

    def test_duct_hand_value(self):
        # G(1,1) = (-m^2/(2 rho^2) + 2 rho, m / rho) = (1.5, 1); R = (0.5, 0.5)
        spec = make_duct_gas(1.0, 2.0, unit_profile())
        assert float(eval_Z(spec, np.array([1.0, 1.0]), 0.0, 0.0)) == pytest.approx(1.25, rel=1e-14)

    def test_memory_zero_state(self):
        spec = make_memory_scalar(T=1.0, dt=1e-2)
        assert float(eval_Z(spec, np.array([0.0]), 0.3, 0.5)) == 0.0


class TestInvertA:
    def test_identity(self):
        spec = make_duct_gas()
        U = invert_A(spec, np.array([3.0, -1.0]), 0.0, 0.0, np.array([1.0, 0.0]))
        np.testing.assert_array_equal(U, [3.0, -1.0])

    def test_weighted_linear_map(self):
        a = lambda x: 2.0 + np.sin(x)
        core = SystemSpec(
            name="weighted2", n=2,
            A=lambda U, x, t: a(np.asarray(x))[..., None] * np.asarray(U),
            f=(lambda U, x, t: 0.0 * np.asarray(U),), P=lambda U, x, t: 0.0 * np.asarray(U),
            eta=lambda U, x, t: 0.5 * np.sum(np.asarray(U) ** 2, axis=-1),
            q=(lambda U, x, t: 0.0 * np.asarray(U)[..., 0],))
        spec = synthesize_derivatives(core)
        U = invert_A(spec, np.array([4.0, 2.0]), 0.0, 0.0, np.array([1.0, 1.0]))
        np.testing.assert_allclose(U, [2.0, 1.0], rtol=1e-12)

    def test_cubic_against_bisection(self):
        spec = make_cubic_A()
        root = bisect(lambda u: u + u ** 3 - 2.0, 0.0, 2.0, xtol=1e-15)
        U = invert_A(spec, np.array([2.0]), 0.0, 0.0, np.array([0.5]))
        assert U[0] == pytest.approx(root, abs=1e-12)

    def test_residual_contract(self):
        spec = make_cubic_A()
        V = np.linspace(-30, 30, 41)[:, None]
        U = invert_A(spec, V, 0.0, 0.0, np.zeros_like(V))
        res = np.max(np.abs(spec.A(U, 0.0, 0.0) - V), axis=-1)
        assert np.all(res <= 1e-12 * (1.0 + np.abs(V[:, 0])))

    def test_non_convergence_reports_iterate(self):
        spec = make_cubic_A()
        with pytest.raises(InversionError) as exc:
            invert_A(spec, np.array([[1e6]]), 0.0, 0.0, np.array([[0.0]]), max_iter=2)
        assert exc.value.last_iterate is not None
        assert exc.value.residual is not None

    @pytest.mark.parametrize("label", list(builtin_specs()))
    def test_round_trip_random(self, label):
        spec = builtin_specs()[label]
        rng = np.random.default_rng(11)
        U = interior_states(spec, rng, 500)
        x = rng.uniform(0, 2 * np.pi, 500)
        t = 0.37
        V = spec.A(U, x, t)
        back = invert_A(spec, V, x, t, U + 0.05 * rng.normal(size=U.shape) * (not spec.A_identity))
        np.testing.assert_allclose(back, U, atol=1e-10, rtol=1e-10)


class TestSynthesize:
    def _burgers_core(self, A=None):
        return SystemSpec(
            name="core", n=1,
            A=A or (lambda U, x, t: np.asarray(U, float)),
            f=(lambda U, x, t: 0.5 * np.asarray(U, float) ** 2,),
            P=lambda U, x, t: 0.0 * np.asarray(U, float),
            eta=lambda U, x, t: 0.5 * np.asarray(U, float)[..., 0] ** 2,
            q=(lambda U, x, t: np.asarray(U, float)[..., 0] ** 3 / 3,))

    def test_flux_jacobian(self):
        spec = synthesize_derivatives(self._burgers_core())
        assert spec.df[0](np.array([3.0]), 0.0, 0.0)[0, 0] == pytest.approx(3.0, abs=1e-6)
        assert spec.derivative_mode == "finite-difference"

    def test_entropy_hessian(self):
        spec = synthesize_derivatives(self._burgers_core())
        assert spec.hess_eta(np.array([1.0]), 0.0, 0.0)[0, 0] == pytest.approx(1.0, abs=1e-6)

    def test_exponential_weight(self):
        core = self._burgers_core(A=lambda U, x, t: np.exp(x) * np.asarray(U, float))
        spec = synthesize_derivatives(core)
        U = np.array([1.0])
        assert spec.A_t(U, 0.0, 0.0)[0] == pytest.approx(0.0, abs=1e-9)
        assert spec.dA(U, 0.0, 0.0)[0, 0] == pytest.approx(1.0, abs=1e-6)

    def test_multiplier_from_entropy(self):
        spec = synthesize_derivatives(self._burgers_core())
        assert spec.G(np.array([0.8]), 0.0, 0.0)[0] == pytest.approx(0.8, abs=1e-7)

    def test_supplied_slots_kept(self):
        spec = make_scalar_sanity()
        again = synthesize_derivatives(spec)
        assert again.df is spec.df
        assert again.derivative_mode == "analytic"


class TestBuiltins:
    def test_scalar_structure(self):
        spec = make_scalar_sanity()
        u2, u3 = np.array([2.0]), np.array([3.0])
        assert spec.A(u2, 0.0, 0.0)[0] == 2.0
        assert spec.G(u2, 0.0, 0.0)[0] == 2.0
        assert float(spec.q[0](u3, 0.0, 0.0)) == pytest.approx(9.0)

    def test_duct_entropy_value(self):
        spec = make_duct_gas(1.0, 2.0)
        assert float(spec.eta(np.array([1.0, 0.0]), 0.0, 0.0)) == pytest.approx(1.0, rel=1e-15)

    def test_duct_multiplier_matches_entropy_gradient(self):
        spec = make_duct_gas(1.0, 2.0)
        U = np.array([2.0, 0.0])
        h = 1e-6
        fd = [(float(spec.eta(U + h * e, 0, 0)) - float(spec.eta(U - h * e, 0, 0))) / (2 * h)
              for e in np.eye(2)]
        np.testing.assert_allclose(spec.G(U, 0.0, 0.0), [4.0, 0.0], atol=1e-14)
        np.testing.assert_allclose(fd, [4.0, 0.0], atol=1e-7)

    def test_constant_profile_is_homogeneous(self):
        spec = make_duct_gas(1.0, 2.0, AProfile.preset("constant", 0.0, 3.0))
        rng = np.random.default_rng(5)
        U = interior_states(spec, rng, 200)
        x = rng.uniform(0, 2 * np.pi, 200)
        assert np.all(spec.P(U, x, 0.4) == 0.0)
        assert np.max(np.abs(eval_Z(spec, U, x, 0.4))) == 0.0

    def test_duct_rejects_bad_parameters(self):
        with pytest.raises(ValueError):
            make_duct_gas(gamma=1.0)
        with pytest.raises(ValueError):
            make_duct_gas(kappa=0.0)

    def test_selfsimilar_scaling(self):
        spec = make_selfsimilar(make_scalar_sanity())
        u = np.array([0.7])
        assert spec.B[0][0](u, 0.0, 0.0)[0, 0] == 0.0
        assert spec.B[0][0](u, 0.0, 2.0)[0, 0] == 2.0
        base = make_duct_gas()
        ss = make_selfsimilar(base)
        U = np.array([1.2, 0.3])
        np.testing.assert_allclose(ss.dB[0][0](U, 0.4, 3.0), 3.0 * base.dB[0][0](U, 0.4, 3.0))
        np.testing.assert_allclose(ss.B_x[0][0](U, 0.4, 3.0), 3.0 * base.B_x[0][0](U, 0.4, 3.0))

    def test_config_builder(self):
        spec = system_from_config({"kind": "duct_gas", "kappa": 2.0, "gamma": 1.5,
                                   "a_profile": {"kind": "constant", "mean": 1.0}})
        assert spec.n == 2
        assert np.all(spec.P(np.array([[1.0, 1.0]]), np.array([0.4]), 0.0) == 0.0)
        with pytest.raises(ValueError):
            system_from_config({"kind": "nope"})


@pytest.mark.parametrize("label", list(builtin_specs()) + ["quartic_x"])
def test_analytic_derivatives_match_differences(label):
    spec = make_quartic_x() if label == "quartic_x" else builtin_specs()[label]
    rng = np.random.default_rng(2024)
    U = interior_states(spec, rng, 1000)
    x = rng.uniform(0, 2 * np.pi, 1000)
    for t in (0.0, 0.61, 1.7):
        errs = derivative_consistency(spec, U, x, t)
        bad = {k: v for k, v in errs.items() if v > 1e-6}
        assert not bad, bad


class TestResolvent:
    def test_exponential_kernel(self):
        dt, T = 1e-3, 10.0
        s = np.arange(int(round(T / dt)) + 1) * dt
        r, rp = resolvent_kernel(np.exp(-s), dt)
        assert np.max(np.abs(r - np.exp(-2 * s))) <= 1e-4
        assert np.max(np.abs(rp - (-2 * np.exp(-2 * s)))) <= 1e-3

    def test_second_order(self):
        errs = []
        for dt in (2e-2, 1e-2, 5e-3):
            s = np.arange(int(round(4.0 / dt)) + 1) * dt
            r, _ = resolvent_kernel(np.exp(-s), dt)
            errs.append(np.max(np.abs(r - np.exp(-2 * s))))
        ratios = np.array(errs[:-1]) / np.array(errs[1:])
        assert np.all((ratios > 3.5) & (ratios < 4.5))

    def test_zero_kernel(self):
        r, rp = resolvent_kernel(np.zeros(50), 0.1)
        assert np.all(r == 0) and np.all(rp == 0)

    def test_small_amplitude_first_picard_iterate(self):
        # r = k - k*k + ..., and (k*k)(t) = c^2 t e^{-t} <= c^2 / e
        c, dt = 1e-3, 1e-3
        s = np.arange(5001) * dt
        r, _ = resolvent_kernel(c * np.exp(-s), dt)
        dev = np.max(np.abs(r - c * np.exp(-s)))
        assert dev <= 1.01 * c ** 2 / np.e
        assert dev >= 0.9 * c ** 2 / np.e

    def test_singular_diagonal(self):
        dt = 0.1
        with pytest.raises(QuadratureError):
            resolvent_kernel(np.full(10, -2.0 / dt), dt)


class TestHistory:
    def _buffer(self, dt=1e-3, T=2.0):
        s = np.arange(int(round(T / dt)) + 1) * dt
        r, rp = resolvent_kernel(np.exp(-s), dt)
        return HistoryBuffer(kernel_dt=dt, r=r, r_prime=rp)

    def test_constant_history_fundamental_theorem(self):
        hist = self._buffer()
        hist.reset(grid_x=np.array([0.5]), period=2 * np.pi)
        for t in np.linspace(0.0, 1.0, 1001):
            hist.append(t, np.array([1.0]))
        r0, r1 = hist.r_at(0.0), hist.r_at(1.0)
        val = r0 - r1 + float(hist.integral(1.0)[0])
        assert abs(val) <= 1e-5
        exact, _ = quad(lambda s: -2 * np.exp(-2 * s), 0, 1)
        assert float(hist.integral(1.0)[0]) == pytest.approx(exact, abs=1e-5)

    def test_gap_raises(self):
        hist = self._buffer()
        hist.append(0.0, np.array([1.0]))
        hist.append(0.1, np.array([1.0]))
        with pytest.raises(HistoryGapError):
            hist.integral(0.5)
        empty = self._buffer()
        with pytest.raises(HistoryGapError):
            empty.integral(0.3)

    def test_stamps_strictly_increasing(self):
        hist = self._buffer()
        hist.append(0.0, np.array([1.0]))
        with pytest.raises(ValueError):
            hist.append(0.0, np.array([1.0]))

    def test_grid_mismatch(self):
        hist = self._buffer()
        hist.reset(grid_x=np.linspace(0, 1, 4))
        with pytest.raises(ValueError):
            hist.append(0.0, np.ones(5))

    def test_memory_source_trivial_cases(self):
        spec = make_memory_scalar(T=2.0, dt=1e-3)
        spec.history.reset(grid_x=np.array([0.5]))
        assert float(spec.P(np.array([0.0]), 0.5, 0.7)[0]) == 0.0
        assert float(spec.P(np.array([0.8]), 0.5, 0.0)[0]) == 0.0
