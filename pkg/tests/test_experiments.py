import numpy as np
import pytest

from relent_lab.errors import ConfigError
from relent_lab.experiments import ExperimentConfig, run

SCALAR = {"kind": "scalar_sanity"}


def cfg(kind, system=SCALAR, **kw):
    return ExperimentConfig(kind, dict(system), **kw)


class TestFilled:
    def test_defaults_are_merged(self):
        c = cfg("identity", grid={"N": [16, 32]}).filled()
        assert c.grid["N"] == [16, 32]
        assert c.solver["integrator"] == "rk4"
        assert c.solver["cfl"] == 0.4
        assert c.experiment["min_order"] == 1.7

    def test_user_values_win(self):
        c = cfg("stability", solver={"epsilon": [0.5]}, experiment={"delta": 0.2}).filled()
        assert c.solver["epsilon"] == [0.5]
        assert c.experiment["delta"] == 0.2


class TestAudit:
    def test_scalar_passes(self):
        rep = run(cfg("audit", experiment={"n_states": 200, "n_points": 4}))
        assert rep.verdict == "pass"

    def test_negated_entropy_fails(self):
        rep = run(cfg("audit", {"kind": "negated_entropy"},
                      experiment={"n_states": 200, "n_points": 4}))
        assert rep.verdict == "fail"


class TestIdentity:
    def test_zero_perturbation_gives_zero_ledger(self):
        rep = run(cfg("identity", grid={"N": [16, 32, 64]}, solver={"t_end": 0.2},
                      experiment={"delta": 0.0}))
        assert rep.verdict == "pass"
        assert rep.results["order"] is None
        assert all(r["residual_integral"] == 0.0 for r in rep.results["refinement"])

    def test_scalar_residual_converges(self):
        rep = run(cfg("identity", grid={"N": [32, 64, 128]}, solver={"t_end": 0.3}))
        assert rep.verdict == "pass"
        assert rep.results["order"] >= 1.7
        assert rep.results["homogeneous"] and rep.results["max_abs_Q7_Q9"] == 0.0

    def test_negative_viscosity_fails(self):
        rep = run(cfg("identity", {"kind": "negative_viscosity"}, grid={"N": [16, 32, 64]},
                      solver={"t_end": 0.1}))
        assert rep.verdict == "fail"
        assert rep.results["dissipation_negative"]

    def test_memory_system_rejected(self):
        with pytest.raises(ConfigError):
            run(cfg("identity", {"kind": "memory_scalar"}))


class TestStability:
    def test_zero_delta_is_degenerate(self):
        rep = run(cfg("stability", grid={"N": [32]}, solver={"t_end": 0.2},
                      experiment={"delta": 0.0}))
        assert rep.verdict == "inconclusive"
        assert rep.results["degenerate"]

    def test_amplification_grows_with_horizon(self):
        S = []
        for T in (0.25, 0.5):
            rep = run(cfg("stability", grid={"N": [64]}, solver={"t_end": T, "epsilon": [0.01]}))
            S.append(rep.results["S"][0])
        assert S[1] >= S[0] - 1e-12
        assert S[0] >= 1.0


class TestConvergence:
    def test_needs_three_epsilons(self):
        with pytest.raises(ConfigError) as exc:
            run(cfg("convergence", solver={"epsilon": [0.01, 0.005]}))
        assert exc.value.path == ".solver.epsilon"

    def test_coinciding_epsilons_inconclusive(self):
        rep = run(cfg("convergence", grid={"N": [32]},
                      solver={"epsilon": [0.05, 0.05, 0.05], "t_end": 0.2},
                      experiment={"mismatch": 0.0, "max_N": 128, "grid_tol": 0.5}))
        assert rep.verdict == "inconclusive"
        assert rep.results["slope"] is None


class TestWeakStrong:
    def test_rejects_viscosity(self):
        with pytest.raises(ConfigError):
            run(cfg("weakstrong", solver={"epsilon": [0.1]}))

    def test_scalar_pre_shock(self):
        rep = run(cfg("weakstrong", grid={"N": [32, 64]}, solver={"t_end": 0.5}))
        assert not rep.results["shock_detected"]
        assert rep.verdict == "pass"
        d = [r["sup_distance"] for r in rep.results["rows"]]
        assert d[1] < d[0]


def test_unknown_kind():
    with pytest.raises(ConfigError):
        run(cfg("nonsense"))
