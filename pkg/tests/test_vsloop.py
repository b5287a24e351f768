import numpy as np
import pytest

from tebvs.band import Pose2, TimedBand
from tebvs.factors import FactorKind, constraint_rows, kinematics_factor, velocity_factor
from tebvs.vsloop import (
    MonotonicityReport,
    OuterRecord,
    OuterTrace,
    SlackState,
    VSConfig,
    augmented_lagrangian_value,
    dual_update_eta,
    dual_update_zeta,
    init_state,
    kkt_residuals,
    monotonicity_check,
    outer_solve,
    slack_update,
)

from helpers import LIMITS, ConstFactor, LinearCoordFactor, random_band


def prox_oracle(p: float, eta: float, rho: float) -> float:
    """1-D grid search for argmin_{v >= 0} eta*(p+v) + rho/2*(p+v)^2."""
    hi = max(1.0, -p - eta / rho) + 1.0
    grid = np.arange(0.0, hi, 1e-4)
    vals = eta * (p + grid) + 0.5 * rho * (p + grid) ** 2
    return float(grid[np.argmin(vals)])


class TestSlackUpdate:
    def test_interior_fills_gap(self):
        v = slack_update(np.array([-2.0]), np.array([0.0]), 1.0)
        assert v[0] == pytest.approx(2.0)

    def test_violated_clamps_to_zero(self):
        v = slack_update(np.array([1.0]), np.array([0.0]), 1.0)
        assert v[0] == 0.0

    def test_dual_shift(self):
        v = slack_update(np.array([-1.0]), np.array([3.0]), 2.0)
        assert v[0] == pytest.approx(max(0.0, 1.0 - 1.5))
        assert v[0] == pytest.approx(prox_oracle(-1.0, 3.0, 2.0), abs=1e-3)

    def test_matches_grid_search_oracle(self):
        rng = np.random.default_rng(123)
        for _ in range(200):
            p = rng.uniform(-3, 3)
            eta = rng.uniform(-3, 3)
            rho = rng.uniform(0.2, 10.0)
            v = slack_update(np.array([p]), np.array([eta]), rho)[0]
            assert v >= 0.0
            assert v == pytest.approx(prox_oracle(p, eta, rho), abs=1e-3)

    def test_rejects_bad_rho(self):
        with pytest.raises(ValueError):
            slack_update(np.zeros(1), np.zeros(1), 0.0)


class TestDualUpdates:
    def _state(self, v, eta, zeta, rho=2.0, mu=4.0):
        return SlackState(np.asarray(v, float), np.asarray(eta, float),
                          np.asarray(zeta, float), rho, mu)

    def test_eta_unchanged_when_feasible(self):
        s = self._state([0.5], [1.0], [])
        eta = dual_update_eta(s, np.array([-0.5]))
        assert eta[0] == pytest.approx(1.0)

    def test_eta_direct(self):
        s = self._state([0.0], [0.0], [])
        eta = dual_update_eta(s, np.array([0.3]))
        assert eta[0] == pytest.approx(0.6)

    def test_zeta_unchanged_on_zero(self):
        s = self._state([], [], [1.5])
        zeta = dual_update_zeta(s, np.array([0.0]))
        assert zeta[0] == pytest.approx(1.5)

    def test_zeta_direct_and_linearity(self):
        s = self._state([], [], [0.0])
        zeta = dual_update_zeta(s, np.array([0.25]))
        assert zeta[0] == pytest.approx(1.0)
        s.zeta = zeta
        zeta2 = dual_update_zeta(s, np.array([0.25]))
        assert zeta2[0] == pytest.approx(2.0)

    def test_substitution_identity(self):
        # Slack prox followed by the eta ascent collapses to a closed form.
        rng = np.random.default_rng(11)
        for _ in range(1000):
            p = rng.uniform(-3, 3, size=4)
            eta = rng.uniform(-3, 3, size=4)
            rho = rng.uniform(0.1, 8.0)
            v = slack_update(p, eta, rho)
            state = SlackState(v, eta, np.zeros(0), rho, 1.0)
            eta_new = dual_update_eta(state, p)
            expected = np.maximum(0.0, eta + rho * p)
            assert np.abs(eta_new - expected).max() < 1e-12


class TestAugmentedLagrangian:
    def test_feasible_zero(self):
        band = TimedBand(Pose2(0, 0, 0), (Pose2(0.1, 0, 0),), (0.5,))
        pfac = ConstFactor((-0.5,), FactorKind.INEQUALITY)
        state = SlackState(np.array([0.5]), np.zeros(1), np.zeros(0), 2.0, 4.0)
        assert augmented_lagrangian_value(band, [pfac], state) == pytest.approx(0.0)

    def test_slack_cancels_constraint(self):
        band = TimedBand(Pose2(0, 0, 0), (Pose2(0.1, 0, 0),), (0.5,))
        pfac = ConstFactor((-0.5,), FactorKind.INEQUALITY)
        state = SlackState(np.array([0.5]), np.array([3.0]), np.zeros(0), 2.0, 4.0)
        assert augmented_lagrangian_value(band, [pfac], state) == pytest.approx(0.0)

    def test_term_by_term_hand_value(self):
        band = TimedBand(Pose2(0, 0, 0), (Pose2(0.1, 0, 0),), (0.5,))
        factors = [
            ConstFactor((1.0,), FactorKind.OBJECTIVE),     # F = 1
            ConstFactor((0.2,), FactorKind.INEQUALITY),    # p = 0.2
            ConstFactor((0.1,), FactorKind.EQUALITY),      # c = 0.1
        ]
        state = SlackState(np.array([0.0]), np.array([1.0]), np.array([0.5]), 2.0, 4.0)
        # 1 + 0.2 + 0.04 + 0.05 + 0.02 = 1.31
        L = augmented_lagrangian_value(band, factors, state)
        assert L == pytest.approx(1.31, abs=1e-12)

    def test_dimension_mismatch_rejected(self):
        band = TimedBand(Pose2(0, 0, 0), (Pose2(0.1, 0, 0),), (0.5,))
        pfac = ConstFactor((0.2,), FactorKind.INEQUALITY)
        state = SlackState(np.zeros(2), np.zeros(2), np.zeros(0), 1.0, 1.0)
        with pytest.raises(ValueError):
            augmented_lagrangian_value(band, [pfac], state)

    def test_initialization_matches_penalty_method(self):
        # With eta = zeta = 0 and v = max(0, -p), L is the plain penalty value.
        rng = np.random.default_rng(31)
        for _ in range(20):
            band = random_band(rng, n=5)
            factors = []
            for i in range(5):
                factors.append(kinematics_factor(i))
                factors.append(velocity_factor(i, LIMITS))
            rho, mu = rng.uniform(0.5, 15.0, size=2)
            state = init_state(band, factors, rho, mu)
            L = augmented_lagrangian_value(band, factors, state)
            c, p = constraint_rows(factors, band)
            penalty = (
                0.5 * mu * float(c @ c)
                + 0.5 * rho * float(np.maximum(p, 0.0) @ np.maximum(p, 0.0))
            )
            assert L == pytest.approx(penalty, abs=1e-10)


def _coord_problem(x0: float, objective_target: float, kind: FactorKind,
                   constraint_target: float):
    """1-D problem on coordinate 0: min (x - t)^2 s.t. x (<=|==) s."""
    band0 = TimedBand(Pose2(0, 0, 0), (Pose2(x0, 0, 0),), (0.5,))
    obj = LinearCoordFactor(((1.0, 0.0, 0.0),), (objective_target,), (0,),
                            FactorKind.OBJECTIVE)
    con = LinearCoordFactor(((1.0, 0.0, 0.0),), (constraint_target,), (0,), kind)
    return band0, [obj, con]


TIGHT = VSConfig(eps_primal=1e-6, eps_dual=1e-6, max_outer=60)


class TestOuterSolve:
    def test_feasible_stationary_start_terminates_fast(self):
        band0, factors = _coord_problem(0.5, 0.5, FactorKind.INEQUALITY, 1.0)
        band, state, trace = outer_solve(band0, factors, None, VSConfig())
        assert trace.status == "converged"
        assert len(trace.records) == 1
        assert band.poses[0].x == pytest.approx(0.5, abs=1e-6)

    def test_inequality_kkt(self):
        # min (x-2)^2 s.t. x <= 1: x* = 1, multiplier 2.
        band0, factors = _coord_problem(2.0, 2.0, FactorKind.INEQUALITY, 1.0)
        band, state, trace = outer_solve(band0, factors, None, TIGHT)
        assert trace.status == "converged"
        assert band.poses[0].x == pytest.approx(1.0, abs=1e-4)
        assert state.eta[0] == pytest.approx(2.0, abs=1e-3)

    def test_equality_kkt(self):
        # min x^2 s.t. x = 1: x* = 1, multiplier -2.
        band0, factors = _coord_problem(0.0, 0.0, FactorKind.EQUALITY, 1.0)
        band, state, trace = outer_solve(band0, factors, None, TIGHT)
        assert trace.status == "converged"
        assert band.poses[0].x == pytest.approx(1.0, abs=1e-4)
        assert state.zeta[0] == pytest.approx(-2.0, abs=1e-3)

    def test_analytic_trace_monotone(self):
        band0, factors = _coord_problem(2.0, 2.0, FactorKind.INEQUALITY, 1.0)
        _, _, trace = outer_solve(band0, factors, None, TIGHT)
        report = monotonicity_check(trace, 1e-8)
        assert report.passed

    def test_deterministic_traces(self):
        band0, factors = _coord_problem(2.0, 2.0, FactorKind.INEQUALITY, 1.0)
        _, _, t1 = outer_solve(band0, factors, None, TIGHT)
        _, _, t2 = outer_solve(band0, factors, None, TIGHT)
        assert [r.L for r in t1.records] == [r.L for r in t2.records]
        assert [r.x_change for r in t1.records] == [r.x_change for r in t2.records]
        assert t1.L_init == t2.L_init

    def test_slack_nonnegative_throughout(self):
        rng = np.random.default_rng(3)
        band0 = random_band(rng, n=4)
        factors = []
        for i in range(4):
            factors.append(kinematics_factor(i))
            factors.append(velocity_factor(i, LIMITS))
        band, state, trace = outer_solve(band0, factors, LIMITS, VSConfig(max_outer=5))
        assert state.v.min() >= 0.0


class TestMonotonicityCheck:
    def _trace(self, L_init, ls, capped=None):
        trace = OuterTrace(L_init=L_init)
        for k, l in enumerate(ls):
            trace.records.append(OuterRecord(
                n=k + 1, L=l, F=0.0, primal_eq=0.0, primal_ineq=0.0, x_change=0.0,
                inner_iterations=1, inner_termination="gradient",
                inner_capped=bool(capped and k in capped), wall_time=0.0,
            ))
        return trace

    def test_strictly_decreasing_passes(self):
        report = monotonicity_check(self._trace(5.0, [4.0, 3.0, 2.5]), 1e-8)
        assert report.passed
        assert report.violations == []

    def test_small_increase_fails(self):
        report = monotonicity_check(self._trace(5.0, [4.0, 4.0 + 1e-6]), 1e-8)
        assert not report.passed
        assert len(report.violations) == 1
        assert report.violations[0][1] == pytest.approx(1e-6)

    def test_flagged_records_bridge(self):
        # Record 2 is capped: compare record 3 against record 1 instead.
        report = monotonicity_check(
            self._trace(5.0, [4.0, 7.0, 3.9], capped={1}), 1e-8
        )
        assert report.passed
        assert report.n_flagged == 1

    def test_needs_two_records(self):
        with pytest.raises(ValueError):
            monotonicity_check(self._trace(5.0, []), 1e-8)


class TestKKTResiduals:
    def test_violated_equality(self):
        band = TimedBand(Pose2(0, 0, 0), (Pose2(0.1, 0, 0),), (0.5,))
        factors = [ConstFactor((0.2,), FactorKind.EQUALITY)]
        state = SlackState(np.zeros(0), np.zeros(0), np.zeros(1), 1.0, 1.0)
        res = kkt_residuals(band, factors, state)
        assert res.primal_eq == pytest.approx(0.2)
        assert res.primal_ineq == 0.0

    def test_interior_point_zero_measures(self):
        band = TimedBand(Pose2(0, 0, 0), (Pose2(0.1, 0, 0),), (0.5,))
        factors = [ConstFactor((-0.4,), FactorKind.INEQUALITY)]
        state = SlackState(np.array([0.4]), np.zeros(1), np.zeros(0), 1.0, 1.0)
        res = kkt_residuals(band, factors, state)
        assert res.primal_ineq == 0.0
        assert res.comp_slack == 0.0
        assert res.dual_sign == 0.0

    def test_kkt_point_of_analytic_problem(self):
        band0, factors = _coord_problem(2.0, 2.0, FactorKind.INEQUALITY, 1.0)
        band, state, _ = outer_solve(band0, factors, None, TIGHT)
        res = kkt_residuals(
            band, [f for f in factors if f.kind != FactorKind.OBJECTIVE], state
        )
        assert res.max_residual() < 1e-3


class TestConstraintJacobianMargins:
    def test_singular_values_of_constraint_jacobians(self):
        from tebvs.vsloop import constraint_jacobian_margins

        rng = np.random.default_rng(2)
        band = random_band(rng, n=4)
        factors = [kinematics_factor(i) for i in range(4)]
        factors += [velocity_factor(i, LIMITS) for i in range(4)]
        e_c, e_p = constraint_jacobian_margins(band, factors)
        assert e_c >= 0.0
        assert e_p >= 0.0
        # Oracle: dense SVD of the stacked Jacobians.
        from tebvs.factors import stack_constraints

        stacked = stack_constraints(factors, band)
        sv_c = np.linalg.svd(stacked.Jc.toarray(), compute_uv=False).min()
        assert e_c == pytest.approx(float(sv_c), rel=1e-10)


class TestTraceSerialization:
    def test_jsonlines_roundtrip_fields(self):
        import json

        band0, factors = _coord_problem(2.0, 2.0, FactorKind.INEQUALITY, 1.0)
        _, _, trace = outer_solve(band0, factors, None, VSConfig())
        text = trace.to_jsonlines()
        lines = text.strip().split("\n")
        head = json.loads(lines[0])
        assert head["status"] == "converged"
        rec = json.loads(lines[1])
        assert rec["n"] == 1
        assert set(rec) == {
            "n", "L", "F", "primal_eq", "primal_ineq", "x_change",
            "inner_iterations", "inner_termination", "inner_capped", "wall_time",
        }
