import math

import numpy as np
import pytest
import scipy.sparse as sp

from tebvs.factors import (
    FactorKind,
    kinematics_factor,
    time_factor,
    velocity_factor,
)
from tebvs.nlls import (
    LMConfig,
    SubproblemSpec,
    Variables,
    linearize,
    lm_solve,
    sparse_normal_solve,
    subproblem_cost,
)

from helpers import LIMITS, ConstFactor, LinearCoordFactor, random_band, straight_band


def _empty_spec(objective, constraints, band, v=None, eta=None, zeta=None,
                rho=1.0, mu=1.0):
    n_ineq = sum(f.dim for f in constraints if f.kind == FactorKind.INEQUALITY)
    n_eq = sum(f.dim for f in constraints if f.kind == FactorKind.EQUALITY)
    return SubproblemSpec(
        objective, constraints,
        np.zeros(n_ineq) if v is None else np.asarray(v, dtype=float),
        np.zeros(n_ineq) if eta is None else np.asarray(eta, dtype=float),
        np.zeros(n_eq) if zeta is None else np.asarray(zeta, dtype=float),
        rho, mu,
    )


def _random_spec(rng, band, with_objective=True):
    n = band.num_poses
    objective = [time_factor(i, rng.uniform(0.2, 2.0)) for i in range(n)] \
        if with_objective else []
    constraints = []
    for i in range(n):
        constraints.append(kinematics_factor(i))
        constraints.append(velocity_factor(i, LIMITS))
    n_ineq = 2 * n
    n_eq = n
    return SubproblemSpec(
        objective, constraints,
        np.abs(rng.normal(size=n_ineq)),
        rng.normal(size=n_ineq),
        rng.normal(size=n_eq),
        rng.uniform(0.5, 20.0),
        rng.uniform(0.5, 20.0),
    )


class TestSubproblemCost:
    def test_cancelling_slack_gives_zero(self):
        band = straight_band(3)
        constraints = [velocity_factor(i, LIMITS) for i in range(3)]
        from tebvs.factors import constraint_rows

        _, p = constraint_rows(constraints, band)
        spec = _empty_spec([], constraints, band, v=-p, rho=4.0)
        assert subproblem_cost(spec, Variables.from_band(band)) == pytest.approx(0.0, abs=1e-15)

    def test_single_equality_penalty(self):
        band = straight_band(1)
        c = ConstFactor((0.2,), FactorKind.EQUALITY)
        spec = _empty_spec([], [c], band, mu=10.0)
        # mu/2 * 0.04 = 0.2
        assert subproblem_cost(spec, Variables.from_band(band)) == pytest.approx(0.2)

    def test_single_inequality_penalty(self):
        band = straight_band(1)
        pfac = ConstFactor((-1.0,), FactorKind.INEQUALITY)
        spec = _empty_spec([], [pfac], band, v=[0.0], eta=[2.0], rho=4.0)
        # rho/2 * (p + v + eta/rho)^2 = 2 * (-1 + 0.5)^2 = 0.5
        assert subproblem_cost(spec, Variables.from_band(band)) == pytest.approx(0.5)


class TestLinearize:
    def test_cost_residual_consistency_random(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            band = random_band(rng, n=4)
            spec = _random_spec(rng, band)
            vars = Variables.from_band(band)
            cost = subproblem_cost(spec, vars)
            _, r = linearize(spec, vars)
            assert abs(cost - 0.5 * float(r @ r)) < 1e-10 * (1.0 + cost)

    def test_zero_residual_point(self):
        band = straight_band(3)
        constraints = [kinematics_factor(i) for i in range(3)]
        spec = _empty_spec([], constraints, band, mu=3.0)
        _, r = linearize(spec, Variables.from_band(band))
        np.testing.assert_allclose(r, 0.0, atol=1e-14)

    def test_sparsity_limited_to_var_indices(self):
        from tebvs.factors import touched_coords

        rng = np.random.default_rng(5)
        band = random_band(rng, n=5)
        spec = _random_spec(rng, band)
        J, _ = linearize(spec, Variables.from_band(band))
        row = 0
        for f in spec.objective + spec.constraints:
            allowed = set(touched_coords(f))
            for k in range(f.dim):
                cols = J[row + k].nonzero()[1]
                assert set(cols.tolist()) <= allowed
            row += f.dim

    def test_gradient_identity_vs_finite_differences(self):
        rng = np.random.default_rng(8)
        band = random_band(rng, n=4)
        spec = _random_spec(rng, band)
        vars = Variables.from_band(band)
        J, r = linearize(spec, vars)
        grad = np.asarray(J.T @ r).ravel()
        h = 1e-6
        fd = np.zeros_like(grad)
        for j in range(vars.values.size):
            vp, vm = vars.values.copy(), vars.values.copy()
            vp[j] += h
            vm[j] -= h
            fd[j] = (
                subproblem_cost(spec, Variables(band.start, vp))
                - subproblem_cost(spec, Variables(band.start, vm))
            ) / (2 * h)
        scale = max(1.0, np.abs(fd).max())
        assert np.abs(grad - fd).max() / scale < 1e-5


class TestSparseNormalSolve:
    def test_identity(self):
        J = sp.identity(4, format="csr")
        b = np.array([1.0, -2.0, 3.0, 0.5])
        delta = sparse_normal_solve(J, b, 0.0)
        np.testing.assert_allclose(delta, -b, atol=1e-9)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            n, m = 40, 70
            dense = np.zeros((m, n))
            for i in range(m):
                cols = rng.choice(n, size=3, replace=False)
                dense[i, cols] = rng.normal(size=3)
            J = sp.csr_matrix(dense)
            r = rng.normal(size=m)
            lam = rng.uniform(0.0, 0.1)
            delta = sparse_normal_solve(J, r, lam)
            H = dense.T @ dense
            M = H + lam * np.diag(np.diag(H)) + 1e-12 * np.eye(n)
            oracle = np.linalg.solve(M, -dense.T @ r)
            scale = max(1.0, np.abs(oracle).max())
            assert np.abs(delta - oracle).max() / scale < 1e-8

    def test_damping_limit(self):
        J = sp.identity(3, format="csr")
        b = np.array([1.0, 2.0, 3.0])
        norms = [
            float(np.linalg.norm(sparse_normal_solve(J, b, lam)))
            for lam in (0.0, 1.0, 10.0, 1e3, 1e6, 1e9)
        ]
        assert all(a >= b_ for a, b_ in zip(norms, norms[1:]))
        assert norms[-1] < 1e-8

    def test_negative_damping_rejected(self):
        with pytest.raises(ValueError):
            sparse_normal_solve(sp.identity(2, format="csr"), np.ones(2), -1.0)


def _linear_spec_near(band, rng):
    """Linear factors whose optimum sits near the current band coordinates."""
    n_coords = 4 * band.num_poses
    vars0 = Variables.from_band(band)
    target = vars0.values + rng.uniform(-0.05, 0.05, size=n_coords)
    factors = []
    n_blocks = 2 * band.num_poses
    for _ in range(6):
        blocks = tuple(sorted(rng.choice(n_blocks, size=2, replace=False).tolist()))
        cols = []
        for b in blocks:
            from tebvs.factors import block_coords

            cols.extend(block_coords(b))
        A = rng.normal(size=(2, len(cols)))
        b_vec = A @ target[cols]
        factors.append(LinearCoordFactor(
            tuple(map(tuple, A)), tuple(b_vec), blocks, FactorKind.OBJECTIVE
        ))
    return factors, target


class TestLMSolve:
    def test_stationary_start_returns_immediately(self):
        band = straight_band(3)
        factors, target = [], None
        # Exact zero-residual spec: kinematics already satisfied on a straight band.
        spec = _empty_spec([], [kinematics_factor(i) for i in range(3)], band)
        vars0 = Variables.from_band(band)
        result, stats = lm_solve(spec, vars0)
        assert stats.iterations <= 1
        np.testing.assert_allclose(result.values, vars0.values, atol=1e-12)

    def test_linear_spec_matches_dense_oracle(self):
        rng = np.random.default_rng(12)
        for _ in range(8):
            band = random_band(rng, n=5)
            factors, _ = _linear_spec_near(band, rng)
            spec = _empty_spec(factors, [], band)
            vars0 = Variables.from_band(band)
            result, stats = lm_solve(
                spec, vars0, LMConfig(initial_damping=1e-8, gradient_tol=1e-12)
            )
            assert stats.iterations <= 3

            # Dense oracle: assemble rows sqrt(2) * (A x - b), solve normal eqs.
            from tebvs.factors import touched_coords

            n = vars0.values.size
            A_rows, b_rows = [], []
            for f in factors:
                A = np.zeros((f.dim, n))
                A[:, list(touched_coords(f))] = np.asarray(f.A)
                A_rows.append(A)
                b_rows.append(np.asarray(f.b))
            A_full = np.vstack(A_rows)
            b_full = np.concatenate(b_rows)
            oracle, *_ = np.linalg.lstsq(A_full, b_full, rcond=None)
            moved = np.abs(A_full @ result.values - b_full).max()
            assert moved < 1e-8

    def test_descent_on_random_nonconvex_specs(self):
        rng = np.random.default_rng(77)
        for _ in range(50):
            band = random_band(rng, n=4)
            spec = _random_spec(rng, band)
            _, stats = lm_solve(spec, Variables.from_band(band),
                                LMConfig(max_iterations=15))
            trace = stats.cost_trace
            assert all(b <= a + 1e-15 for a, b in zip(trace, trace[1:]))

    def test_registration_order_independence(self):
        rng = np.random.default_rng(4)
        band = random_band(rng, n=4)
        objective = [time_factor(i, 1.0) for i in range(4)]
        constraints = []
        for i in range(4):
            constraints.append(kinematics_factor(i))
            constraints.append(velocity_factor(i, LIMITS))

        def solve(perm_obj, perm_con):
            from tebvs.factors import constraint_rows

            _, p = constraint_rows(perm_con, band)
            n_eq = sum(f.dim for f in perm_con if f.kind == FactorKind.EQUALITY)
            spec = SubproblemSpec(
                perm_obj, perm_con, np.maximum(0.0, -p), np.zeros(p.size),
                np.zeros(n_eq), 10.0, 10.0,
            )
            result, _ = lm_solve(spec, Variables.from_band(band))
            return result.values

        a = solve(objective, constraints)
        b = solve(objective[::-1], constraints[::-1])
        assert np.abs(a - b).max() < 1e-9

    def test_rho_eta_scaling_leaves_linear_minimizer(self):
        # Square full-rank linear p so the penalty minimizer is unique.
        rng = np.random.default_rng(6)
        band = random_band(rng, n=3)
        blocks = (0, 2)
        from tebvs.factors import block_coords

        cols = []
        for b in blocks:
            cols.extend(block_coords(b))
        A = rng.normal(size=(len(cols), len(cols))) + 3.0 * np.eye(len(cols))
        b_vec = A @ Variables.from_band(band).values[cols] + rng.uniform(-0.1, 0.1, len(cols))
        lin = LinearCoordFactor(tuple(map(tuple, A)), tuple(b_vec), blocks,
                                FactorKind.INEQUALITY)
        eta = rng.normal(size=len(cols))
        v = np.abs(rng.normal(size=len(cols)))

        def minimize(rho, eta_):
            spec = SubproblemSpec([], [lin], v, eta_, np.zeros(0), rho, 1.0)
            result, _ = lm_solve(
                spec, Variables.from_band(band),
                LMConfig(initial_damping=1e-8, gradient_tol=1e-12),
            )
            return result.values

        x1 = minimize(2.0, eta)
        x2 = minimize(2.0 * 7.5, eta * 7.5)
        assert np.abs(x1 - x2).max() < 1e-6

    def test_nonfinite_start_aborts(self):
        from tebvs.nlls import NonFiniteCostError

        band = straight_band(2)
        bad = ConstFactor((math.inf,), FactorKind.EQUALITY)
        spec = _empty_spec([], [bad], band)
        with pytest.raises(NonFiniteCostError):
            lm_solve(spec, Variables.from_band(band))

    def test_dt_floor_enforced(self):
        # An objective pulling dt to -1 must stop at the floor.
        band = straight_band(2, dt=0.2)
        blocks = (1,)
        lin = LinearCoordFactor(((1.0,),), (-1.0,), blocks, FactorKind.OBJECTIVE)
        spec = _empty_spec([lin], [], band)
        result, _ = lm_solve(spec, Variables.from_band(band))
        from tebvs.band import DT_FLOOR

        assert result.values[3] >= DT_FLOOR
        assert result.to_band().dts[0] >= DT_FLOOR


class TestDebugDump:
    def test_triplet_dump_roundtrip(self, tmp_path):
        from tebvs.nlls import dump_triplets

        rng = np.random.default_rng(9)
        band = random_band(rng, n=3)
        spec = _random_spec(rng, band)
        J, r = linearize(spec, Variables.from_band(band))
        path = tmp_path / "snapshot.txt"
        dump_triplets(J, r, str(path))
        lines = path.read_text().splitlines()
        m, n, nnz = (int(t) for t in lines[0].split())
        assert (m, n) == J.shape
        assert nnz == J.nnz
        entries = [l.split() for l in lines[1 : 1 + nnz]]
        rebuilt = sp.csr_matrix(
            (
                [float(v) for _, _, v in entries],
                ([int(i) for i, _, _ in entries], [int(j) for _, j, _ in entries]),
            ),
            shape=(m, n),
        )
        assert (rebuilt != J).nnz == 0
        res_lines = [l.split() for l in lines[1 + nnz :]]
        assert all(t[0] == "r" for t in res_lines)
        np.testing.assert_array_equal(
            np.array([float(t[2]) for t in res_lines]), r
        )


class TestVariables:
    def test_band_roundtrip(self):
        rng = np.random.default_rng(2)
        band = random_band(rng, n=6)
        again = Variables.from_band(band).to_band()
        assert again.start == band.start
        for p, q in zip(band.poses, again.poses):
            assert (p.x, p.y, p.beta) == (q.x, q.y, q.beta)
        assert again.dts == band.dts

    def test_heading_rewrapped_after_step(self):
        band = straight_band(2)
        vars0 = Variables.from_band(band)
        delta = np.zeros(8)
        delta[2] = 4 * math.pi + 0.3
        stepped = vars0.with_step(delta)
        assert -math.pi < stepped.values[2] <= math.pi
        assert stepped.values[2] == pytest.approx(0.3)
